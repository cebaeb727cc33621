"""
Sample-quality measurement over feature embeddings: Fréchet distance and
k-NN manifold precision/recall.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

import tensor_core as tc
from errors import NumericError, PreconditionError, SampleSizeError
from latent_codec import encode

logger = logging.getLogger(__name__)


@dataclass
class FeatureBatch:
    features: np.ndarray
    source: str = "real"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[:, None]
        if not np.all(np.isfinite(feats)):
            raise NumericError(f"{self.source} features contain non-finite values")
        self.features = feats

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def statistics(self):
        if self.n < self.dim + 1:
            raise SampleSizeError(f"{self.source}: {self.n} samples for dimension {self.dim}, need at least {self.dim + 1}")
        mu = self.features.mean(axis=0)
        sigma = np.atleast_2d(np.cov(self.features, rowvar=False, ddof=1))
        return mu, sigma


@dataclass
class MetricReport:
    fid: float
    precision: float
    recall: float
    n_real: int
    n_gen: int
    k: int

    def to_dict(self):
        return asdict(self)


def embed(codec, images, mode="encoder", source="real"):
    """One feature row per image: codec latents, or the raw flattened values."""
    x = tc.as_tensor(images)
    flat = x.data.reshape(x.shape[0], -1)
    if mode == "pixel" or codec is None:
        return FeatureBatch(flat, source)
    return FeatureBatch(encode(codec, flat).data, source)


def _trace_sqrt_product(s1, s2):
    # Tr((s1 s2)^(1/2)) through the symmetric form s1^(1/2) s2 s1^(1/2)
    w, v = linalg.eigh(s1)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    m = root @ s2 @ root
    ev = linalg.eigh((m + m.T) / 2.0, eigvals_only=True)
    return float(np.sum(np.sqrt(np.clip(ev, 0.0, None))))


def frechet(a, b):
    mu_a, s_a = a.statistics()
    mu_b, s_b = b.statistics()
    diff = mu_a - mu_b
    cross = 0.5 * (_trace_sqrt_product(s_a, s_b) + _trace_sqrt_product(s_b, s_a))
    value = float(diff @ diff + np.trace(s_a) + np.trace(s_b) - 2.0 * cross)
    return max(value, 0.0)


def knn_radii(features, k):
    """Distance of every point to its k-th nearest neighbour, itself excluded."""
    d = cdist(features, features)
    return np.sort(d, axis=1)[:, k]


def _coverage(points, reference, radii):
    d = cdist(points, reference)
    return float(np.mean(np.any(d <= radii[None, :], axis=1)))


def precision_recall(real, gen, k=3):
    if k < 1 or k >= min(real.n, gen.n):
        raise PreconditionError(f"k = {k} must lie in [1, min(n_real, n_gen)) = [1, {min(real.n, gen.n)})")
    precision = _coverage(gen.features, real.features, knn_radii(real.features, k))
    recall = _coverage(real.features, gen.features, knn_radii(gen.features, k))
    return precision, recall


def evaluate(real, gen, k=3):
    report = MetricReport(frechet(real, gen), *precision_recall(real, gen, k), real.n, gen.n, k)
    logger.debug("fid %.4f precision %.3f recall %.3f", report.fid, report.precision, report.recall)
    return report
