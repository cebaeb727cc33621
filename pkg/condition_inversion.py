"""
Pseudo-word inversion: learn a condition vector S* that explains a small
image group under a frozen denoiser, and generate from it.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics.pairwise import cosine_similarity
from tqdm import tqdm

import tensor_core as tc
from diffusion_engine import img2img, l_dm, sample
from errors import DimensionError, NumericError, PreconditionError
from layers import Adam

logger = logging.getLogger(__name__)


@dataclass
class ConditionEmbedding:
    vector: np.ndarray
    provenance: str = "inverted"
    loss_curve: list = field(default_factory=list)

    kind = "condition"

    def __post_init__(self):
        self.vector = np.array(self.vector, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(self.vector)):
            raise NumericError("condition embedding has non-finite values")

    @property
    def tensor(self):
        return tc.Tensor(self.vector)

    @property
    def dim(self):
        return self.vector.size

    def to_state(self):
        return {"provenance": self.provenance, "dim": self.dim}, {"vector": self.vector}

    @classmethod
    def from_state(cls, arch, arrays):
        return cls(arrays["vector"], arch.get("provenance", "inverted"))


def class_embedding(model, label):
    return ConditionEmbedding(model.condition_table[int(label)], f"class:{int(label)}")


def nearest_class(model, embedding):
    """Index of the class-table row with the highest cosine similarity."""
    sims = cosine_similarity(embedding.vector[None, :], model.condition_table)
    return int(np.argmax(sims[0]))


def _check_group(model, images):
    images = tc.as_tensor(images)
    if images.ndim != 2 or images.shape[0] == 0:
        raise PreconditionError(f"inversion needs a non-empty (n, d) group, got {images.shape}")
    if images.shape[1] != model.data_dim:
        raise DimensionError(f"group dimension {images.shape[1]} does not match the model ({model.data_dim})")
    return images


def invert(model, sched, images, cfg, rng, progress=False):
    """
    Minimize the group's noise-matching loss over the condition vector only.

    Initialization is a random class-table row plus Gaussian noise of std
    `cfg.init_noise`; each step draws fresh (t, eps) per image.
    """
    images = _check_group(model, images)
    n, dim = images.shape
    start = rng.integers(0, model.n_classes)
    s = tc.Tensor(model.condition_table[start] + cfg.init_noise * rng.gaussian((model.cond_dim,)).data)
    opt = Adam(cfg.lr)
    curve = []
    for step in tqdm(range(cfg.steps), desc="invert", disable=not progress, leave=False):
        t = rng.integers(1, sched.T + 1, size=n)
        eps = rng.gaussian((n, dim))
        with tc.GradientTape() as tape:
            tape.watch(s)
            loss = l_dm(model, images, s, t, eps, sched)
        grad = tape.gradient(loss, s)
        if not np.all(np.isfinite(grad.data)):
            raise NumericError(f"non-finite inversion gradient at step {step}", step=step)
        value = loss.item()
        curve.append(value)
        s = opt.step({"s": s}, {"s": grad})["s"]
        if step % 100 == 0:
            logger.debug("inversion step %d loss %.4f", step, value)
    if curve:
        logger.debug("inversion finished: loss %.4f -> %.4f", curve[0], curve[-1])
    return ConditionEmbedding(s.data, "inverted", curve)


def group_loss(model, sched, images, embedding, rng, draws=100):
    """Mean l_dm of the group under `embedding` over `draws` fresh samples."""
    images = _check_group(model, images)
    n, dim = images.shape
    values = []
    for _ in range(draws):
        t = rng.integers(1, sched.T + 1, size=n)
        values.append(l_dm(model, images, embedding.tensor, t, rng.gaussian((n, dim)), sched).item())
    return float(np.mean(values)) if values else math.nan


def generate_from_inversion(model, sched, s_star, count, rng):
    return sample(model, sched, s_star.tensor, rng, count)


def style_transfer(model, sched, s_star, source, strength, rng):
    return img2img(model, sched, s_star.tensor, source, strength, rng)
