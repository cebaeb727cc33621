"""Self-trained MLP classifier; the white-box target of `pgd_classifier`."""

import logging
import math

import numpy as np
from tqdm import tqdm

import tensor_core as tc
from diffusion_engine import TrainingResult
from errors import DimensionError, PreconditionError, TrainingDivergedError
from layers import Adam, all_finite, init_mlp, mlp_forward

logger = logging.getLogger(__name__)


class Classifier:
    kind = "classifier"

    def __init__(self, params, arch):
        self.params = dict(params)
        self.arch = dict(arch)

    @classmethod
    def create(cls, rng, input_dim, n_classes, hidden=128):
        arch = {"input_dim": input_dim, "n_classes": n_classes, "hidden": hidden}
        return cls(init_mlp(rng, "cls", [input_dim, hidden, hidden, n_classes]), arch)

    @property
    def input_dim(self):
        return self.arch["input_dim"]

    @property
    def n_classes(self):
        return self.arch["n_classes"]

    def with_params(self, params):
        return Classifier(params, self.arch)

    def logits(self, x):
        x = tc.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"classifier expects (n, {self.input_dim}), got {x.shape}")
        return mlp_forward(self.params, "cls", x, 3)

    def predict(self, x):
        return np.argmax(self.logits(x).data, axis=1)

    def accuracy(self, x, labels):
        return float(np.mean(self.predict(x) == np.asarray(labels)))

    def to_state(self):
        return self.arch, {k: v.data for k, v in self.params.items()}

    @classmethod
    def from_state(cls, arch, arrays):
        return cls({k: tc.Tensor(v) for k, v in arrays.items()}, arch)


def train_classifier(data, labels, n_classes, cfg, rng, progress=False):
    data = np.asarray(data, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise PreconditionError(f"classifier training needs a non-empty (n, d) dataset, got {data.shape}")
    model = Classifier.create(rng, data.shape[1], n_classes, cfg.hidden)
    names = sorted(model.params)
    params = dict(model.params)
    opt = Adam(cfg.lr)
    curve = []
    n = data.shape[0]
    bs = min(cfg.batch_size, n)
    logger.info("training classifier: %d examples, %d classes, %d steps", n, n_classes, cfg.steps)
    for step in tqdm(range(cfg.steps), desc="train-classifier", disable=not progress, leave=False):
        idx = rng.integers(0, n, size=bs)
        with tc.GradientTape() as tape:
            leaves = [params[k] for k in names]
            tape.watch(*leaves)
            loss = tc.softmax_cross_entropy(model.with_params(params).logits(data[idx]), labels[idx])
        grads = tape.gradient(loss, leaves)
        value = loss.item()
        if not math.isfinite(value) or not all_finite(grads):
            raise TrainingDivergedError(f"classifier training diverged at step {step}", step=step)
        curve.append(value)
        params = opt.step(params, dict(zip(names, grads)))

    trained = model.with_params(params)
    acc = trained.accuracy(data, labels)
    logger.info("classifier training accuracy %.3f", acc)
    return TrainingResult(trained, curve, acc > 0.9)
