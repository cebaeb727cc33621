"""
Noise schedule, forward process, noise-matching loss, training and the
reverse-chain samplers (ancestral, strength-based img2img, purification).

All samplers run the reverse chain

    x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps(x_t, t, c)) / sqrt(alpha_t) + sqrt(beta_t) * z

with z = 0 at t = 1. Every function that consumes an RngStream is a pure
function of its inputs and the stream state.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

import tensor_core as tc
from errors import ConfigError, DimensionError, PreconditionError, StepError, TrainingDivergedError
from layers import Adam, all_finite, init_mlp, mlp_forward, time_embedding

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0:
            raise ConfigError("schedule needs a non-empty 1-D beta array")
        if not (np.all(beta > 0) and np.all(beta < 1)) or beta[0] > beta[-1]:
            raise ConfigError("schedule needs 0 < beta_1 <= beta_T < 1")
        alpha = 1.0 - beta
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", np.cumprod(alpha))

    @classmethod
    def linear(cls, T=100, beta_start=1e-4, beta_end=0.02):
        return cls(np.linspace(beta_start, beta_end, T))

    @classmethod
    def from_config(cls, cfg):
        return cls.linear(cfg.T, cfg.beta_start, cfg.beta_end)

    @property
    def T(self):
        return self.beta.size

    def check_step(self, t):
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise StepError(f"timestep outside 1..{self.T}: {t.min()}..{t.max()}")
        return t

    def at(self, name, t):
        return getattr(self, name)[np.asarray(t) - 1]

    def to_dict(self):
        return {"kind": "explicit", "T": self.T, "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["beta"], dtype=np.float64))


class Denoiser:
    """
    Epsilon-prediction MLP over [x_t, time embedding, condition].

    The class-condition table is a parameter (`cond_table`, one row per
    class); the null condition is the zero vector.
    """

    kind = "denoiser"

    def __init__(self, params, arch):
        self.params = dict(params)
        self.arch = dict(arch)

    @classmethod
    def create(cls, rng, data_dim, n_classes, hidden=128, depth=3, time_dim=16, cond_dim=8):
        arch = {
            "data_dim": data_dim, "n_classes": n_classes, "hidden": hidden,
            "depth": depth, "time_dim": time_dim, "cond_dim": cond_dim,
        }
        sizes = [data_dim + time_dim + cond_dim] + [hidden] * depth + [data_dim]
        params = init_mlp(rng, "net", sizes, out_gain=0.1)
        params["cond_table"] = rng.gaussian((n_classes, cond_dim))
        return cls(params, arch)

    @classmethod
    def from_config(cls, rng, cfg, data_dim, n_classes):
        return cls.create(rng, data_dim, n_classes, cfg.hidden, cfg.depth, cfg.time_dim, cfg.cond_dim)

    @property
    def data_dim(self):
        return self.arch["data_dim"]

    @property
    def cond_dim(self):
        return self.arch["cond_dim"]

    @property
    def n_classes(self):
        return self.arch["n_classes"]

    @property
    def condition_table(self):
        return self.params["cond_table"].data

    def with_params(self, params):
        return Denoiser(params, self.arch)

    def null_condition(self):
        return tc.zeros((self.cond_dim,))

    def class_condition(self, labels):
        return tc.gather_rows(self.params["cond_table"], labels)

    def __call__(self, x_t, t, c=None):
        if x_t.ndim != 2 or x_t.shape[1] != self.data_dim:
            raise DimensionError(f"denoiser expects (n, {self.data_dim}), got {x_t.shape}")
        n = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t), (n,))
        c = self.null_condition() if c is None else c
        if c.shape[-1] != self.cond_dim:
            raise DimensionError(f"condition has dimension {c.shape[-1]}, expected {self.cond_dim}")
        if c.ndim == 1:
            c = tc.broadcast_to(c, (n, self.cond_dim))
        h = tc.concat([x_t, time_embedding(t, self.arch["time_dim"]), c], axis=1)
        return mlp_forward(self.params, "net", h, self.arch["depth"] + 1)

    def to_state(self):
        return self.arch, {k: v.data for k, v in self.params.items()}

    @classmethod
    def from_state(cls, arch, arrays):
        return cls({k: tc.Tensor(v) for k, v in arrays.items()}, arch)


@dataclass
class TrainingResult:
    model: object
    loss_curve: list
    converged: bool
    val_error: float = None


def _batched(x):
    x = tc.as_tensor(x)
    return (tc.reshape(x, (1, x.shape[0])), True) if x.ndim == 1 else (x, False)


def forward_diffuse(x0, t, eps, sched):
    """sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps, differentiable in x0."""
    x0 = tc.as_tensor(x0)
    eps = tc.as_tensor(eps)
    if eps.shape != x0.shape:
        raise DimensionError(f"noise shape {eps.shape} differs from input shape {x0.shape}")
    t = sched.check_step(t)
    ab = sched.at("alpha_bar", t)
    if x0.ndim == 2 and np.ndim(ab) == 1:
        ab = ab[:, None]
    return tc.add(tc.mul(x0, np.sqrt(ab)), tc.mul(eps, np.sqrt(1.0 - ab)))


def l_dm(model, x0, c, t, eps, sched):
    """Batch mean of ||eps - eps_theta(x_t, t, c)||^2 at the given draw."""
    x0, _ = _batched(x0)
    eps, _ = _batched(eps)
    x_t = forward_diffuse(x0, t, eps, sched)
    n = x0.shape[0]
    pred = model(x_t, np.broadcast_to(np.asarray(t), (n,)), c)
    err = tc.sum(tc.square(tc.sub(eps, pred)), axis=1)
    return tc.mean(err)


def train_denoiser(model, data, labels, sched, cfg, rng, progress=False):
    """
    Adam on l_dm over random minibatches; the condition of each example is
    its class-table row, replaced by the null condition with probability
    `cfg.p_uncond`.
    """
    data = np.asarray(data, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if data.shape[0] == 0:
        raise PreconditionError("cannot train on an empty dataset")
    if data.ndim != 2 or data.shape[1] != model.data_dim:
        raise DimensionError(f"training data {data.shape} does not match model dimension {model.data_dim}")
    if labels.size and labels.max() >= model.n_classes:
        raise PreconditionError(f"label {labels.max()} exceeds the condition table ({model.n_classes} classes)")

    names = sorted(model.params)
    params = dict(model.params)
    opt = Adam(cfg.lr)
    curve = []
    n, dim = data.shape
    bs = min(cfg.batch_size, n)
    logger.info("training denoiser: %d examples, dim %d, %d steps", n, dim, cfg.steps)
    for step in tqdm(range(cfg.steps), desc="train-diffusion", disable=not progress, leave=False):
        idx = rng.integers(0, n, size=bs)
        t = rng.integers(1, sched.T + 1, size=bs)
        eps = rng.gaussian((bs, dim))
        keep = (rng.uniform((bs,)).data >= cfg.p_uncond).astype(np.float32)[:, None]
        with tc.GradientTape() as tape:
            leaves = [params[k] for k in names]
            tape.watch(*leaves)
            current = model.with_params(params)
            c = tc.mul(current.class_condition(labels[idx]), keep)
            loss = l_dm(current, data[idx], c, t, eps, sched)
        grads = tape.gradient(loss, leaves)
        value = loss.item()
        if not math.isfinite(value) or not all_finite(grads):
            raise TrainingDivergedError(f"denoiser training diverged at step {step}", step=step)
        curve.append(value)
        params = opt.step(params, dict(zip(names, grads)))

    trained = model.with_params(params)
    tail = curve[-max(1, len(curve) // 10):]
    converged = bool(curve) and float(np.mean(tail)) / dim < cfg.loss_threshold
    if curve:
        logger.info("denoiser loss %.4f -> %.4f", curve[0], float(np.mean(tail)))
    if not converged:
        logger.warning("denoiser did not reach the per-dimension loss threshold %.3f", cfg.loss_threshold)
    return TrainingResult(trained, curve, converged)


def _reverse_chain(model, sched, x, start, c, rng):
    x = x.data.astype(np.float32)
    n = x.shape[0]
    for t in range(start, 0, -1):
        eps_hat = model(tc.Tensor(x), np.full(n, t), c).data
        beta = sched.beta[t - 1]
        coef = beta / math.sqrt(1.0 - sched.alpha_bar[t - 1])
        mean = (x - coef * eps_hat) / math.sqrt(sched.alpha[t - 1])
        if t > 1:
            x = mean + math.sqrt(beta) * rng.gaussian(x.shape).data
        else:
            x = mean
        x = x.astype(np.float32)
    return tc.Tensor(x)


def sample(model, sched, c, rng, count):
    """Ancestral samples (count, data_dim) conditioned on `c` (None = null)."""
    x_T = rng.gaussian((count, model.data_dim))
    return _reverse_chain(model, sched, x_T, sched.T, c, rng)


def strength_to_step(strength, T):
    if not 0.0 < strength <= 1.0:
        raise ConfigError(f"strength must lie in (0, 1], got {strength}")
    return max(1, min(T, int(math.floor(strength * T + 0.5))))


def img2img(model, sched, c, source, strength, rng):
    """Diffuse `source` to s = round(strength * T) and denoise from s under `c`."""
    s = strength_to_step(strength, sched.T)
    source, _ = _batched(source)
    x_s = forward_diffuse(source, s, rng.gaussian(source.shape), sched)
    return _reverse_chain(model, sched, x_s, s, c, rng)


def diffpure(model, sched, x, t_star, rng):
    """Forward-diffuse to t_star, then run the unconditional chain back to 0."""
    sched.check_step(t_star)
    x, _ = _batched(x)
    x_t = forward_diffuse(x, int(t_star), rng.gaussian(x.shape), sched)
    return _reverse_chain(model, sched, x_t, int(t_star), None, rng)
