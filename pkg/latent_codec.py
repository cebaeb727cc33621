"""
Small deterministic autoencoder defining the latent space of the LDM mode,
plus `ModelSpace`, the adapter between data and the space diffusion runs in.
"""

import logging
import math

import numpy as np
from tqdm import tqdm

import tensor_core as tc
from diffusion_engine import TrainingResult
from errors import DimensionError, PreconditionError, TrainingDivergedError
from layers import Adam, all_finite, init_mlp, mlp_forward

logger = logging.getLogger(__name__)

# max |d silu / dx|
SILU_SLOPE = 1.0998


class LatentCodec:
    kind = "codec"

    def __init__(self, params, arch, latent_scale=1.0):
        self.params = dict(params)
        self.arch = dict(arch)
        self.latent_scale = float(latent_scale)

    @classmethod
    def create(cls, rng, input_dim, latent_dim=8, hidden=64, pixel=True):
        arch = {"input_dim": input_dim, "latent_dim": latent_dim, "hidden": hidden, "pixel": bool(pixel)}
        params = init_mlp(rng, "enc", [input_dim, hidden, hidden, latent_dim])
        params.update(init_mlp(rng, "dec", [latent_dim, hidden, hidden, input_dim]))
        return cls(params, arch)

    @property
    def input_dim(self):
        return self.arch["input_dim"]

    @property
    def latent_dim(self):
        return self.arch["latent_dim"]

    def with_params(self, params, latent_scale=None):
        return LatentCodec(params, self.arch, self.latent_scale if latent_scale is None else latent_scale)

    def encode_raw(self, x):
        return mlp_forward(self.params, "enc", x, 3)

    def decode_raw(self, z):
        final = tc.sigmoid if self.arch["pixel"] else None
        return mlp_forward(self.params, "dec", z, 3, final=final)

    def lipschitz_bound(self):
        """Upper bound on the Lipschitz constant of `encode`."""
        bound = self.latent_scale
        for i in range(3):
            bound *= float(np.linalg.norm(self.params[f"enc{i}.w"].data.astype(np.float64), 2))
        return bound * SILU_SLOPE ** 2

    def to_state(self):
        arch = dict(self.arch, latent_scale=self.latent_scale)
        return arch, {k: v.data for k, v in self.params.items()}

    @classmethod
    def from_state(cls, arch, arrays):
        arch = dict(arch)
        scale = arch.pop("latent_scale", 1.0)
        return cls({k: tc.Tensor(v) for k, v in arrays.items()}, arch, scale)


def _check_input(codec, x, dim, name):
    x = tc.as_tensor(x)
    if x.ndim not in (1, 2) or x.shape[-1] != dim:
        raise DimensionError(f"{name} expects (..., {dim}), got {x.shape}")
    return x


def encode(codec, x):
    x = _check_input(codec, x, codec.input_dim, "encode")
    return tc.mul(codec.encode_raw(x), codec.latent_scale)


def decode(codec, z):
    z = _check_input(codec, z, codec.latent_dim, "decode")
    return codec.decode_raw(tc.mul(z, 1.0 / codec.latent_scale))


def reconstruction_error(codec, data):
    data = tc.as_tensor(data)
    if data.shape[0] == 0:
        return float("nan")
    out = codec.decode_raw(codec.encode_raw(data))
    return float(np.mean((out.data - data.data) ** 2))


def train_codec(data, cfg, rng, pixel=True, progress=False):
    """
    Fit encoder and decoder on the mean squared reconstruction error.

    Returns a TrainingResult whose `converged` says whether the validation
    error went under `cfg.threshold`; the validation error is on
    `result.val_error`.
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2 or data.shape[0] == 0:
        raise PreconditionError(f"codec training needs a non-empty (n, d) dataset, got {data.shape}")
    n, dim = data.shape
    order = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n > 1 else 0
    val, train = data[order[:n_val]], data[order[n_val:]]
    if n_val == 0:
        val = train

    codec = LatentCodec.create(rng, dim, cfg.latent_dim, cfg.hidden, pixel=pixel)
    names = sorted(codec.params)
    params = dict(codec.params)
    opt = Adam(cfg.lr)
    curve = []
    bs = min(cfg.batch_size, train.shape[0])
    logger.info("training codec: %d examples, %d -> %d, %d steps", n, dim, cfg.latent_dim, cfg.steps)
    for step in tqdm(range(cfg.steps), desc="train-codec", disable=not progress, leave=False):
        x = tc.Tensor(train[rng.integers(0, train.shape[0], size=bs)])
        with tc.GradientTape() as tape:
            leaves = [params[k] for k in names]
            tape.watch(*leaves)
            current = codec.with_params(params)
            loss = tc.mean(tc.square(tc.sub(current.decode_raw(current.encode_raw(x)), x)))
        grads = tape.gradient(loss, leaves)
        value = loss.item()
        if not math.isfinite(value) or not all_finite(grads):
            raise TrainingDivergedError(f"codec training diverged at step {step}", step=step)
        curve.append(value)
        params = opt.step(params, dict(zip(names, grads)))

    trained = codec.with_params(params)
    latents = trained.encode_raw(tc.Tensor(train)).data
    spread = float(np.std(latents))
    trained = trained.with_params(params, latent_scale=1.0 / spread if spread > 0 else 1.0)
    val_error = reconstruction_error(trained, val)
    converged = val_error < cfg.threshold
    logger.info("codec validation MSE %.5f (latent scale %.3f)", val_error, trained.latent_scale)
    if not converged:
        logger.warning("codec validation MSE %.5f above threshold %.5f", val_error, cfg.threshold)
    return TrainingResult(trained, curve, converged, val_error=val_error)


class ModelSpace:
    """
    Maps data batches to the vectors diffusion runs on and back.

    Pixel mode flattens images (points pass through); latent mode encodes
    the flattened image with the codec. `to_model` is differentiable, so
    attacks in latent mode reach pixel space through the encoder.
    """

    def __init__(self, mode, item_shape, codec=None, valid_range=(0.0, 1.0)):
        if mode == "latent" and codec is None:
            raise PreconditionError("latent mode needs a trained codec")
        self.mode = mode
        self.item_shape = tuple(item_shape)
        self.codec = codec
        self.valid_range = valid_range

    @classmethod
    def for_config(cls, cfg, item_shape, codec=None):
        valid = (0.0, 1.0) if cfg.dataset.is_pixel and cfg.dataset.normalization == "unit" else None
        return cls(cfg.diffusion.space, item_shape, codec if cfg.diffusion.space == "latent" else None, valid)

    @property
    def flat_dim(self):
        return int(np.prod(self.item_shape))

    @property
    def data_dim(self):
        return self.codec.latent_dim if self.mode == "latent" else self.flat_dim

    def flatten(self, x):
        x = tc.as_tensor(x)
        return tc.reshape(x, (x.shape[0], self.flat_dim))

    def to_model(self, x):
        flat = self.flatten(x)
        return encode(self.codec, flat) if self.mode == "latent" else flat

    def to_data(self, z):
        z = tc.as_tensor(z)
        out = decode(self.codec, z).data if self.mode == "latent" else z.data
        out = self.clamp(out)
        return tc.Tensor(out.reshape((z.shape[0],) + self.item_shape))

    def clamp(self, x):
        if self.valid_range is None:
            return x
        return np.clip(x, *self.valid_range)
