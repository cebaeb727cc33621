"""
Experiment configuration: frozen dataclasses, strict JSON5 loading and the
published schema.

Every field carries its documentation and admissible range in the field
metadata; `from_dict` rejects unknown keys anywhere in the tree and
`config_schema()` renders the same metadata for `main.py schema`.
"""

import hashlib
import json
import os
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace

import json5

from errors import ConfigError


def _f(default, doc, choices=None, low=None, high=None, low_open=False):
    meta = {"doc": doc, "choices": choices, "low": low, "high": high, "low_open": low_open}
    if isinstance(default, (list, dict)) or is_dataclass(default):
        factory = (lambda d=default: type(d)(d)) if not is_dataclass(default) else (lambda d=default: replace(d))
        return field(default_factory=factory, metadata=meta)
    return field(default=default, metadata=meta)


def _check_range(value, meta, path):
    choices = meta.get("choices")
    if choices is not None and value not in choices:
        raise ConfigError(f"{path}: '{value}' is not one of {list(choices)}")
    low, high = meta.get("low"), meta.get("high")
    if low is not None and (value < low or (meta.get("low_open") and value == low)):
        raise ConfigError(f"{path}: {value} is below the allowed range")
    if high is not None and value > high:
        raise ConfigError(f"{path}: {value} is above the allowed range")


class _Section:
    """Checks every field against the range and choices in its metadata."""

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float, str)) and not isinstance(value, bool):
                _check_range(value, f.metadata, f.name)
        self._check()

    def _check(self):
        pass


@dataclass(frozen=True)
class DatasetSpec(_Section):
    kind: str = _f("synthetic_shapes_16x16", "dataset generator or reader",
                   choices=("gaussian_mixture_2d", "synthetic_shapes_16x16", "idx_images"))
    class_count: int = _f(4, "number of classes (labels dense in [0, class_count))", low=1, high=6)
    per_class: int = _f(200, "examples generated per class", low=1)
    seed: int = _f(0, "generator seed for synthetic datasets", low=0)
    normalization: str = _f("unit", "'unit' maps bytes to [0,1]; 'none' keeps raw values",
                            choices=("unit", "none"))
    images_path: str = _f("", "IDX image file (idx_images only)")
    labels_path: str = _f("", "IDX label file (idx_images only)")
    image_size: int = _f(16, "square side images are resized to", low=4)
    mixture_radius: float = _f(1.0, "distance of mixture means from the origin", low=0.0)
    mixture_std: float = _f(0.1, "per-component standard deviation", low=0.0, low_open=True)

    def _check(self):
        if self.kind == "idx_images" and not (self.images_path and self.labels_path):
            raise ConfigError("dataset.images_path and dataset.labels_path are required for idx_images")

    @property
    def is_pixel(self):
        return self.kind != "gaussian_mixture_2d"


@dataclass(frozen=True)
class CodecConfig(_Section):
    latent_dim: int = _f(8, "latent dimension d_z", low=1)
    hidden: int = _f(64, "width of the two hidden layers on each side", low=1)
    steps: int = _f(3000, "optimizer steps", low=0)
    batch_size: int = _f(64, "minibatch size", low=1)
    lr: float = _f(1e-3, "Adam learning rate", low=0.0)
    threshold: float = _f(0.02, "validation reconstruction MSE the codec must reach", low=0.0, low_open=True)
    val_fraction: float = _f(0.1, "held-out fraction used for validation", low=0.0, high=0.5)


@dataclass(frozen=True)
class DiffusionConfig(_Section):
    space: str = _f("latent", "where diffusion runs: codec latents (LDM) or raw data",
                    choices=("latent", "pixel"))
    T: int = _f(100, "number of diffusion steps", low=1)
    beta_start: float = _f(1e-4, "beta_1 of the linear schedule", low=0.0, high=1.0, low_open=True)
    beta_end: float = _f(0.02, "beta_T of the linear schedule", low=0.0, high=1.0, low_open=True)
    hidden: int = _f(128, "hidden width", low=1)
    depth: int = _f(3, "number of hidden layers", low=1)
    time_dim: int = _f(16, "sinusoidal time embedding dimension", low=2)
    cond_dim: int = _f(8, "condition vector dimension d_c", low=1)
    steps: int = _f(4000, "optimizer steps", low=0)
    batch_size: int = _f(128, "minibatch size", low=1)
    lr: float = _f(1e-3, "Adam learning rate", low=0.0)
    p_uncond: float = _f(0.1, "probability of replacing the condition by the null condition", low=0.0, high=1.0)
    loss_threshold: float = _f(0.8, "per-dimension loss the last 10% of steps must stay under", low=0.0,
                               low_open=True)

    def _check(self):
        if self.beta_start > self.beta_end or self.beta_end >= 1.0:
            raise ConfigError("diffusion: need 0 < beta_start <= beta_end < 1")


@dataclass(frozen=True)
class ClassifierConfig(_Section):
    hidden: int = _f(128, "hidden width", low=1)
    steps: int = _f(1500, "optimizer steps", low=0)
    batch_size: int = _f(64, "minibatch size", low=1)
    lr: float = _f(1e-3, "Adam learning rate", low=0.0)


@dataclass(frozen=True)
class InversionConfig(_Section):
    steps: int = _f(1000, "optimization steps for the pseudo-word embedding", low=0)
    lr: float = _f(1e-2, "Adam step length", low=0.0, low_open=True)
    group_size: int = _f(5, "images per group", low=1)
    init_noise: float = _f(0.1, "std of the noise added to the initial class-table entry", low=0.0)


@dataclass(frozen=True)
class AttackConfig(_Section):
    epsilon: float = _f(8 / 255, "total L-infinity budget", low=0.0)
    alpha: float = _f(1 / 255, "per-step length", low=0.0, low_open=True)
    n_steps: int = _f(40, "Monte-Carlo / PGD iterations N", low=1)
    mode: str = _f("latent", "loss computed on E(x) (latent) or on x (pixel)", choices=("latent", "pixel"))
    draws_per_step: int = _f(1, "Monte-Carlo draws averaged per step (1 = single fresh draw)", low=1)
    condition: str = _f("null", "condition used inside the attacked loss", choices=("null", "class"))

    def _check(self):
        if self.epsilon > 0 and self.alpha > self.epsilon:
            raise ConfigError(f"attack: alpha {self.alpha} exceeds epsilon {self.epsilon}")


@dataclass(frozen=True)
class DefenseConfig(_Section):
    kind: str = _f("none", "preprocessing applied to adversarial examples",
                   choices=("none", "jpeg_like", "tvm", "resample", "diffpure"))
    quality: int = _f(75, "JPEG-like quality factor", low=1, high=100)
    tv_lambda: float = _f(0.1, "TV weight", low=0.0)
    tv_iters: int = _f(50, "TV descent iterations", low=0)
    factor: float = _f(2.0, "down-up resampling factor", low=1.0)
    t_star: int = _f(25, "diffpure diffusion depth", low=1)

    @property
    def label(self):
        return self.kind


@dataclass(frozen=True)
class MetricConfig(_Section):
    k: int = _f(3, "neighbourhood size of the k-NN manifold estimator", low=1)
    features: str = _f("encoder", "feature extractor for FID and precision/recall",
                       choices=("encoder", "pixel"))


@dataclass(frozen=True)
class CheckpointPaths(_Section):
    codec: str = _f("", "codec checkpoint (default <output_dir>/checkpoints/codec.ckpt)")
    diffusion: str = _f("", "denoiser checkpoint (default <output_dir>/checkpoints/denoiser.ckpt)")
    classifier: str = _f("", "classifier checkpoint (default <output_dir>/checkpoints/classifier.ckpt)")


@dataclass(frozen=True)
class SweepConfig(_Section):
    parameter: str = _f("", "attack field swept by `sweep`", choices=("", "n_steps", "epsilon"))
    values: tuple = _f((), "values taken by the swept field")


@dataclass(frozen=True)
class ExperimentConfig(_Section):
    name: str = _f("advdm-lab", "run name")
    dataset: DatasetSpec = _f(DatasetSpec(), "dataset")
    codec: CodecConfig = _f(CodecConfig(), "latent codec")
    diffusion: DiffusionConfig = _f(DiffusionConfig(), "denoiser and schedule")
    classifier: ClassifierConfig = _f(ClassifierConfig(), "classifier attacked by pgd_classifier")
    inversion: InversionConfig = _f(InversionConfig(), "condition inversion")
    attack: AttackConfig = _f(AttackConfig(), "budget and iterations shared by all attacks")
    attacks: tuple = _f(("none", "advdm"), "attacks evaluated, one cell each")
    defenses: tuple = _f((DefenseConfig(),), "defenses evaluated, one cell each")
    scenario: str = _f("text2img_inversion", "evaluation scenario",
                       choices=("text2img_inversion", "style_transfer", "img2img"))
    strength: float = _f(0.5, "img2img / style transfer strength", low=0.0, high=1.0, low_open=True)
    groups: int = _f(10, "image groups per cell", low=1)
    samples_per_group: int = _f(50, "generated samples per group", low=1)
    seeds: tuple = _f((0, 1, 2), "run seeds, one cell each")
    output_dir: str = _f("runs/default", "run directory")
    workers: int = _f(1, "bounded worker pool size", low=1)
    train_if_missing: bool = _f(True, "train models whose checkpoints are missing")
    checkpoints: CheckpointPaths = _f(CheckpointPaths(), "checkpoint locations")
    metric: MetricConfig = _f(MetricConfig(), "metrics")
    sweep: SweepConfig = _f(SweepConfig(), "ablation sweep")

    def _check(self):
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.attack.mode != self.diffusion.space:
            raise ConfigError(
                f"attack.mode '{self.attack.mode}' must match diffusion.space '{self.diffusion.space}'"
            )
        if self.diffusion.space == "latent" and not self.dataset.is_pixel:
            raise ConfigError("latent diffusion needs pixel data")
        if "embedding" in self.attacks and not self.dataset.is_pixel:
            raise ConfigError("the embedding attack needs pixel data and a latent codec")
        from attacks import AttackFactory
        from defenses import DefenseFactory

        for name in self.attacks:
            if not AttackFactory.has(name):
                raise ConfigError(f"unknown attack '{name}' (known: {', '.join(AttackFactory.names())})")
        for d in self.defenses:
            if not DefenseFactory.has(d.kind):
                raise ConfigError(f"unknown defense '{d.kind}'")
        for d in self.defenses:
            if d.kind == "diffpure" and d.t_star > self.diffusion.T:
                raise ConfigError(f"defense t_star {d.t_star} exceeds T = {self.diffusion.T}")

    def checkpoint_path(self, which):
        explicit = getattr(self.checkpoints, which)
        if explicit:
            return explicit
        filename = {"codec": "codec.ckpt", "diffusion": "denoiser.ckpt", "classifier": "classifier.ckpt"}[which]
        return os.path.join(self.output_dir, "checkpoints", filename)


# ---------------------------------------------------------------------------
# Strict construction from plain data
# ---------------------------------------------------------------------------

_TUPLE_ITEMS = {
    ("ExperimentConfig", "attacks"): str,
    ("ExperimentConfig", "defenses"): DefenseConfig,
    ("ExperimentConfig", "seeds"): int,
    ("SweepConfig", "values"): float,
}


def _coerce(value, kind, path):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if is_dataclass(kind):
        return build(kind, value, path)
    raise ConfigError(f"{path}: unsupported field type {kind}")


def build(cls, data, path=""):
    """Instantiate dataclass `cls` from `data`, rejecting unknown keys."""
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key '{path + '.' if path else ''}{key}'")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        here = f"{path}.{name}" if path else name
        kind = hints[name]
        if kind is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{here}: expected a list")
            item = _TUPLE_ITEMS[(cls.__name__, name)]
            value = tuple(_coerce(v, item, f"{here}[{i}]") for i, v in enumerate(value))
        else:
            value = _coerce(value, kind, here)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path + ': ' if path else ''}{exc}") from exc


def from_dict(data):
    return build(ExperimentConfig, data)


def load_config(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"Cannot find {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json5.load(f)
    return from_dict(data)


def to_dict(cfg):
    return json.loads(json.dumps(asdict(cfg)))


def config_hash(cfg):
    canonical = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_overrides(cfg, seed=None, output=None):
    if seed is not None:
        cfg = replace(cfg, seeds=(int(seed),))
    if output:
        cfg = replace(cfg, output_dir=output)
    return cfg


def config_schema(cls=ExperimentConfig):
    """Published schema: name -> {type, default, doc, choices, range} (nested)."""
    hints = typing.get_type_hints(cls)
    schema = {}
    for f in fields(cls):
        kind = hints[f.name]
        default = f.default if f.default is not MISSING else f.default_factory()
        entry = {"doc": f.metadata.get("doc", "")}
        if is_dataclass(kind):
            entry["type"] = "object"
            entry["fields"] = config_schema(kind)
        elif kind is tuple:
            item = _TUPLE_ITEMS[(cls.__name__, f.name)]
            entry["type"] = "list"
            entry["items"] = config_schema(item) if is_dataclass(item) else item.__name__
            entry["default"] = [asdict(d) if is_dataclass(d) else d for d in default]
        else:
            entry["type"] = kind.__name__
            entry["default"] = default
            if f.metadata.get("choices"):
                entry["choices"] = list(f.metadata["choices"])
            if f.metadata.get("low") is not None or f.metadata.get("high") is not None:
                entry["range"] = [f.metadata.get("low"), f.metadata.get("high")]
        schema[f.name] = entry
    return schema
