"""Defense registry and the context handed to every defense."""

from dataclasses import dataclass

import tensor_core as tc
from errors import ModeError


@dataclass
class DefenseContext:
    model: object = None
    sched: object = None
    space: object = None
    rng: object = None


def require_images(x, name):
    """Pixel defenses work on (n, H, W) grayscale batches only."""
    x = tc.as_tensor(x)
    if x.ndim != 3:
        raise ModeError(f"{name} needs (n, H, W) pixel images, got shape {x.shape}")
    return x


class DefenseFactory:
    """Registry of defenses callable as `fn(x, cfg, context)`."""

    _registry = {}

    @classmethod
    def register(cls, kind, fn):
        cls._registry[kind] = fn

    @classmethod
    def create(cls, kind):
        fn = cls._registry.get(kind)
        if fn is None:
            raise KeyError(f"unknown defense '{kind}'")
        return fn

    @classmethod
    def has(cls, kind):
        return kind in cls._registry

    @classmethod
    def names(cls):
        return sorted(cls._registry)


def no_defense(x, cfg, context=None):
    return tc.as_tensor(x)
