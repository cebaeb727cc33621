"""
Bilinear down-then-up resampling.

Stands in for learned super-resolution: it keeps that defense's role of
destroying high-frequency content without a trained SR network.
"""

import numpy as np
from scipy.ndimage import zoom

import tensor_core as tc
from defenses.base import require_images
from errors import ConfigError


def resample(x, factor=2.0):
    if factor < 1:
        raise ConfigError(f"resample factor must be >= 1, got {factor}")
    x = require_images(x, "resample")
    img = x.data.astype(np.float64)
    if factor == 1:
        return tc.Tensor(np.clip(img, 0.0, 1.0))
    n, h, w = img.shape
    small = zoom(img, (1.0, 1.0 / factor, 1.0 / factor), order=1, mode="nearest", grid_mode=True)
    back = zoom(small, (1.0, h / small.shape[1], w / small.shape[2]), order=1, mode="nearest", grid_mode=True)
    return tc.Tensor(np.clip(back[:, :h, :w], 0.0, 1.0))


def run(x, cfg, context=None):
    return resample(x, cfg.factor)
