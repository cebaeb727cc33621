"""
Luminance-only JPEG-like compression: 8x8 block DCT, quantization with the
standard luminance table scaled by quality, dequantization, inverse DCT.

The scaled table stays in floating point with a floor of QUANT_FLOOR, so
quality 100 keeps the reconstruction within one 8-bit level.
"""

import numpy as np
from scipy.fft import dctn, idctn

import tensor_core as tc
from defenses.base import require_images
from errors import ConfigError

BLOCK = 8
QUANT_FLOOR = 0.1

LUMINANCE_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def quantization_table(quality):
    if not 1 <= quality <= 100:
        raise ConfigError(f"quality must lie in 1..100, got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.maximum(LUMINANCE_TABLE * scale / 100.0, QUANT_FLOOR)


def to_blocks(img):
    """(n, H, W) with H, W multiples of 8 -> (n, H/8, W/8, 8, 8)."""
    n, h, w = img.shape
    return img.reshape(n, h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 1, 3, 2, 4)


def from_blocks(blocks):
    n, bh, bw, _, _ = blocks.shape
    return blocks.transpose(0, 1, 3, 2, 4).reshape(n, bh * BLOCK, bw * BLOCK)


def block_dct(img):
    return dctn(to_blocks(img), axes=(-2, -1), norm="ortho")


def block_idct(coeffs):
    return from_blocks(idctn(coeffs, axes=(-2, -1), norm="ortho"))


def jpeg_like(x, quality=75):
    x = require_images(x, "jpeg_like")
    n, h, w = x.shape
    pad_h, pad_w = -h % BLOCK, -w % BLOCK
    img = np.pad(x.data.astype(np.float64) * 255.0 - 128.0, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    table = quantization_table(quality)
    coeffs = np.round(block_dct(img) / table) * table
    out = (block_idct(coeffs)[:, :h, :w] + 128.0) / 255.0
    return tc.Tensor(np.clip(out, 0.0, 1.0))


def run(x, cfg, context=None):
    return jpeg_like(x, cfg.quality)
