import logging
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import zoom

from errors import DatasetFormatError, TruncatedFileError
from tensor_core import RngStream

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SHAPE_NAMES = ("square", "disk", "triangle", "cross", "stripes", "ring")


@dataclass(frozen=True, eq=False)
class Dataset:
    data: np.ndarray
    labels: np.ndarray
    class_count: int

    @property
    def item_shape(self):
        return self.data.shape[1:]

    @property
    def flat(self):
        return self.data.reshape(self.data.shape[0], -1)

    def of_class(self, k):
        return self.data[self.labels == k]

    def __len__(self):
        return self.data.shape[0]


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

def read_idx(path, expected_magic=None):
    """Decode an unsigned-byte IDX file into an array of its declared shape."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Cannot find {path}")
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: header needs 4 bytes, file has {len(raw)}", 4, len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise DatasetFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise DatasetFormatError(f"{path}: only unsigned-byte IDX data is supported (magic 0x{magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header needs {header} bytes, file has {len(raw)}", header, len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims, dtype=np.int64))
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} bytes for shape {dims}, file has {len(raw)}", expected, len(raw)
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected - header, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", 0x0800 | array.ndim))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_idx_dataset(spec):
    images = read_idx(spec.images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(spec.labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    keep = []
    for k in range(spec.class_count):
        idx = np.flatnonzero(labels == k)[: spec.per_class]
        if idx.size == 0:
            raise DatasetFormatError(f"class {k} has no examples in {spec.labels_path}")
        keep.append(idx)
    keep = np.sort(np.concatenate(keep))
    data = images[keep].astype(np.float32)
    if spec.normalization == "unit":
        data = data / np.float32(255.0)
    size = spec.image_size
    if data.shape[1:] != (size, size):
        logger.warning("resizing IDX images from %s to %dx%d", data.shape[1:], size, size)
        data = zoom(data, (1.0, size / data.shape[1], size / data.shape[2]), order=1, grid_mode=True, mode="nearest")
        if spec.normalization == "unit":
            data = np.clip(data, 0.0, 1.0)
    return Dataset(data.astype(np.float32), labels[keep], spec.class_count)


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def make_gaussian_mixture(class_count, per_class, radius=1.0, std=0.1, seed=0):
    """Points around `class_count` means evenly spaced on a circle."""
    rng = RngStream(seed).child("gaussian_mixture")
    angles = 2.0 * np.pi * np.arange(class_count) / class_count
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.repeat(np.arange(class_count), per_class)
    noise = rng.gaussian((labels.size, 2)).data.astype(np.float64)
    data = (means[labels] + std * noise).astype(np.float32)
    return Dataset(data, labels.astype(np.int64), class_count)


def _shape_mask(name, size, cy, cx, r):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if name == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if name == "disk":
        return dy ** 2 + dx ** 2 <= r ** 2
    if name == "triangle":
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2.0)
    if name == "cross":
        return ((np.abs(dy) <= r / 3.0) & (np.abs(dx) <= r)) | ((np.abs(dx) <= r / 3.0) & (np.abs(dy) <= r))
    if name == "stripes":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r) & (np.floor(xx / 2.0) % 2 == 0)
    if name == "ring":
        d2 = dy ** 2 + dx ** 2
        return (d2 <= r ** 2) & (d2 >= (0.55 * r) ** 2)
    raise DatasetFormatError(f"unknown shape {name}")


def make_synthetic_shapes(class_count, per_class, size=16, seed=0):
    """
    One shape family per class, jittered in position and size, with light
    background noise. Values are multiples of 1/255, so the dataset is
    byte-identical for a given seed.
    """
    rng = RngStream(seed).child("synthetic_shapes")
    n = class_count * per_class
    labels = np.repeat(np.arange(class_count), per_class)
    offsets = rng.integers(-2, 3, size=(n, 2))
    radii = rng.integers(size // 5, size // 3 + 1, size=n)
    noise = rng.uniform((n, size, size), 0.0, 0.1).data
    levels = rng.uniform((n,), 0.75, 1.0).data
    centre = (size - 1) / 2.0
    images = np.empty((n, size, size), dtype=np.float32)
    for i in range(n):
        mask = _shape_mask(SHAPE_NAMES[labels[i]], size, centre + offsets[i, 0], centre + offsets[i, 1], radii[i])
        img = np.where(mask, levels[i], noise[i])
        images[i] = np.round(img * 255.0) / 255.0
    return Dataset(images, labels.astype(np.int64), class_count)


def load_dataset(spec):
    if spec.kind == "gaussian_mixture_2d":
        return make_gaussian_mixture(spec.class_count, spec.per_class, spec.mixture_radius, spec.mixture_std, spec.seed)
    if spec.kind == "synthetic_shapes_16x16":
        return make_synthetic_shapes(spec.class_count, spec.per_class, spec.image_size, spec.seed)
    if spec.kind == "idx_images":
        return load_idx_dataset(spec)
    raise DatasetFormatError(f"unknown dataset kind {spec.kind}")


class DatasetCache:
    """Loads each dataset spec once per process."""

    _data = {}

    @classmethod
    def load(cls, spec):
        if spec not in cls._data:
            cls._data[spec] = load_dataset(spec)
            logger.info("loaded dataset %s: %d examples", spec.kind, len(cls._data[spec]))
        return cls._data[spec]

    @classmethod
    def clear(cls):
        cls._data = {}
