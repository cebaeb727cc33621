"""
Binary checkpoints shared by every trained object.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON
header, then the float32 little-endian payload. The header records the
format version, the object kind and architecture, an optional noise
schedule, free-form metadata, one (name, shape, offset, nbytes) entry per
array and a SHA-256 over the header (digest field excluded) and the
payload, so a corrupted byte anywhere past the length prefix is caught.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from classifier import Classifier
from condition_inversion import ConditionEmbedding
from diffusion_engine import Denoiser, DiffusionSchedule
from errors import CheckpointError, HashMismatchError, TruncatedFileError, VersionMismatchError
from latent_codec import LatentCodec

logger = logging.getLogger(__name__)

MAGIC = b"DMLABCK1"
FORMAT_VERSION = 2
DIGEST_KEY = "content_sha256"
_PREFIX = len(MAGIC) + 4

KINDS = {cls.kind: cls for cls in (Denoiser, LatentCodec, Classifier, ConditionEmbedding)}


@dataclass
class LoadedCheckpoint:
    model: object
    schedule: object = None
    metadata: dict = field(default_factory=dict)


def content_digest(header, payload):
    body = {k: v for k, v in header.items() if k != DIGEST_KEY}
    h = hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8"))
    h.update(payload)
    return h.hexdigest()


def file_hash(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def save_checkpoint(path, model, schedule=None, metadata=None):
    """Write `model` (and optionally its schedule); returns the file's SHA-256."""
    arch, arrays = model.to_state()
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "arch": arch,
        "schedule": schedule.to_dict() if schedule is not None else None,
        "metadata": metadata or {},
        "arrays": entries,
    }
    header[DIGEST_KEY] = content_digest(header, payload)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(payload)
    os.replace(tmp, path)
    logger.info("saved %s checkpoint to %s", model.kind, path)
    return file_hash(path)


def load_checkpoint(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"Cannot find {path}")
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _PREFIX:
        raise TruncatedFileError(f"{path}: expected at least {_PREFIX} bytes, file has {len(raw)}", _PREFIX, len(raw))
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (head_len,) = struct.unpack("<I", raw[len(MAGIC):_PREFIX])
    if len(raw) < _PREFIX + head_len:
        raise TruncatedFileError(f"{path}: header needs {_PREFIX + head_len} bytes, file has {len(raw)}",
                                 _PREFIX + head_len, len(raw))
    try:
        header = json.loads(raw[_PREFIX:_PREFIX + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    payload = raw[_PREFIX + head_len:]
    try:
        expected = sum(int(e["nbytes"]) for e in header["arrays"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed array table") from exc
    if len(payload) < expected:
        total = _PREFIX + head_len + expected
        raise TruncatedFileError(f"{path}: expected {total} bytes, file has {len(raw)}", total, len(raw))
    if content_digest(header, payload) != header.get(DIGEST_KEY):
        raise HashMismatchError(f"{path}: content hash mismatch")

    arrays = {}
    for e in header["arrays"]:
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(e["shape"])
    cls = KINDS.get(header["kind"])
    if cls is None:
        raise CheckpointError(f"{path}: unknown object kind '{header['kind']}'")
    schedule = DiffusionSchedule.from_dict(header["schedule"]) if header.get("schedule") else None
    return LoadedCheckpoint(cls.from_state(header["arch"], arrays), schedule, header.get("metadata", {}))
