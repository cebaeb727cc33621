"""
Dense float32 tensors, a reverse-mode gradient tape and counter-based RNG.

Only the primitives the lab's networks need are provided. Every primitive
records itself on the innermost active tape of the calling thread when at
least one of its inputs is tracked by that tape, so parameter gradients
(training), input gradients (attacks) and condition gradients (inversion)
all come out of the same mechanism:

    with GradientTape() as tape:
        tape.watch(x)
        loss = sum(square(x))
    g = tape.gradient(loss, x)
"""

import hashlib
import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax

from errors import DimensionError, MissingLeafError

DTYPE = np.float32
_MASK64 = (1 << 64) - 1

_state = threading.local()


class Tensor:
    """Immutable row-major float32 array."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=DTYPE)
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        a = np.ascontiguousarray(arr, dtype=DTYPE)
        if a is arr and a.flags.writeable:
            a = a.copy()
        a.setflags(write=False)
        t._data = a
        return t

    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    def numpy(self):
        return self._data.copy()

    def item(self):
        if self._data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __len__(self):
        return self._data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={np.array2string(self._data, threshold=8)})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape):
    return Tensor._wrap(np.zeros(shape, dtype=DTYPE))


# ---------------------------------------------------------------------------
# Gradient tape
# ---------------------------------------------------------------------------

@dataclass
class _Record:
    output: Tensor
    inputs: tuple
    backward: object


def _active_tapes():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


class GradientTape:
    """Records primitives applied to watched tensors, in execution order."""

    def __init__(self):
        self._records = []
        self._tracked = {}
        self._leaves = {}

    def __enter__(self):
        _active_tapes().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _active_tapes()
        if stack and stack[-1] is self:
            stack.pop()
        elif self in stack:
            stack.remove(self)
        return False

    def __len__(self):
        return len(self._records)

    def watch(self, *tensors):
        for t in tensors:
            if not isinstance(t, Tensor):
                raise TypeError(f"can only watch Tensor, got {type(t).__name__}")
            self._leaves[id(t)] = t
            self._tracked[id(t)] = t

    def is_tracked(self, t):
        return id(t) in self._tracked

    def _record(self, output, inputs, backward):
        self._records.append(_Record(output, inputs, backward))
        self._tracked[id(output)] = output

    def gradient(self, output, leaves):
        """
        Backpropagate from a scalar `output` to one leaf or a list of leaves.

        The tape is cleared afterwards; a second call needs a new trace.
        """
        single = isinstance(leaves, Tensor)
        leaf_list = [leaves] if single else list(leaves)
        if output.size != 1:
            raise DimensionError(f"gradient needs a scalar output, got shape {output.shape}")
        for leaf in leaf_list:
            if id(leaf) not in self._leaves:
                raise MissingLeafError(f"tensor of shape {leaf.shape} was not watched on this tape")

        grads = {}
        if id(output) in self._tracked:
            grads[id(output)] = np.ones(output.shape, dtype=DTYPE)
        for rec in reversed(self._records):
            key = id(rec.output)
            g = grads.get(key)
            if g is None:
                continue
            if key not in self._leaves:
                del grads[key]
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not isinstance(inp, Tensor) or id(inp) not in self._tracked:
                    continue
                k = id(inp)
                grads[k] = gi if k not in grads else grads[k] + gi

        result = [
            Tensor._wrap(grads[id(leaf)]) if id(leaf) in grads else zeros(leaf.shape)
            for leaf in leaf_list
        ]
        self._records.clear()
        self._tracked.clear()
        self._leaves.clear()
        return result[0] if single else result


def _record(output, inputs, backward):
    for tape in _active_tapes():
        if any(isinstance(i, Tensor) and tape.is_tracked(i) for i in inputs):
            tape._record(output, inputs, backward)
    return output


def grad_wrt(tape, output_scalar, leaf):
    return tape.gradient(output_scalar, leaf)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape).astype(DTYPE, copy=False)


def _broadcast_check(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from exc


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    out = Tensor._wrap(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    out = Tensor._wrap(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data
    out = Tensor._wrap(ad * bd)
    return _record(out, (a, b), lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor._wrap(ad @ bd)
    return _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def matmul_affine(x, weights, bias):
    """`x @ weights + bias`; a 1-D `x` is treated as a single row."""
    x = as_tensor(x)
    if weights.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != weights.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"affine: bias {bias.shape} does not match weights {weights.shape}")
    squeeze = x.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    wd = weights.data
    res = xd @ wd + bias.data
    out = Tensor._wrap(res[0] if squeeze else res)

    def backward(g):
        g2 = g[None, :] if squeeze else g
        gx = g2 @ wd.T
        return (gx[0] if squeeze else gx, xd.T @ g2, g2.sum(axis=0))

    return _record(out, (x, weights, bias), backward)


def silu(x):
    xd = x.data
    s = expit(xd)
    out = Tensor._wrap(xd * s)
    return _record(out, (x,), lambda g: (g * s * (1.0 + xd * (1.0 - s)),))


def sigmoid(x):
    s = expit(x.data)
    out = Tensor._wrap(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def square(x):
    xd = x.data
    out = Tensor._wrap(xd * xd)
    return _record(out, (x,), lambda g: (2.0 * g * xd,))


def sqrt(x):
    r = np.sqrt(x.data)
    out = Tensor._wrap(r)

    def backward(g):
        safe = np.where(r > 0, r, 1.0)
        return (np.where(r > 0, 0.5 * g / safe, 0.0),)

    return _record(out, (x,), backward)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    out = Tensor._wrap(np.sum(x.data, axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


def reshape(x, shape):
    original = x.shape
    out = Tensor._wrap(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(original),))


def concat(tensors, axis=-1):
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        res = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}") from exc
    out = Tensor._wrap(res)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def broadcast_to(x, shape):
    shape = tuple(shape)
    try:
        res = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: {x.shape} -> {shape}") from exc
    out = Tensor._wrap(res)
    original = x.shape
    return _record(out, (x,), lambda g: (_unbroadcast(g, original),))


def gather_rows(table, index):
    """Differentiable row lookup `table[index]` (embedding tables)."""
    index = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D table, got {table.shape}")
    out = Tensor._wrap(table.data[index])
    rows = table.shape

    def backward(g):
        gt = np.zeros(rows, dtype=DTYPE)
        np.add.at(gt, index, g)
        return (gt,)

    return _record(out, (table,), backward)


def finite_difference(x, axis):
    """Forward difference `x[i+1] - x[i]` along `axis` (length shrinks by one)."""
    xd = x.data
    out = Tensor._wrap(np.diff(xd, axis=axis))
    ax = axis % xd.ndim

    def backward(g):
        gx = np.zeros(xd.shape, dtype=DTYPE)
        hi = [slice(None)] * xd.ndim
        lo = [slice(None)] * xd.ndim
        hi[ax] = slice(1, None)
        lo[ax] = slice(None, -1)
        gx[tuple(hi)] += g
        gx[tuple(lo)] -= g
        return (gx,)

    return _record(out, (x,), backward)


def smooth_abs(x, eps):
    xd = x.data
    r = np.sqrt(xd * xd + DTYPE(eps) ** 2)
    out = Tensor._wrap(r)
    return _record(out, (x,), lambda g: (g * xd / r,))


def l2_norm_rows(x):
    """Euclidean norm of every row of a 2-D tensor."""
    if x.ndim != 2:
        raise DimensionError(f"l2_norm_rows needs a 2-D tensor, got {x.shape}")
    xd = x.data
    n = np.sqrt(np.sum(xd * xd, axis=1))
    out = Tensor._wrap(n)

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (scale[:, None] * xd,)

    return _record(out, (x,), backward)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer `labels` under `logits` (n, classes)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross entropy: logits {logits.shape}, labels {labels.shape}")
    logp = log_softmax(logits.data.astype(np.float64), axis=1)
    n = logits.shape[0]
    out = Tensor._wrap(-logp[np.arange(n), labels].mean())

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return ((g * p / n).astype(DTYPE),)

    return _record(out, (logits,), backward)


def sign(x):
    """Elementwise -1/0/+1; not differentiable, never recorded."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)
    return Tensor._wrap(np.sign(xd))


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


@dataclass
class RngStream:
    """
    Counter-based random stream.

    Each draw builds a Philox generator keyed by `seed` whose counter block
    starts at `counter << 128`, then advances `counter` by one, so a given
    (seed, counter) pair always yields the same values and draws never
    overlap.
    """

    seed: int
    counter: int = 0

    def _generator(self):
        bitgen = np.random.Philox(key=self.seed & _MASK64, counter=(self.counter & _MASK64) << 128)
        self.counter += 1
        return np.random.Generator(bitgen)

    def child(self, *keys):
        digest = hashlib.blake2b(repr((self.seed, keys)).encode("utf-8"), digest_size=8).digest()
        return RngStream(int.from_bytes(digest, "little"))

    def uniform(self, shape, low=0.0, high=1.0):
        shape = _as_shape(shape)
        u = self._generator().random(shape)
        return Tensor._wrap(low + (high - low) * u)

    def gaussian(self, shape):
        # Box-Muller on counter-based uniforms
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u = self._generator().random(2 * m)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:m]))
        angle = 2.0 * math.pi * u[m:]
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
        return Tensor._wrap(z.reshape(shape))

    def integers(self, low, high, size=None):
        return self._generator().integers(low, high, size=size)

    def permutation(self, n):
        return self._generator().permutation(n)


def gaussian(rng, shape):
    return rng.gaussian(shape)


# ---------------------------------------------------------------------------
# Finite-difference check
# ---------------------------------------------------------------------------

def gradcheck(fn, x, h=1e-3):
    """
    Relative error between the tape gradient of scalar `fn` at `x` and
    central differences with step `h`:

        ||g_tape - g_fd|| / max(||g_tape|| + ||g_fd||, 1e-12)
    """
    base = np.array(x, dtype=DTYPE)
    leaf = Tensor(base)
    with GradientTape() as tape:
        tape.watch(leaf)
        out = fn(leaf)
    analytic = tape.gradient(out, leaf).data.astype(np.float64).reshape(-1)

    flat = base.reshape(-1)
    numeric = np.zeros(flat.size)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += DTYPE(h)
        xm[i] -= DTYPE(h)
        fp = fn(Tensor(xp.reshape(base.shape))).item()
        fm = fn(Tensor(xm.reshape(base.shape))).item()
        numeric[i] = (fp - fm) / (float(xp[i]) - float(xm[i]))

    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)
