"""Building blocks shared by the denoiser, the codec and the classifier."""

import math

import numpy as np

import tensor_core as tc


def time_embedding(t, dim):
    """Sinusoidal embedding of integer timesteps `t` (n,) -> (n, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float32))
    half = dim // 2
    scale = math.log(10000) / max(half - 1, 1)
    freqs = np.exp(np.arange(half, dtype=np.float32) * -scale)
    args = t[:, None] * freqs[None, :]
    return tc.Tensor(np.concatenate([np.sin(args), np.cos(args)], axis=-1))


def init_dense(rng, fan_in, fan_out, gain=1.0):
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform((fan_in, fan_out), -limit, limit)
    return weights, tc.zeros((fan_out,))


def init_mlp(rng, prefix, sizes, out_gain=1.0):
    """Parameters `{prefix}{i}.w / .b` for a stack of dense layers."""
    params = {}
    last = len(sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w, b = init_dense(rng, fan_in, fan_out, gain=out_gain if i == last else 1.0)
        params[f"{prefix}{i}.w"] = w
        params[f"{prefix}{i}.b"] = b
    return params


def mlp_forward(params, prefix, x, n_layers, final=None):
    """SiLU between layers, optional `final` activation on the output."""
    h = x
    for i in range(n_layers):
        h = tc.matmul_affine(h, params[f"{prefix}{i}.w"], params[f"{prefix}{i}.b"])
        if i < n_layers - 1:
            h = tc.silu(h)
    return final(h) if final is not None else h


def all_finite(tensors):
    return all(np.isfinite(t.data).all() for t in tensors)


class Adam:
    """Adam over a dict of named tensors; returns new tensors, never mutates."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = 0

    def step(self, params, grads):
        self._t += 1
        bc1 = 1.0 - self.beta1 ** self._t
        bc2 = 1.0 - self.beta2 ** self._t
        updated = {}
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                updated[name] = p
                continue
            g = g.data
            m = self._m.get(name, np.zeros_like(g))
            v = self._v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name] = m
            self._v[name] = v
            step = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            updated[name] = tc.Tensor(p.data - step)
        return updated
