"""Total variation minimization by gradient descent with backtracking."""

import logging

import numpy as np

import tensor_core as tc
from defenses.base import require_images

logger = logging.getLogger(__name__)

SMOOTHING = 1e-3
ARMIJO = 1e-4
MAX_HALVINGS = 30


def tv_objective(y, x, lam):
    """||y - x||^2 + lam * sum of smoothed |forward differences| along both image axes."""
    fidelity = tc.sum(tc.square(tc.sub(y, x)))
    if lam == 0:
        return fidelity
    tv = tc.add(
        tc.sum(tc.smooth_abs(tc.finite_difference(y, axis=1), SMOOTHING)),
        tc.sum(tc.smooth_abs(tc.finite_difference(y, axis=2), SMOOTHING)),
    )
    return tc.add(fidelity, tc.mul(tv, lam))


def tvm(x, lam=0.1, iters=50, trace=None):
    """
    Descend from y = x. Each step starts from twice the last accepted step
    length and halves it until the Armijo condition holds, so the objective
    never increases. The output is clamped to [0, 1].
    """
    x = require_images(x, "tvm")
    y = x
    value = tv_objective(y, x, lam).item()
    if trace is not None:
        trace.append(value)
    if lam == 0:
        return tc.Tensor(np.clip(x.data, 0.0, 1.0))
    step = 1.0
    for i in range(iters):
        with tc.GradientTape() as tape:
            tape.watch(y)
            obj = tv_objective(y, x, lam)
        g = tape.gradient(obj, y).data
        g_sq = float(np.sum(g.astype(np.float64) ** 2))
        if g_sq == 0.0:
            break
        step = min(2.0 * step, 1.0)
        for _ in range(MAX_HALVINGS):
            candidate = tc.Tensor(y.data - step * g)
            cand_value = tv_objective(candidate, x, lam).item()
            if cand_value <= value - ARMIJO * step * g_sq:
                y, value = candidate, cand_value
                break
            step *= 0.5
        else:
            logger.debug("tvm: no descent step found at iteration %d", i)
            break
        if trace is not None:
            trace.append(value)
    return tc.Tensor(np.clip(y.data, 0.0, 1.0))


def run(x, cfg, context=None):
    return tvm(x, cfg.tv_lambda, cfg.tv_iters)
