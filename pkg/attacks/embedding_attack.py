"""Push the encoder output away from E(x0) from a random start inside the budget."""

import logging

import numpy as np

import tensor_core as tc
from attacks.base import PerturbationState, TraceRow, check_gradient
from errors import PreconditionError
from latent_codec import encode

logger = logging.getLogger(__name__)


def _flat(x):
    return tc.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


def latent_displacement(codec, x0, x):
    """Per-row ||E(x0) - E(x)||_2."""
    z0 = encode(codec, _flat(tc.as_tensor(x0)))
    return tc.l2_norm_rows(tc.sub(encode(codec, _flat(tc.as_tensor(x))), z0))


def embedding_attack(codec, x0, cfg, rng, trace=None, valid_range=(0.0, 1.0)):
    if codec is None:
        raise PreconditionError("embedding attack needs a trained latent codec")
    x0 = tc.as_tensor(x0)
    state = PerturbationState.start(x0)
    if cfg.epsilon == 0:
        return state.tensor()
    init = state.x0 + np.float32(cfg.epsilon) * rng.gaussian(x0.shape).data
    state = PerturbationState.start(x0, state.project(init, cfg.epsilon, valid_range))
    for i in range(cfg.n_steps):
        x = state.tensor()
        with tc.GradientTape() as tape:
            tape.watch(x)
            dist = latent_displacement(codec, x0, x)
            objective = tc.sum(dist)
        grad = tape.gradient(objective, x).data
        check_gradient(grad, i)
        state = state.advance(grad, cfg, valid_range)
        value = float(np.mean(dist.data))
        if trace is not None:
            trace.append(TraceRow(i, "", value, state.max_abs_delta))
        logger.debug("step %d latent displacement %.4f", i, value)
    return state.tensor()


def run(ctx, x0, labels, cfg, rng, trace=None):
    return embedding_attack(ctx.codec, x0, cfg, rng, trace, ctx.valid_range)
