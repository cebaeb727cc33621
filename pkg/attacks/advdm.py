"""
AdvDM: signed gradient ascent on the noise-matching loss with a fresh
Monte-Carlo draw of (t, eps) at every iteration.
"""

import logging

import numpy as np

import tensor_core as tc
from attacks.base import PerturbationState, TraceRow, check_gradient, format_steps
from diffusion_engine import l_dm

logger = logging.getLogger(__name__)


def draw_sample(rng, sched, n, dim):
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.gaussian((n, dim))
    return t, eps


def loss_gradient(model, sched, space, x, c, draws):
    """Input gradient of l_dm at `x`, averaged over `draws`; also the mean loss."""
    x = tc.as_tensor(x)
    total = np.zeros(x.shape, dtype=np.float32)
    losses = []
    for t, eps in draws:
        with tc.GradientTape() as tape:
            tape.watch(x)
            loss = l_dm(model, space.to_model(x), c, t, eps, sched)
        total += tape.gradient(loss, x).data
        losses.append(loss.item())
    return total / len(draws), float(np.mean(losses))


def ascend(model, sched, space, x0, c, cfg, draw_for_step, trace=None):
    state = PerturbationState.start(x0)
    if cfg.epsilon == 0:
        return state.tensor()
    for i in range(cfg.n_steps):
        draws = draw_for_step(i)
        grad, loss = loss_gradient(model, sched, space, state.x_cur, c, draws)
        check_gradient(grad, i)
        state = state.advance(grad, cfg, space.valid_range)
        if trace is not None:
            trace.append(TraceRow(i, format_steps(draws[0][0]), loss, state.max_abs_delta))
        logger.debug("step %d loss %.4f max|delta| %.5f", i, loss, state.max_abs_delta)
    return state.tensor()


def advdm(model, sched, space, x0, c, cfg, rng, trace=None):
    """
    `space` carries the codec in latent mode: the loss is taken on E(x) and
    differentiated through the encoder back to the data.
    """
    n = x0.shape[0]

    def fresh(_):
        return [draw_sample(rng, sched, n, model.data_dim) for _ in range(cfg.draws_per_step)]

    return ascend(model, sched, space, x0, c, cfg, fresh, trace)


def attack_condition(ctx, labels, cfg):
    if cfg.condition == "class":
        return ctx.model.class_condition(labels)
    return None


def run(ctx, x0, labels, cfg, rng, trace=None):
    return advdm(ctx.model, ctx.sched, ctx.space, x0, attack_condition(ctx, labels, cfg), cfg, rng, trace)
