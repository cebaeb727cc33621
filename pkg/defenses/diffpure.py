"""Purification with the lab's own diffusion model."""

import tensor_core as tc
from diffusion_engine import diffpure
from errors import PreconditionError


def purify(x, t_star, context):
    if context is None or context.model is None or context.rng is None:
        raise PreconditionError("diffpure needs a trained model and a seeded stream")
    x = tc.as_tensor(x)
    z = context.space.to_model(x)
    out = diffpure(context.model, context.sched, z, t_star, context.rng)
    return context.space.to_data(out)


def run(x, cfg, context=None):
    return purify(x, cfg.t_star, context)
