"""PGD on the diffusion loss at a single (t, eps) draw held fixed."""

from attacks.advdm import ascend, attack_condition, draw_sample


def pgd_dm(model, sched, space, x0, c, cfg, rng, trace=None):
    draw = [draw_sample(rng, sched, x0.shape[0], model.data_dim)]
    return ascend(model, sched, space, x0, c, cfg, lambda _: draw, trace)


def run(ctx, x0, labels, cfg, rng, trace=None):
    return pgd_dm(ctx.model, ctx.sched, ctx.space, x0, attack_condition(ctx, labels, cfg), cfg, rng, trace)
