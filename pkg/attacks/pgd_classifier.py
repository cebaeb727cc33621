"""White-box PGD on the cross-entropy of the self-trained classifier."""

import logging

import numpy as np

import tensor_core as tc
from attacks.base import PerturbationState, TraceRow, check_gradient

logger = logging.getLogger(__name__)


def pgd_classifier(classifier, x0, label, cfg, rng=None, trace=None, valid_range=(0.0, 1.0)):
    """Signed ascent from x0 itself; `rng` is unused and kept for the common signature."""
    x0 = tc.as_tensor(x0)
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (x0.shape[0],))
    state = PerturbationState.start(x0)
    if cfg.epsilon == 0:
        return state.tensor()
    flat = (x0.shape[0], int(np.prod(x0.shape[1:])))
    for i in range(cfg.n_steps):
        x = state.tensor()
        with tc.GradientTape() as tape:
            tape.watch(x)
            loss = tc.softmax_cross_entropy(classifier.logits(tc.reshape(x, flat)), labels)
        grad = tape.gradient(loss, x).data
        check_gradient(grad, i)
        state = state.advance(grad, cfg, valid_range)
        if trace is not None:
            trace.append(TraceRow(i, "", loss.item(), state.max_abs_delta))
    return state.tensor()


def run(ctx, x0, labels, cfg, rng, trace=None):
    return pgd_classifier(ctx.classifier, x0, labels, cfg, rng, trace, ctx.valid_range)
