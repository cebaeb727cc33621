"""Shared budget contract, iterate trace and the attack registry."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

import tensor_core as tc
from errors import DimensionError, NumericError

logger = logging.getLogger(__name__)

# float32 rounding of x0 +/- epsilon
BUDGET_TOLERANCE = 1e-6


@dataclass
class AttackContext:
    """Everything an attack may need besides the images and the config."""

    model: object = None
    sched: object = None
    space: object = None
    codec: object = None
    classifier: object = None

    @property
    def valid_range(self):
        return self.space.valid_range if self.space is not None else (0.0, 1.0)


@dataclass
class TraceRow:
    step: int
    t: str
    loss: float
    max_abs_delta: float


@dataclass(frozen=True)
class PerturbationState:
    x0: np.ndarray
    x_cur: np.ndarray
    step: int = 0

    @classmethod
    def start(cls, x0, x_init=None):
        x0 = np.array(tc.as_tensor(x0).data, dtype=np.float32)
        x_cur = x0.copy() if x_init is None else np.asarray(x_init, dtype=np.float32)
        return cls(x0, x_cur, 0)

    @property
    def max_abs_delta(self):
        return float(np.max(np.abs(self.x_cur - self.x0))) if self.x0.size else 0.0

    def project(self, x, epsilon, valid_range):
        # budget clip first, then the data range
        x = np.clip(x, self.x0 - epsilon, self.x0 + epsilon)
        if valid_range is not None:
            x = np.clip(x, *valid_range)
        return x.astype(np.float32)

    def advance(self, grad, cfg, valid_range):
        """One signed-ascent step of length alpha followed by projection."""
        x = self.x_cur + np.float32(cfg.alpha) * np.sign(grad)
        return PerturbationState(self.x0, self.project(x, cfg.epsilon, valid_range), self.step + 1)

    def tensor(self):
        return tc.Tensor(self.x_cur)


def check_gradient(grad, step):
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite attack gradient at step {step}", step=step)


@dataclass
class BudgetReport:
    passed: bool
    epsilon: float
    max_deviation: float
    worst_index: tuple = ()
    range_violations: list = field(default_factory=list)

    def to_dict(self):
        return {
            "passed": self.passed,
            "epsilon": self.epsilon,
            "max_deviation": self.max_deviation,
            "worst_index": list(self.worst_index),
            "range_violations": [list(i) for i in self.range_violations],
        }


def verify_budget(x0, x_adv, epsilon, valid_range=(0.0, 1.0)):
    x0 = np.asarray(tc.as_tensor(x0).data, dtype=np.float64)
    x_adv = np.asarray(tc.as_tensor(x_adv).data, dtype=np.float64)
    if x0.shape != x_adv.shape:
        raise DimensionError(f"budget check: shapes {x0.shape} and {x_adv.shape} differ")
    if x0.size == 0:
        return BudgetReport(True, epsilon, 0.0)
    dev = np.abs(x_adv - x0)
    worst = np.unravel_index(int(np.argmax(dev)), dev.shape)
    max_dev = float(dev[worst])
    violations = []
    if valid_range is not None:
        low, high = valid_range
        bad = (x_adv < low - BUDGET_TOLERANCE) | (x_adv > high + BUDGET_TOLERANCE)
        violations = [tuple(int(i) for i in idx) for idx in np.argwhere(bad)]
    passed = max_dev <= epsilon + BUDGET_TOLERANCE and not violations
    if not passed:
        logger.warning("budget violated: max deviation %.6f at %s (epsilon %.6f), %d range violations",
                       max_dev, worst, epsilon, len(violations))
    return BudgetReport(passed, float(epsilon), max_dev, tuple(int(i) for i in worst), violations)


def write_trace_csv(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "t", "loss", "max_abs_delta"])
        for row in trace:
            writer.writerow([row.step, row.t, repr(float(row.loss)), repr(float(row.max_abs_delta))])


def format_steps(t):
    return " ".join(str(int(v)) for v in np.atleast_1d(t))


class AttackFactory:
    """Registry of attacks callable as `fn(ctx, x0, labels, cfg, rng, trace=None)`."""

    _registry = {}

    @classmethod
    def register(cls, name, fn):
        cls._registry[name] = fn

    @classmethod
    def create(cls, name):
        fn = cls._registry.get(name)
        if fn is None:
            raise KeyError(f"unknown attack '{name}'")
        return fn

    @classmethod
    def has(cls, name):
        return name in cls._registry

    @classmethod
    def names(cls):
        return sorted(cls._registry)


def no_attack(ctx, x0, labels, cfg, rng, trace=None):
    return tc.as_tensor(x0)
