"""Per-class classifiers, the classification loss, the joint objective and the optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ScheduleExhaustedError, TrainingAbort
from .layers import Module, xavier
from .numeric import Parameter, RngState, Tensor, as_tensor, clip, get_dtype, log, sigmoid

SCORE_CLAMP = {np.dtype(np.float64): 1e-12, np.dtype(np.float32): 1e-7}


class Classifier(Module):
    """One weight vector and bias per class: ``s_il = sigmoid(W_l . q_il + b_l)``."""

    def __init__(self, num_classes: int, d: int, rng: RngState):
        self.weight = Parameter(xavier(rng, num_classes, d))
        self.bias = Parameter(np.zeros(num_classes, dtype=get_dtype()))

    def logits(self, features: Tensor) -> Tensor:
        if features.ndim != 3 or features.shape[1:] != self.weight.shape:
            raise DimensionError(f"features {features.shape} do not match classifier {self.weight.shape}")
        return (features * self.weight).sum(axis=-1) + self.bias

    def __call__(self, features: Tensor) -> Tensor:
        return sigmoid(self.logits(features))


def bce_loss(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over classes and averaged over images.

    Scores are clamped to ``[eps, 1 - eps]`` before the logs, with eps 1e-12
    in float64 and 1e-7 in float32.
    """
    targets = np.asarray(targets)
    if scores.shape != targets.shape:
        raise DimensionError(f"scores {scores.shape} and targets {targets.shape} differ")
    eps = SCORE_CLAMP[scores.dtype]
    s = clip(scores, eps, 1.0 - eps)
    y = targets.astype(scores.dtype)
    ll = log(s) * y + log(1.0 - s) * (1.0 - y)
    return ll.sum() * (-1.0 / scores.shape[0])


@dataclass(frozen=True)
class LossReport:
    l_bce: float
    l_s2s: float
    l_p2s: float
    l_total: float
    iteration: int = 0
    epoch: int = 0
    lr: float = 0.0


def total_loss(l_bce: Tensor, l_s2s: Tensor | None = None, l_p2s: Tensor | None = None, *,
               sscl_on: bool = True, pscl_on: bool = True,
               weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
               iteration: int = 0, epoch: int = 0, lr: float = 0.0) -> tuple[Tensor, LossReport]:
    """Weighted sum ``w_bce*L_bce + w_s2s*L_s2s + w_p2s*L_p2s``.

    A disabled (or missing) contrastive term is dropped from the graph entirely,
    so it contributes exactly 0 and gets no gradient.
    """
    parts = {"bce": (l_bce, weights[0], True), "s2s": (l_s2s, weights[1], sscl_on), "p2s": (l_p2s, weights[2], pscl_on)}
    values = {}
    total = None
    for name, (term, w, on) in parts.items():
        if term is None or not on:
            values[name] = 0.0
            continue
        value = float(term.data)
        if not math.isfinite(value):
            raise TrainingAbort(name, value)
        values[name] = value
        weighted = term if w == 1.0 else term * w
        total = weighted if total is None else total + weighted
    if total is None:
        total = as_tensor(0.0, l_bce)
    report = LossReport(values["bce"], values["s2s"], values["p2s"], float(total.data), iteration, epoch, lr)
    return total, report


# ---------------------------------------------------------------------------
# optimization


@dataclass
class OneCycle:
    """Two-phase cosine one-cycle schedule over ``total_steps`` steps.

    With ``w = max(1, round(warmup * total_steps))``, ``start = peak / div``
    and ``end = start / final_div``, the rate used for step ``t`` (0-based) is::

        t <= w:  cos_interp(start, peak, t / w)
        t >  w:  cos_interp(peak, end, (t - w) / (total_steps - 1 - w))

    where ``cos_interp(a, b, p) = b + (a - b) * (1 + cos(pi * p)) / 2``.
    """

    peak: float
    total_steps: int
    warmup: float = 0.3
    div: float = 25.0
    final_div: float = 1e4

    @property
    def warmup_steps(self) -> int:
        return max(1, round(self.warmup * self.total_steps))

    def lr(self, step: int) -> float:
        if step >= self.total_steps or step < 0:
            raise ScheduleExhaustedError(f"step {step} outside schedule of {self.total_steps} steps")
        w = self.warmup_steps
        start = self.peak / self.div
        if step <= w:
            return _cos_interp(start, self.peak, step / w)
        span = self.total_steps - 1 - w
        return _cos_interp(self.peak, start / self.final_div, (step - w) / span)


def _cos_interp(a: float, b: float, p: float) -> float:
    return b + (a - b) * (1.0 + math.cos(math.pi * p)) / 2.0


@dataclass
class OptimizerState:
    schedule: OneCycle
    weight_decay: float = 5e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return self.schedule.lr(self.step)


def optimizer_step(parameters: list[Parameter], state: OptimizerState) -> float:
    """One AdamW update at the scheduled rate; zeroes gradients afterwards.

    ``p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)`` with bias-corrected
    moments. Returns the rate used.
    """
    lr = state.schedule.lr(state.step)
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in parameters:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
    return lr
