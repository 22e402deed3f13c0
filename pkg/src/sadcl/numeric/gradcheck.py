"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DomainError, ProbeError
from .tensor import Parameter, Tensor, backward, no_grad


@dataclass
class ParameterCheck:
    name: str
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tolerance: float
    checks: list[ParameterCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    @property
    def failures(self) -> list[ParameterCheck]:
        return [c for c in self.checks if c.max_rel_error > self.tolerance]


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def check_gradients(
    loss_fn: Callable[[], Tensor],
    parameters: Sequence[Parameter],
    step_size: float = 1e-4,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` takes no arguments and reads the current parameter values.
    Parameters must be float64; each element is perturbed in place by
    ``+/- step_size`` and restored afterwards.
    """
    for p in parameters:
        if p.data.dtype != np.float64:
            raise ContractError(f"gradient checks need float64 parameters; {p.name} is {p.data.dtype}")
    for p in parameters:
        p.grad = None
    loss = loss_fn()
    if loss.data.ndim != 0:
        raise ContractError(f"loss_fn must return a scalar, got shape {loss.shape}")
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in parameters]

    report = GradCheckReport(tolerance=tolerance)
    with no_grad():
        for p, g in zip(parameters, analytic):
            fd = np.empty_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step_size
                up = _probe(loss_fn, p, i)
                flat[i] = orig - step_size
                down = _probe(loss_fn, p, i)
                flat[i] = orig
                fd.reshape(-1)[i] = (up - down) / (2.0 * step_size)
            err = relative_error(g, fd)
            if err.size:
                worst = int(np.argmax(err))
                idx = np.unravel_index(worst, p.shape)
                report.checks.append(ParameterCheck(p.name, float(err.reshape(-1)[worst]), tuple(int(k) for k in idx),
                                                    float(g.reshape(-1)[worst]), float(fd.reshape(-1)[worst])))
    return report


def _probe(loss_fn, p: Parameter, flat_index: int) -> float:
    try:
        value = float(loss_fn().data)
    except (FloatingPointError, DomainError):
        # the probe left the loss's domain; report it like a non-finite value
        value = float("nan")
    if not np.isfinite(value):
        raise ProbeError(p.name, tuple(int(k) for k in np.unravel_index(flat_index, p.shape)), value)
    return value
