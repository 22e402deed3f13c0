"""Randomized gradient checks of the classification, contrastive and joint losses.

All instances are built and evaluated in float64 so central differences at
``h = 1e-4`` are accurate to well below the ``1e-4`` tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import contrastive, objective
from .config import RunConfig
from .contrastive import PrototypeBank, ProjectionHead, Snapshot
from .model import SADCLModel
from .numeric import Parameter, RngState, Tensor, check_gradients, no_grad, precision

COMPONENTS = ("L_BCE", "L_S2S", "L_P2S", "L")


@dataclass
class GradSuiteReport:
    tolerance: float
    errors: dict[str, list[float]] = field(default_factory=dict)
    seconds: float = 0.0

    def max_error(self, component: str) -> float:
        return max(self.errors.get(component, [0.0]))

    @property
    def passed(self) -> bool:
        return all(self.max_error(c) <= self.tolerance for c in self.errors)

    def lines(self) -> list[str]:
        out = []
        for c in self.errors:
            err = self.max_error(c)
            status = "PASS" if err <= self.tolerance else "FAIL"
            out.append(f"{c:6s} max_rel_error={err:.3e} instances={len(self.errors[c])} {status}")
        return out


def _targets(rng: RngState, n: int, num_classes: int) -> np.ndarray:
    y = (rng.uniform((n, num_classes)) < 0.5).astype(np.int64)
    y[0, 0] = 1   # keep at least one activated vector
    return y


def _snapshot(rng: RngState, num_classes: int, dim: int) -> Snapshot:
    m = int(rng.uniform() * 4)
    v = rng.normal((m, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return Snapshot(v, np.minimum((rng.uniform(m) * num_classes).astype(np.int64), num_classes - 1), np.arange(m))


def _dims(rng: RngState):
    pick = lambda lo, hi: lo + int(rng.uniform() * (hi - lo + 1))
    return pick(2, 3), pick(2, 4), pick(2, 6), pick(2, 6)   # N, L, d, d'


def _jitter_head(head: ProjectionHead, rng: RngState) -> None:
    # nonzero biases keep projected vectors away from zero norm
    head.fc1.bias.data[:] = 0.5 * rng.normal(head.fc1.bias.shape)
    head.fc2.bias.data[:] = 0.5 * rng.normal(head.fc2.bias.shape)


def bce_instance(rng: RngState, tau: float):
    n, num_classes, d, _ = _dims(rng)
    features = Parameter(rng.normal((n, num_classes, d)), "features")
    clf = objective.Classifier(num_classes, d, rng)
    clf.bias.data[:] = rng.normal(num_classes)
    y = _targets(rng, n, num_classes)
    params = [features] + clf.parameters()
    return (lambda: objective.bce_loss(clf(features), y)), params


def s2s_instance(rng: RngState, tau: float):
    n, num_classes, d, d_out = _dims(rng)
    features = Parameter(rng.normal((n, num_classes, d)), "features")
    head = ProjectionHead(d, 4, d_out, rng, activation="gelu")
    _jitter_head(head, rng)
    y = _targets(rng, n, num_classes)
    snap = _snapshot(rng, num_classes, d_out)
    return (lambda: contrastive.sscl_loss(head(features), y, snap, tau)), [features] + head.parameters()


def p2s_instance(rng: RngState, tau: float):
    n, num_classes, d, d_out = _dims(rng)
    features = Parameter(rng.normal((n, num_classes, d)), "features")
    head = ProjectionHead(d, 4, d_out, rng, activation="gelu")
    _jitter_head(head, rng)
    y = _targets(rng, n, num_classes)
    bank = PrototypeBank(num_classes, d)
    bank.update(rng.normal((3, num_classes, d)), np.ones((3, num_classes)), np.ones((3, num_classes)))
    snap = _snapshot(rng, num_classes, d_out)

    def loss():
        classes, c_out = contrastive.project_prototypes(head, bank)
        return contrastive.pscl_loss(classes, c_out, head(features), y, snap, tau)

    return loss, [features] + head.parameters()


def joint_instance(rng: RngState, tau: float):
    n, num_classes, _, d_out = _dims(rng)
    cfg = RunConfig(d=4, heads=2, dec_layers=1, d_hidden=4, d_proj=d_out, tau=tau,
                    activation="gelu",
                    precision="high")
    height, width, channels = 2, 2, 3
    model = SADCLModel(cfg, num_classes, channels, height, width, rng.child(7))
    _jitter_head(model.projection, rng)
    grids = rng.normal((n, height, width, channels))
    y = _targets(rng, n, num_classes)
    snap = _snapshot(rng, num_classes, d_out)
    bank = PrototypeBank(num_classes, cfg.d)
    with no_grad():
        q, _ = model.features(grids)
    bank.update(q.data, np.ones_like(y), np.ones(y.shape))

    def loss():
        q, _ = model.features(grids)
        s = model.classifier(q)
        x = model.projection(q)
        classes, c_out = contrastive.project_prototypes(model.projection, bank)
        total, _ = objective.total_loss(objective.bce_loss(s, y), contrastive.sscl_loss(x, y, snap, tau),
                                        contrastive.pscl_loss(classes, c_out, x, y, snap, tau))
        return total

    return loss, model.parameters()


BUILDERS = {"L_BCE": bce_instance, "L_S2S": s2s_instance, "L_P2S": p2s_instance, "L": joint_instance}


def run_grad_check(seed: int = 0, instances: int = 20, tolerance: float = 1e-4, step_size: float = 1e-4,
                   tau: float = 0.1) -> GradSuiteReport:
    report = GradSuiteReport(tolerance)
    start = time.perf_counter()
    root = RngState(seed)
    with precision("high"):
        for c_idx, component in enumerate(COMPONENTS):
            errs = []
            for k in range(instances):
                loss_fn, params = BUILDERS[component](root.child(c_idx, k), tau)
                errs.append(check_gradients(loss_fn, params, step_size, tolerance).max_rel_error)
            report.errors[component] = errs
    report.seconds = time.perf_counter() - start
    return report
