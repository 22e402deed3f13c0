"""Multi-label evaluation: per-class AP, mAP, and per-class / overall precision, recall and F1."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError


class NoPositives(ValueError):
    """The class has no positive label, so its AP is undefined."""


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "all"      # "all" thresholds scores, "topk" keeps the k best classes
    k: int = 3
    threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in ("all", "topk"):
            raise ValueError(f"mode must be 'all' or 'topk', got {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")

    @property
    def label(self) -> str:
        return "all" if self.mode == "all" else f"top{self.k}"


@dataclass(frozen=True)
class MetricReport:
    mode: str
    ap: tuple[float, ...]   # NaN for classes excluded for lack of positives
    mAP: float
    CP: float
    CR: float
    CF1: float
    OP: float
    OR: float
    OF1: float


def average_precision(scores, labels) -> float:
    """Non-interpolated AP: mean over positives of precision at that positive's rank.

    Ranking is by descending score, ties broken by ascending sample index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positives = int((labels == 1).sum())
    if positives == 0:
        raise NoPositives("average precision is undefined without positive labels")
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = labels[order] == 1
    # left-to-right accumulation so results are reproducible term by term
    total = 0.0
    for m, rank in enumerate(np.flatnonzero(hits) + 1, 1):
        total += m / int(rank)
    return total / positives


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def predict(scores: np.ndarray, config: EvalConfig) -> np.ndarray:
    scores = np.asarray(scores)
    if config.mode == "all":
        return (scores >= config.threshold).astype(np.int64)
    n, num_classes = scores.shape
    k = min(config.k, num_classes)
    pred = np.zeros((n, num_classes), dtype=np.int64)
    for i in range(n):
        order = np.lexsort((np.arange(num_classes), -scores[i]))
        pred[i, order[:k]] = 1
    return pred


def evaluate(scores, targets, config: EvalConfig = EvalConfig()) -> MetricReport:
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets).astype(np.int64)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise DimensionError(f"scores {scores.shape} and targets {targets.shape} must be equal (N, L) shapes")
    pred = predict(scores, config)
    tp = ((pred == 1) & (targets == 1)).sum(axis=0)
    n_pred = pred.sum(axis=0)
    n_pos = targets.sum(axis=0)
    included = n_pos > 0

    ap = []
    for j in range(scores.shape[1]):
        ap.append(average_precision(scores[:, j], targets[:, j]) if included[j] else math.nan)
    valid_ap = [a for a in ap if not math.isnan(a)]
    mAP = float(np.mean(valid_ap)) if valid_ap else 0.0

    # per-class precision over classes that have positives and at least one prediction
    prec_mask = included & (n_pred > 0)
    CP = float(np.mean(tp[prec_mask] / n_pred[prec_mask])) if prec_mask.any() else 0.0
    CR = float(np.mean(tp[included] / n_pos[included])) if included.any() else 0.0
    OP = float(tp.sum() / n_pred.sum()) if n_pred.sum() else 0.0
    OR = float(tp.sum() / n_pos.sum()) if n_pos.sum() else 0.0
    return MetricReport(config.label, tuple(ap), mAP, CP, CR, _f1(CP, CR), OP, OR, _f1(OP, OR))


# ---------------------------------------------------------------------------
# report file
#
# CSV, one row per report, fixed column order:
#   mode,mAP,CP,CR,CF1,OP,OR,OF1,AP_0,...,AP_{L-1}
# Excluded classes have AP "nan". Floats use repr() and parse back exactly.

SUMMARY_COLUMNS = ("mAP", "CP", "CR", "CF1", "OP", "OR", "OF1")


def report_header(num_classes: int) -> list[str]:
    return ["mode", *SUMMARY_COLUMNS] + [f"AP_{j}" for j in range(num_classes)]


def write_reports(path, reports: list[MetricReport]) -> None:
    path = Path(path)
    if not reports:
        raise ValueError("no reports to write")
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(report_header(len(reports[0].ap)))
            for r in reports:
                w.writerow([r.mode] + [repr(float(getattr(r, c))) for c in SUMMARY_COLUMNS] + [repr(float(a)) for a in r.ap])
    except OSError as exc:
        raise OSError(f"cannot write metric report to {path}: {exc}") from exc


def read_reports(path) -> list[MetricReport]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read metric report {path}: {exc}") from exc
    header, body = rows[0], rows[1:]
    n_summary = len(SUMMARY_COLUMNS)
    out = []
    for row in body:
        values = dict(zip(SUMMARY_COLUMNS, map(float, row[1:1 + n_summary])))
        ap = tuple(float(v) for v in row[1 + n_summary:len(header)])
        out.append(MetricReport(row[0], ap, **values))
    return out
