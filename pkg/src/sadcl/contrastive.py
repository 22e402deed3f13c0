"""Unified embedding space: projection head, memory bank, prototypes and the two contrastive losses."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError
from .layers import Linear, Module
from .numeric import ACTIVATIONS, RngState, Tensor, as_tensor, concat, l2_normalize, masked_logsumexp


class ProjectionHead(Module):
    """affine -> activation -> affine, optionally followed by L2 normalization.

    One instance projects both label-level features and class prototypes.
    """

    def __init__(self, d: int, d_hidden: int, d_out: int, rng: RngState,
                 activation: str = "relu", normalize: bool = True):
        self.fc1 = Linear(d, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)
        self.activation = activation
        self.normalize = normalize

    def __call__(self, features: Tensor) -> Tensor:
        out = self.fc2(ACTIVATIONS[self.activation](self.fc1(features)))
        return l2_normalize(out, axis=-1) if self.normalize else out


def project(head: ProjectionHead, features: Tensor) -> Tensor:
    if features.ndim != 3:
        raise DimensionError(f"expected label-level features (N, L, d), got {features.shape}")
    return head(features)


# ---------------------------------------------------------------------------
# memory bank


@dataclass(frozen=True)
class Snapshot:
    """Gradient-free bank entries: vectors ``(M, d')`` with class and image ids."""

    vectors: np.ndarray
    classes: np.ndarray
    image_ids: np.ndarray

    @classmethod
    def empty(cls, dim: int = 0) -> "Snapshot":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.classes)


class MemoryBank:
    """Per-class FIFO queues of activated projected vectors.

    Each entry is ``(vector, image_id, iteration, seq)`` where ``seq`` is a
    global insertion counter used to find the most recent entries overall.
    """

    def __init__(self, num_classes: int, capacity: int = 64):
        if capacity < 1:
            raise ParameterError(f"bank capacity must be >= 1, got {capacity}")
        self.num_classes = num_classes
        self.capacity = capacity
        self.queues: list[deque] = [deque(maxlen=capacity) for _ in range(num_classes)]
        self.seq = 0

    def __len__(self) -> int:
        return sum(len(q) for q in self.queues)

    def push(self, vectors: np.ndarray, targets: np.ndarray, image_ids, iteration: int) -> None:
        """Push every activated ``vectors[i, j]`` (``targets[i, j] == 1``), row-major."""
        vectors = np.asarray(vectors)
        for i, j in zip(*np.nonzero(np.asarray(targets) == 1)):
            self.queues[j].append((vectors[i, j].copy(), int(image_ids[i]), int(iteration), self.seq))
            self.seq += 1

    def snapshot(self, cap: int | None = None) -> Snapshot:
        """Most recent ``cap`` entries overall (all entries when ``cap`` is None).

        Entries are grouped by ascending class id, most recent first within a class.
        """
        entries = [(j, e) for j, q in enumerate(self.queues) for e in q]
        if cap is not None:
            entries = sorted(entries, key=lambda je: -je[1][3])[:max(cap, 0)]
        if not entries:
            return Snapshot.empty()
        entries.sort(key=lambda je: (je[0], -je[1][3]))
        return Snapshot(
            vectors=np.stack([e[0] for _, e in entries]),
            classes=np.array([j for j, _ in entries], dtype=np.int64),
            image_ids=np.array([e[1] for _, e in entries], dtype=np.int64),
        )

    def state(self) -> dict:
        rows = [(j, e) for j, q in enumerate(self.queues) for e in q]
        dim = rows[0][1][0].shape[0] if rows else 0
        return {
            "vectors": np.stack([e[0] for _, e in rows]) if rows else np.zeros((0, dim)),
            "meta": np.array([(j, e[1], e[2], e[3]) for j, e in rows], dtype=np.int64).reshape(-1, 4),
            "seq": self.seq,
        }

    def load_state(self, state: dict) -> None:
        self.queues = [deque(maxlen=self.capacity) for _ in range(self.num_classes)]
        for vec, (j, image_id, iteration, seq) in zip(state["vectors"], state["meta"]):
            self.queues[int(j)].append((np.array(vec), int(image_id), int(iteration), int(seq)))
        self.seq = int(state["seq"])


# ---------------------------------------------------------------------------
# prototypes


class PrototypeBank:
    """Screened streaming means of label-level features, one per class.

    ``sums``/``counts`` hold the current accumulation window (reset by
    :meth:`reset_epoch`). Running per-coordinate minima and maxima of the
    contributors bound the mean so rounding can never push it outside the
    contributors' range. ``previous`` keeps the last finished window for export.
    """

    def __init__(self, num_classes: int, dim: int, threshold: float = 0.8):
        if not 0.0 < threshold < 1.0:
            raise ParameterError(f"screening threshold must be in (0, 1), got {threshold}")
        self.threshold = threshold
        self.sums = np.zeros((num_classes, dim))
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.lo = np.full((num_classes, dim), np.inf)
        self.hi = np.full((num_classes, dim), -np.inf)
        self.previous = np.zeros((num_classes, dim))
        self.previous_counts = np.zeros(num_classes, dtype=np.int64)

    @property
    def defined(self) -> np.ndarray:
        return self.counts > 0

    def update(self, features, targets, scores) -> int:
        """Accumulate every ``features[i, j]`` with ``targets[i, j] == 1`` and ``scores[i, j] >= threshold``.

        Returns the number of accepted vectors.
        """
        features = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
        scores = np.asarray(scores.data if isinstance(scores, Tensor) else scores)
        accept = (np.asarray(targets) == 1) & (scores >= self.threshold)
        for i, j in zip(*np.nonzero(accept)):
            v = features[i, j]
            self.sums[j] += v
            self.counts[j] += 1
            np.minimum(self.lo[j], v, out=self.lo[j])
            np.maximum(self.hi[j], v, out=self.hi[j])
        return int(accept.sum())

    def prototypes(self) -> np.ndarray:
        """Current means ``(L, d)``; rows of undefined classes are zero."""
        out = np.zeros_like(self.sums)
        d = self.defined
        out[d] = np.clip(self.sums[d] / self.counts[d, None], self.lo[d], self.hi[d])
        return out

    def reset_epoch(self) -> None:
        d = self.defined
        self.previous[d] = self.prototypes()[d]
        self.previous_counts[d] = self.counts[d]
        self.sums[:] = 0.0
        self.counts[:] = 0
        self.lo[:] = np.inf
        self.hi[:] = -np.inf

    def export_view(self) -> tuple[np.ndarray, np.ndarray]:
        """Current prototype where defined, else the previous window's."""
        protos = np.where(self.defined[:, None], self.prototypes(), self.previous)
        counts = np.where(self.defined, self.counts, self.previous_counts)
        return protos, counts

    def state(self) -> dict:
        return {name: getattr(self, name).copy() for name in ("sums", "counts", "lo", "hi", "previous", "previous_counts")}

    def load_state(self, state: dict) -> None:
        for name, value in state.items():
            setattr(self, name, np.array(value))


def project_prototypes(head: ProjectionHead, bank: PrototypeBank, dtype=None) -> tuple[np.ndarray, Tensor | None]:
    """Project defined prototypes; returns ``(class ids, C_out (J, d'))``.

    The accumulated sums enter as constants, so only the head receives gradient.
    """
    classes = np.flatnonzero(bank.defined)
    if classes.size == 0:
        return classes, None
    dtype = dtype or head.fc1.weight.dtype
    return classes, head(Tensor(bank.prototypes()[classes].astype(dtype)))


# ---------------------------------------------------------------------------
# losses


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")


def _zero(like: Tensor) -> Tensor:
    return as_tensor(0.0, like)


def sscl_loss(x: Tensor, targets: np.ndarray, snapshot: Snapshot | None, tau: float) -> Tensor:
    """Sample-to-sample supervised contrastive loss over activated label-level vectors.

    Anchors are the activated vectors of the current batch. Each anchor contrasts
    against every other activated vector of the batch and the snapshot; the
    positives are those of the same class. Anchors without positives add 0.
    """
    _check_tau(tau)
    n, num_classes, dim = x.shape
    targets = np.asarray(targets)
    flat_idx = np.flatnonzero(targets.reshape(-1) == 1)
    if flat_idx.size == 0:
        return _zero(x)
    anchors = x.reshape(n * num_classes, dim)[flat_idx]
    classes = flat_idx % num_classes
    others, other_classes = anchors, classes
    if snapshot is not None and len(snapshot):
        if snapshot.vectors.shape[1] != dim:
            raise DimensionError(f"snapshot dim {snapshot.vectors.shape[1]} != batch dim {dim}")
        others = concat([anchors, Tensor(snapshot.vectors.astype(x.dtype))], axis=0)
        other_classes = np.concatenate([classes, snapshot.classes])
    b, k = len(classes), len(other_classes)
    logits = (anchors @ others.T) * (1.0 / tau)
    not_self = np.ones((b, k), dtype=bool)
    not_self[np.arange(b), np.arange(b)] = False
    positive = (classes[:, None] == other_classes[None, :]) & not_self
    num_pos = positive.sum(axis=1)
    log_denominator = masked_logsumexp(logits, not_self, axis=1)
    pos_logits = (logits * positive.astype(x.dtype)).sum(axis=1)
    weight = np.where(num_pos > 0, 1.0 / np.maximum(num_pos, 1), 0.0).astype(x.dtype)
    per_anchor = (log_denominator * num_pos.astype(x.dtype) - pos_logits) * weight
    return per_anchor.sum()


def pscl_loss(classes: np.ndarray, c_out: Tensor | None, x: Tensor, targets: np.ndarray,
              snapshot: Snapshot | None, tau: float) -> Tensor:
    """Prototype-to-sample contrastive loss.

    For each class ``j`` with a prototype ``c_j`` (``classes``/``c_out`` from
    :func:`project_prototypes`): positives are the batch's activated ``x[:, j]``
    plus snapshot entries of class ``j``; negatives are the batch's inactive
    ``x[:, j]``. Classes without positives add 0.
    """
    _check_tau(tau)
    if c_out is None or len(classes) == 0:
        return _zero(x)
    targets = np.asarray(targets)
    selected = x[:, classes, :]                                     # (N, J, d')
    batch_logits = (selected * c_out).sum(axis=-1).T * (1.0 / tau)  # (J, N)
    positive = targets[:, classes].T == 1
    denominator = np.ones_like(positive)
    logits = batch_logits
    if snapshot is not None and len(snapshot):
        snap_logits = (c_out @ Tensor(snapshot.vectors.T.astype(x.dtype))) * (1.0 / tau)  # (J, M)
        same = classes[:, None] == snapshot.classes[None, :]
        logits = concat([batch_logits, snap_logits], axis=1)
        positive = np.concatenate([positive, same], axis=1)
        denominator = np.concatenate([denominator, same], axis=1)
    active = positive.any(axis=1).astype(x.dtype)
    terms = masked_logsumexp(logits, denominator, axis=1) - masked_logsumexp(logits, positive, axis=1)
    return (terms * active).sum()


# ---------------------------------------------------------------------------
# prototype export
#
# CSV with header  class_id,count,cin_0..cin_{d-1},cout_0..cout_{d'-1}
# Undefined prototypes (count 0) have empty value cells.


def write_prototypes(path, prototypes: np.ndarray, counts: np.ndarray, projected: dict[int, np.ndarray], d_out: int) -> None:
    path = Path(path)
    d = prototypes.shape[1]
    header = ["class_id", "count"] + [f"cin_{k}" for k in range(d)] + [f"cout_{k}" for k in range(d_out)]
    try:
        with path.open("w") as fh:
            fh.write(",".join(header) + "\n")
            for j in range(prototypes.shape[0]):
                if counts[j] > 0:
                    vals = [repr(float(v)) for v in prototypes[j]] + [repr(float(v)) for v in projected[j]]
                else:
                    vals = [""] * (d + d_out)
                fh.write(",".join([str(j), str(int(counts[j]))] + vals) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write prototypes to {path}: {exc}") from exc
