"""Synthetic multi-label grids with planted class signatures.

Labels
    Classes are visited in index order. Class ``k`` turns on with probability
    ``min(1, b * prod_{j<k active} (1 + B[j, k]))`` where ``B`` is the symmetric
    co-occurrence boost matrix and ``b`` the base rate. Without boosts
    ``b = kappa / L``; with boosts ``b`` is calibrated by bisection on a fixed
    Monte Carlo stream so the expected cardinality stays at ``kappa``.

Grids
    The ``H0 x W0`` grid is cut into ``L`` disjoint tiles laid out row-major on a
    ``rows x cols`` tile lattice (``cols = ceil(sqrt(L))``). Every active class
    adds ``alpha * signature_j`` inside its tile; signatures are drawn once per
    seed. Gaussian noise of std ``noise`` is then added everywhere.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import archive
from .errors import CorruptDatasetError, ParameterError
from .numeric import RngState

MAGIC = "SADCL-DATASET v1"

# stream keys under the dataset seed
_LABELS, _SIGNATURES, _NOISE, _CALIBRATION = 1, 2, 3, 4


@dataclass
class SyntheticSpec:
    num_classes: int = 16
    height: int = 8
    width: int = 8
    channels: int = 16
    cardinality: float = 2.9     # MS-COCO label cardinality
    cooccurrence: dict = field(default_factory=lambda: {(0, 1): 1.5, (2, 3): 1.5, (4, 5): 1.0})
    alpha: float = 1.0
    noise: float = 0.3
    n_train: int = 2000
    n_test: int = 500
    seed: int = 0
    single_label: bool = False   # exactly one active class per image

    def __post_init__(self):
        self.cooccurrence = {tuple(sorted(map(int, k))): float(v) for k, v in dict(self.cooccurrence).items()}
        self.validate()

    def validate(self) -> None:
        L = self.num_classes
        if L < 1:
            raise ParameterError("need at least one class")
        if not self.single_label and not 0 < self.cardinality < L:
            raise ParameterError(f"cardinality must lie in (0, {L}), got {self.cardinality}")
        for (j, k), v in self.cooccurrence.items():
            if j == k or not (0 <= j < L and 0 <= k < L):
                raise ParameterError(f"bad co-occurrence pair {(j, k)}")
            if v < 0:
                raise ParameterError(f"co-occurrence boost must be nonnegative, got {v} for {(j, k)}")
        rows, cols = tile_layout(L)
        if self.height < rows or self.width < cols:
            raise ParameterError(f"{self.height}x{self.width} grid cannot hold {L} tiles ({rows}x{cols})")
        if self.noise < 0:
            raise ParameterError("noise must be nonnegative")

    def boost_matrix(self) -> np.ndarray:
        m = np.zeros((self.num_classes, self.num_classes))
        for (j, k), v in self.cooccurrence.items():
            m[j, k] = m[k, j] = v
        return m

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cooccurrence"] = [[j, k, v] for (j, k), v in sorted(self.cooccurrence.items())]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["cooccurrence"] = {(int(j), int(k)): float(v) for j, k, v in d.get("cooccurrence", [])}
        return cls(**d)


def tile_layout(num_classes: int) -> tuple[int, int]:
    cols = math.ceil(math.sqrt(num_classes))
    return math.ceil(num_classes / cols), cols


def tile_slices(spec: SyntheticSpec) -> list[tuple[slice, slice]]:
    rows, cols = tile_layout(spec.num_classes)
    th, tw = spec.height // rows, spec.width // cols
    return [(slice((j // cols) * th, (j // cols + 1) * th), slice((j % cols) * tw, (j % cols + 1) * tw))
            for j in range(spec.num_classes)]


def tile_mask(spec: SyntheticSpec, j: int) -> np.ndarray:
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    rs, cs = tile_slices(spec)[j]
    mask[rs, cs] = True
    return mask


def class_signatures(spec: SyntheticSpec) -> list[np.ndarray]:
    rng = RngState(spec.seed).child(_SIGNATURES)
    out = []
    for rs, cs in tile_slices(spec):
        out.append(rng.normal((rs.stop - rs.start, cs.stop - cs.start, spec.channels)))
    return out


def _sample_labels(uniforms: np.ndarray, base: float, boosts: np.ndarray) -> np.ndarray:
    n, L = uniforms.shape
    active = np.zeros((n, L), dtype=np.uint8)
    for k in range(L):
        factor = np.prod(np.where(active[:, :k] == 1, 1.0 + boosts[:k, k], 1.0), axis=1)
        active[:, k] = uniforms[:, k] < np.minimum(1.0, base * factor)
    return active


def base_rate(spec: SyntheticSpec, samples: int = 20000) -> float:
    """Per-class base probability giving expected cardinality ``spec.cardinality``."""
    plain = spec.cardinality / spec.num_classes
    boosts = spec.boost_matrix()
    if not boosts.any():
        return plain
    u = RngState(spec.seed).child(_CALIBRATION).uniform((samples, spec.num_classes))
    lo, hi = 0.0, plain
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if _sample_labels(u, mid, boosts).sum(axis=1).mean() < spec.cardinality:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class Dataset:
    spec: SyntheticSpec
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    base_rate: float

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.train_x, self.train_y
        if name == "test":
            return self.test_x, self.test_y
        raise ValueError(f"unknown split {name!r}")

    def mean_cardinality(self, split: str = "train") -> float:
        return float(self.split(split)[1].sum(axis=1).mean())


def generate(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    n = spec.n_train + spec.n_test
    L = spec.num_classes
    root = RngState(spec.seed)
    labels_rng = root.child(_LABELS)
    if spec.single_label:
        rate = 1.0 / L
        picks = np.minimum((labels_rng.uniform(n) * L).astype(np.int64), L - 1)
        labels = np.zeros((n, L), dtype=np.uint8)
        labels[np.arange(n), picks] = 1
    else:
        rate = base_rate(spec)
        labels = _sample_labels(labels_rng.uniform((n, L)), rate, spec.boost_matrix())

    grids = np.zeros((n, spec.height, spec.width, spec.channels))
    for j, (sig, (rs, cs)) in enumerate(zip(class_signatures(spec), tile_slices(spec))):
        on = labels[:, j] == 1
        grids[on, rs, cs, :] += spec.alpha * sig
    if spec.noise > 0:
        grids += spec.noise * root.child(_NOISE).normal(grids.shape)
    t = spec.n_train
    return Dataset(spec, grids[:t], labels[:t], grids[t:], labels[t:], rate)


def save(dataset: Dataset, path) -> str:
    """Write the dataset file; returns the payload checksum."""
    meta = {"spec": dataset.spec.to_dict(), "base_rate": dataset.base_rate,
            "counts": {"train": len(dataset.train_y), "test": len(dataset.test_y)}}
    arrays = {"train_x": dataset.train_x, "train_y": dataset.train_y,
              "test_x": dataset.test_x, "test_y": dataset.test_y}
    return archive.save(path, MAGIC, meta, arrays)


def load(path) -> Dataset:
    meta, arrays = archive.load(path, MAGIC)
    try:
        spec = SyntheticSpec.from_dict(meta["spec"])
        ds = Dataset(spec, arrays["train_x"], arrays["train_y"], arrays["test_x"], arrays["test_y"], meta["base_rate"])
    except (KeyError, TypeError) as exc:
        raise CorruptDatasetError(f"{path}: incomplete manifest ({exc})") from None
    if len(ds.train_y) != meta["counts"]["train"] or len(ds.test_y) != meta["counts"]["test"]:
        raise CorruptDatasetError(f"{path}: sample counts disagree with manifest")
    return ds


def batches(n: int, batch_size: int, shuffle_seed: int | None = None, epoch: int = 0) -> Iterator[np.ndarray]:
    """Index batches over ``range(n)``; the last partial batch is kept.

    With a seed, epoch ``e`` uses the permutation drawn from the stream keyed by ``e``.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(n) if shuffle_seed is None else RngState(shuffle_seed).child(epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
