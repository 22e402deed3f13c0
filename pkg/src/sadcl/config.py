"""Run configuration and its flat ``key = value`` text format.

One key per line, ``#`` starts a comment. Keys are exactly the field names of
:class:`RunConfig`. Booleans are ``true``/``false``. ``data_cooccurrence`` is a
``;``-separated list of ``j-k:boost`` entries (empty for no boosts).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SyntheticSpec
from .errors import ConfigError


@dataclass
class RunConfig:
    # label-level representation model
    d: int = 64
    heads: int = 4
    ffn_hidden: int = 0              # 0 means 2 * d
    enc_layers: int = 1
    dec_layers: int = 2
    query_self_attn: bool = True
    activation: str = "relu"
    positional: bool = True
    # projection head
    d_hidden: int = 64
    d_proj: int = 32
    normalize: bool = True
    # losses
    sscl_on: bool = True
    pscl_on: bool = True
    tau: float = 0.1
    eps: float = 0.8
    bank_capacity: int = 64
    snapshot_size: int = 0           # 0 means round(batch_size * mean train cardinality)
    w_bce: float = 1.0
    w_s2s: float = 1.0
    w_p2s: float = 1.0
    # optimizer; a from-scratch model at batch 16 needs a far larger rate than fine-tuning would
    lr: float = 1e-3
    weight_decay: float = 5e-3
    epochs: int = 20
    batch_size: int = 16
    warmup: float = 0.3
    # data: a dataset file, or a synthetic spec generated on the fly
    dataset: str = ""
    data_num_classes: int = 16
    data_height: int = 8
    data_width: int = 8
    data_channels: int = 16
    data_cardinality: float = 2.9
    data_cooccurrence: str = "0-1:1.5;2-3:1.5;4-5:1.0"
    data_alpha: float = 1.0
    data_noise: float = 0.3
    data_n_train: int = 2000
    data_n_test: int = 500
    data_seed: int = 0
    data_single_label: bool = False
    # run
    seed: int = 0
    precision: str = "train"
    deterministic: bool = True
    out: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.d > 0 and self.d % self.heads == 0, f"d={self.d} must be a positive multiple of heads={self.heads}"),
            (not self.positional or self.d % 4 == 0, "positional embedding needs d divisible by 4"),
            (self.enc_layers >= 1 and self.dec_layers >= 1, "need at least one encoder and one decoder layer"),
            (self.activation in ("relu", "gelu"), f"unknown activation {self.activation!r}"),
            (self.tau > 0, "tau must be positive"),
            (0 < self.eps < 1, "eps must be in (0, 1)"),
            (self.bank_capacity >= 1, "bank_capacity must be >= 1"),
            (self.snapshot_size >= 0, "snapshot_size must be >= 0"),
            (self.lr > 0 and self.weight_decay >= 0, "lr must be positive and weight_decay nonnegative"),
            (self.epochs >= 1 and self.batch_size >= 1, "epochs and batch_size must be >= 1"),
            (0 < self.warmup < 1, "warmup must be in (0, 1)"),
            (self.precision in ("train", "high"), f"precision must be train or high, got {self.precision!r}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden or 2 * self.d

    def data_spec(self) -> SyntheticSpec:
        try:
            return SyntheticSpec(
                num_classes=self.data_num_classes, height=self.data_height, width=self.data_width,
                channels=self.data_channels, cardinality=self.data_cardinality,
                cooccurrence=parse_cooccurrence(self.data_cooccurrence), alpha=self.data_alpha,
                noise=self.data_noise, n_train=self.data_n_train, n_test=self.data_n_test,
                seed=self.data_seed, single_label=self.data_single_label)
        except ValueError as exc:
            raise ConfigError(f"invalid data spec: {exc}") from exc

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            values[key] = _parse(value, types[key], f"{source}:{lineno}")
        return cls(**values)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_text())


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_text(text, str(path))


def parse_cooccurrence(text: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            pair, boost = item.split(":")
            j, k = pair.split("-")
            out[(int(j), int(k))] = float(boost)
        except ValueError:
            raise ConfigError(f"bad co-occurrence entry {item!r}; expected j-k:boost") from None
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value: str, typ: str, where: str):
    try:
        if typ == "bool":
            if value.lower() not in ("true", "false"):
                raise ValueError(value)
            return value.lower() == "true"
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {typ}") from None
