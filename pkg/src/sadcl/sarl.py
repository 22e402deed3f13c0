"""Label-level representation learning: patch embedding, encoder, query decoder.

Layout conventions
------------------
* Grids are ``(N, H0, W0, c_raw)``; sequences are ``(N, H0*W0, d)`` in
  row-major cell order.
* Blocks are post-norm: ``x = norm(x + sublayer(x))``.
* The positional embedding is added to attention queries and keys, never to
  values. In the decoder it is added to the keys drawn from the feature map
  only; label queries carry no positional term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .layers import FeedForward, LayerNorm, Linear, Module
from .numeric import Parameter, RngState, Tensor, broadcast_to, get_dtype, softmax


def positional_embedding(height: int, width: int, d: int) -> np.ndarray:
    """Fixed 2D sinusoidal encoding of shape ``(height*width, d)``.

    The first ``d/2`` channels encode the row index and the last ``d/2`` the
    column index; each half is ``[sin(p*f_0..), cos(p*f_0..)]`` with
    ``f_i = 10000 ** (-2i / (d/2))``.
    """
    if d % 4:
        raise DimensionError(f"positional embedding needs d divisible by 4, got {d}")
    half = d // 2
    freqs = 1.0 / 10000.0 ** (np.arange(half // 2) * 2.0 / half)
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")

    def encode(pos):
        angles = pos.reshape(-1, 1) * freqs[None, :]
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    return np.concatenate([encode(rows), encode(cols)], axis=1)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: RngState):
        if d % heads:
            raise DimensionError(f"model width {d} is not divisible by head count {heads}")
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(d, d, rng)
        self.v_proj = Linear(d, d, rng)
        self.out_proj = Linear(d, d, rng)
        self.heads = heads

    def __call__(self, query: Tensor, key: Tensor, value: Tensor) -> tuple[Tensor, np.ndarray]:
        """Returns the attended output and the head-averaged weights ``(N, Tq, Tk)``."""
        n, tq, d = query.shape
        tk = key.shape[1]
        h = self.heads
        dh = d // h
        q = self.q_proj(query).reshape(n, tq, h, dh).transpose(0, 2, 1, 3)
        k = self.k_proj(key).reshape(n, tk, h, dh).transpose(0, 2, 3, 1)
        v = self.v_proj(value).reshape(n, tk, h, dh).transpose(0, 2, 1, 3)
        weights = softmax((q @ k) * (1.0 / math.sqrt(dh)), axis=-1)
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(n, tq, d)
        return self.out_proj(out), weights.data.mean(axis=1)


class EncoderLayer(Module):
    def __init__(self, d: int, heads: int, hidden: int, rng: RngState, activation: str = "relu"):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(d, hidden, rng, activation)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor, pe: np.ndarray) -> Tensor:
        qk = x + pe
        attended, _ = self.self_attn(qk, qk, x)
        x = self.norm1(x + attended)
        return self.norm2(x + self.ffn(x))


class DecoderLayer(Module):
    def __init__(self, d: int, heads: int, hidden: int, rng: RngState,
                 activation: str = "relu", query_self_attn: bool = True):
        self.query_self_attn = query_self_attn
        if query_self_attn:
            self.self_attn = MultiHeadAttention(d, heads, rng)
            self.norm1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, hidden, rng, activation)
        self.norm3 = LayerNorm(d)

    def __call__(self, tgt: Tensor, memory: Tensor, pe: np.ndarray) -> tuple[Tensor, np.ndarray]:
        if self.query_self_attn:
            attended, _ = self.self_attn(tgt, tgt, tgt)
            tgt = self.norm1(tgt + attended)
        attended, weights = self.cross_attn(tgt, memory + pe, memory)
        tgt = self.norm2(tgt + attended)
        return self.norm3(tgt + self.ffn(tgt)), weights


@dataclass
class SARLConfig:
    raw_channels: int
    height: int
    width: int
    num_classes: int
    d: int = 64
    heads: int = 4
    ffn_hidden: int | None = None
    enc_layers: int = 1
    dec_layers: int = 2
    query_self_attn: bool = True
    activation: str = "relu"
    positional: bool = True

    def __post_init__(self):
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("encoder and decoder need at least one layer each")
        if self.d % self.heads:
            raise DimensionError(f"d={self.d} is not divisible by heads={self.heads}")


class SARL(Module):
    """Backbone surrogate, transformer encoder and label-query decoder."""

    def __init__(self, cfg: SARLConfig, rng: RngState):
        hidden = cfg.ffn_hidden or 2 * cfg.d
        self.embed = Linear(cfg.raw_channels, cfg.d, rng)
        self.encoder = [EncoderLayer(cfg.d, cfg.heads, hidden, rng, cfg.activation) for _ in range(cfg.enc_layers)]
        self.queries = Parameter(rng.normal((cfg.num_classes, cfg.d)).astype(get_dtype()))
        self.decoder = [DecoderLayer(cfg.d, cfg.heads, hidden, rng, cfg.activation, cfg.query_self_attn)
                        for _ in range(cfg.dec_layers)]
        self.cfg = cfg
        if cfg.positional:
            self.pe = positional_embedding(cfg.height, cfg.width, cfg.d)
        else:
            self.pe = np.zeros((cfg.height * cfg.width, cfg.d))

    def positional(self, dtype) -> np.ndarray:
        return self.pe.astype(dtype)

    def embed_patches(self, grids) -> Tensor:
        grids = np.asarray(grids)
        if grids.ndim == 3:
            grids = grids[None]
        c = self.cfg
        if grids.shape[1:] != (c.height, c.width, c.raw_channels):
            raise DimensionError(
                f"grid shape {grids.shape[1:]} does not match configured {(c.height, c.width, c.raw_channels)}")
        x = Tensor(grids.astype(self.embed.weight.dtype, copy=False))
        return self.embed(x).reshape(grids.shape[0], c.height * c.width, c.d)

    def encode(self, features: Tensor, pe: np.ndarray) -> Tensor:
        if pe.shape != features.shape[1:]:
            raise DimensionError(f"positional embedding {pe.shape} does not match features {features.shape[1:]}")
        for layer in self.encoder:
            features = layer(features, pe)
        return features

    def decode(self, memory: Tensor, queries: Tensor, pe: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Label-level features ``(N, L, d)`` and final cross-attention ``(N, L, H0*W0)``."""
        n = memory.shape[0]
        tgt = broadcast_to(queries.reshape(1, *queries.shape), (n,) + queries.shape)
        weights = None
        for layer in self.decoder:
            tgt, weights = layer(tgt, memory, pe)
        return tgt, weights

    def __call__(self, grids) -> tuple[Tensor, np.ndarray]:
        features = self.embed_patches(grids)
        pe = self.positional(features.dtype)
        memory = self.encode(features, pe)
        return self.decode(memory, self.queries, pe)


# ---------------------------------------------------------------------------
# attention export
#
# Text format, one block per image:
#
#   image <image_id> <H0> <W0> <L>
#   <H0*W0 space-separated weights for class 0>
#   ...
#   <H0*W0 space-separated weights for class L-1>
#
# Weights are written with repr() so they parse back bit-exactly.


def write_attention(path, image_ids, maps: np.ndarray, height: int, width: int) -> None:
    path = Path(path)
    try:
        with path.open("w") as fh:
            for image_id, grid in zip(image_ids, maps):
                fh.write(f"image {int(image_id)} {height} {width} {grid.shape[0]}\n")
                for row in grid:
                    fh.write(" ".join(repr(float(w)) for w in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write attention maps to {path}: {exc}") from exc


def read_attention(path) -> dict[int, np.ndarray]:
    """Parse an attention export into ``{image_id: array (L, H0, W0)}``."""
    path = Path(path)
    out: dict[int, np.ndarray] = {}
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read attention maps from {path}: {exc}") from exc
    i = 0
    while i < len(lines):
        tag, image_id, h, w, num = lines[i].split()
        if tag != "image":
            raise ValueError(f"{path}:{i + 1}: expected an image header")
        h, w, num = int(h), int(w), int(num)
        rows = [np.array(lines[i + 1 + j].split(), dtype=np.float64) for j in range(num)]
        out[int(image_id)] = np.stack(rows).reshape(num, h, w)
        i += 1 + num
    return out
