"""The full network: label-level features, classifier heads and projection head."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .contrastive import ProjectionHead
from .layers import Module
from .numeric import RngState, Tensor, no_grad
from .objective import Classifier
from .sarl import SARL, SARLConfig


class SADCLModel(Module):
    def __init__(self, cfg: RunConfig, num_classes: int, raw_channels: int, height: int, width: int, rng: RngState):
        self.sarl = SARL(SARLConfig(
            raw_channels=raw_channels, height=height, width=width, num_classes=num_classes,
            d=cfg.d, heads=cfg.heads, ffn_hidden=cfg.ffn_width, enc_layers=cfg.enc_layers,
            dec_layers=cfg.dec_layers, query_self_attn=cfg.query_self_attn,
            activation=cfg.activation, positional=cfg.positional), rng.child(0))
        self.classifier = Classifier(num_classes, cfg.d, rng.child(1))
        self.projection = ProjectionHead(cfg.d, cfg.d_hidden, cfg.d_proj, rng.child(2), cfg.activation, cfg.normalize)

    def features(self, grids) -> tuple[Tensor, np.ndarray]:
        return self.sarl(grids)

    def predict(self, grids, batch_size: int = 128) -> tuple[np.ndarray, np.ndarray]:
        """Inference only: scores ``(N, L)`` and final cross-attention ``(N, L, H0*W0)``."""
        scores, maps = [], []
        with no_grad():
            for start in range(0, len(grids), batch_size):
                q, attn = self.sarl(grids[start:start + batch_size])
                scores.append(self.classifier(q).data)
                maps.append(attn)
        return np.concatenate(scores), np.concatenate(maps)
