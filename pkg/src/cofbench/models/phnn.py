"""Two-stream MLP over the topological fingerprint and the pore descriptors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ops
from .spcvae import masked_mae


@dataclass
class PHNNConfig:
    topo_dim: int = 18
    struct_dim: int = 5
    hidden: int = 128
    layers: int = 2
    dropout: float = 0.1
    n_targets: int = 1
    seed: int = 42

    @property
    def feature_dim(self) -> int:
        return 2 * self.hidden

    def to_dict(self):
        return asdict(self)


class PHNN(ad.Module):
    def __init__(self, config: PHNNConfig | None = None):
        super().__init__()
        cfg = config or PHNNConfig()
        if cfg.topo_dim != 18 or cfg.struct_dim != 5:
            raise ValueError("PH-NN expects an 18-value fingerprint and 5 descriptors")
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        drop_rng = np.random.default_rng(cfg.seed + 1)
        widths = [cfg.hidden] * cfg.layers
        self.topo = ad.mlp([cfg.topo_dim] + widths, rng, batchnorm=True, dropout=cfg.dropout, dropout_rng=drop_rng)
        self.struct = ad.mlp([cfg.struct_dim] + widths, rng, batchnorm=True, dropout=cfg.dropout, dropout_rng=drop_rng)
        self.head = ad.Dense(cfg.feature_dim, cfg.n_targets, rng)

    def forward(self, fingerprint, descriptors):
        f = ad.tensor(fingerprint)
        d = ad.tensor(descriptors)
        if f.ndim != 2 or f.shape[1] != self.config.topo_dim:
            raise ad.ShapeError("phnn", f"fingerprint must be (N, {self.config.topo_dim}), got {f.shape}")
        if d.ndim != 2 or d.shape[1] != self.config.struct_dim:
            raise ad.ShapeError("phnn", f"descriptors must be (N, {self.config.struct_dim}), got {d.shape}")
        feature = ops.concat([self.topo(f), self.struct(d)], axis=1)
        return {"feature": feature, "y_hat": self.head(feature)}


def phnn_loss(out, y):
    return masked_mae(out["y_hat"], y)
