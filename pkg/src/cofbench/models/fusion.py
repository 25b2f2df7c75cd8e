"""Cross-attention fusion over frozen branch features.

The SP-cVAE feature is the single query; the PH-NN and BiG-CAE features
are projected to two key/value rows. The fused prediction is blended with
the SP-cVAE prediction through a learnable softmax gate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ops
from .spcvae import masked_mae


@dataclass
class FusionConfig:
    sp_dim: int = 192
    ph_dim: int = 256
    big_dim: int = 320
    fusion_dim: int = 128
    heads: int = 8
    attn_dropout: float = 0.1
    temperature: float | None = None     # extra logit temperature, off by default
    mlp_hidden: int = 64
    n_targets: int = 1
    main_weight: float = 1.0
    fusion_weight: float = 0.1
    seed: int = 42

    def to_dict(self):
        return asdict(self)


class FusionHead(ad.Module):
    def __init__(self, config: FusionConfig | None = None):
        super().__init__()
        cfg = config or FusionConfig()
        if cfg.fusion_dim % cfg.heads:
            raise ValueError(f"fusion width {cfg.fusion_dim} is not divisible by {cfg.heads} heads")
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self.q_proj = ad.Dense(cfg.sp_dim, cfg.fusion_dim, rng, init="xavier")
        self.ph_proj = ad.Dense(cfg.ph_dim, cfg.fusion_dim, rng, init="xavier")
        self.big_proj = ad.Dense(cfg.big_dim, cfg.fusion_dim, rng, init="xavier")
        self.attn = ad.MultiHeadAttention(cfg.fusion_dim, cfg.heads, rng, cfg.temperature,
                                          cfg.attn_dropout, np.random.default_rng(cfg.seed + 1))
        self.mlp = ad.mlp([cfg.fusion_dim, cfg.mlp_hidden, cfg.n_targets], rng, final_activation=False)
        self.gate_logits = ad.Parameter(np.zeros(2))

    def alpha(self):
        return ops.softmax(self.gate_logits)[0]

    def forward(self, sp_feature, sp_y, ph_feature, big_feature):
        sp = ad.tensor(sp_feature)
        n = sp.shape[0]
        q = ops.reshape(self.q_proj(sp), (n, 1, -1))
        kv = ops.concat([ops.reshape(self.ph_proj(ad.tensor(ph_feature)), (n, 1, -1)),
                         ops.reshape(self.big_proj(ad.tensor(big_feature)), (n, 1, -1))], axis=1)
        h = q + self.attn(q, kv, kv)
        y_fusion = self.mlp(ops.reshape(h, (n, -1)))
        a = self.alpha()
        y_final = ad.tensor(sp_y) * a + y_fusion * (1.0 - a)
        return {"y_fusion": y_fusion, "y_final": y_final, "alpha": a}


def blend(y_sp, y_fusion, gate_logits):
    """Gate blend on plain arrays: alpha * y_sp + (1 - alpha) * y_fusion."""
    g = np.asarray(gate_logits, dtype=float)
    z = np.exp(g - g.max())
    alpha = z[0] / z.sum()
    return alpha * np.asarray(y_sp) + (1.0 - alpha) * np.asarray(y_fusion), alpha


def fusion_loss(out, y, main_weight=1.0, fusion_weight=0.1):
    return masked_mae(out["y_final"], y) * main_weight + masked_mae(out["y_fusion"], y) * fusion_weight
