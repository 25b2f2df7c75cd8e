"""Contrastive autoencoder over the bipartite linker/linkage graph.

Graphs in a batch are stacked node-wise; per-graph means and broadcasts are
dense segment matrices, so a whole batch is a handful of matmuls. With a
complete bipartite edge set, the message a node receives is the mean hidden
state of the other node class in its graph.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ops
from ..supragraph import LINKAGE_FEATURES, LINKER_FEATURES, Supragraph, SupragraphError
from .spcvae import masked_mae

# count-valued columns get log1p before entering the network
_LINKAGE_COUNTS = slice(4, LINKAGE_FEATURES)
_LINKER_COUNTS = slice(0, 6)


@dataclass
class BiGCAEConfig:
    encoder_dim: int = 128
    latent_dim: int = 64
    decoder_dim: int = 128
    proj_dim: int = 64
    layers: int = 2
    tau: float = 0.1
    alpha: float = 0.1               # reconstruction weight
    beta: float = 1.0                # contrastive weight
    huber_delta: float = 1.0
    noise: float = 0.1               # augmentation: gaussian feature noise
    mask: float = 0.1                # augmentation: feature masking probability
    n_targets: int = 1
    seed: int = 42

    @property
    def feature_dim(self) -> int:
        return self.latent_dim + 2 * self.encoder_dim

    def to_dict(self):
        return asdict(self)


def node_arrays(g: Supragraph):
    a = g.linkage_matrix().copy()
    b = g.linker_matrix().copy()
    if len(a) == 0:
        raise SupragraphError("linkage", f"{g.name}: graph has no linkage nodes")
    if len(b) == 0:
        raise SupragraphError("linker", f"{g.name}: graph has no linker nodes")
    a[:, _LINKAGE_COUNTS] = np.log1p(a[:, _LINKAGE_COUNTS])
    b[:, _LINKER_COUNTS] = np.log1p(b[:, _LINKER_COUNTS])
    return a, b


class GraphBatch:
    """Stacked node features plus segment matrices for a list of graphs."""

    def __init__(self, graphs, dtype=None):
        dtype = dtype or ad.default_dtype()
        arrays = [g if isinstance(g, tuple) else node_arrays(g) for g in graphs]
        self.n = len(arrays)
        self.xa = np.concatenate([a for a, _ in arrays]).astype(dtype)
        self.xb = np.concatenate([b for _, b in arrays]).astype(dtype)
        self.pool_a, self.spread_a = self._segments([len(a) for a, _ in arrays], dtype)
        self.pool_b, self.spread_b = self._segments([len(b) for _, b in arrays], dtype)
        # reconstruction target: pooled raw features
        self.target = np.concatenate([self.pool_a @ self.xa, self.pool_b @ self.xb], axis=1)

    @staticmethod
    def _segments(sizes, dtype):
        total = int(np.sum(sizes))
        pool = np.zeros((len(sizes), total), dtype=dtype)
        spread = np.zeros((total, len(sizes)), dtype=dtype)
        start = 0
        for g, k in enumerate(sizes):
            pool[g, start:start + k] = 1.0 / k
            spread[start:start + k, g] = 1.0
            start += k
        return pool, spread

    def augmented(self, rng, noise, mask):
        """A view with gaussian noise and random feature masking on raw features."""
        out = object.__new__(GraphBatch)
        out.__dict__.update(self.__dict__)
        for name in ("xa", "xb"):
            x = getattr(self, name)
            keep = (rng.random(x.shape) >= mask).astype(x.dtype)
            setattr(out, name, (x + noise * rng.standard_normal(x.shape).astype(x.dtype)) * keep)
        return out


class BiGCAE(ad.Module):
    def __init__(self, config: BiGCAEConfig | None = None):
        super().__init__()
        cfg = config or BiGCAEConfig()
        if not cfg.tau > 0:
            raise ValueError("contrastive temperature must be positive")
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self._aug_rng = np.random.default_rng(cfg.seed + 1)
        h = cfg.encoder_dim
        self.in_a = ad.Dense(LINKAGE_FEATURES, h, rng)
        self.in_b = ad.Dense(LINKER_FEATURES, h, rng)
        self.self_a = [ad.Dense(h, h, rng) for _ in range(cfg.layers)]
        self.msg_a = [ad.Dense(h, h, rng, bias=False) for _ in range(cfg.layers)]
        self.self_b = [ad.Dense(h, h, rng) for _ in range(cfg.layers)]
        self.msg_b = [ad.Dense(h, h, rng, bias=False) for _ in range(cfg.layers)]
        self.to_latent = ad.mlp([2 * h, h, cfg.latent_dim], rng, final_activation=False)
        self.decoder = ad.mlp([cfg.latent_dim, cfg.decoder_dim, LINKAGE_FEATURES + LINKER_FEATURES], rng,
                              final_activation=False)
        self.projector = ad.mlp([cfg.latent_dim, cfg.proj_dim, cfg.proj_dim], rng, final_activation=False)
        self.head = ad.Dense(cfg.feature_dim, cfg.n_targets, rng)

    def encode(self, batch: GraphBatch):
        ha = ops.relu(self.in_a(batch.xa))
        hb = ops.relu(self.in_b(batch.xb))
        for sa, ma, sb, mb in zip(self.self_a, self.msg_a, self.self_b, self.msg_b):
            mean_a = ops.matmul(batch.pool_a, ha)       # (G, h)
            mean_b = ops.matmul(batch.pool_b, hb)
            ha, hb = (ops.relu(sa(ha) + ops.matmul(batch.spread_a, mb(mean_b))),
                      ops.relu(sb(hb) + ops.matmul(batch.spread_b, ma(mean_a))))
        pooled = ops.concat([ops.matmul(batch.pool_a, ha), ops.matmul(batch.pool_b, hb)], axis=1)
        return self.to_latent(pooled), pooled

    def forward(self, batch):
        if not isinstance(batch, GraphBatch):
            batch = GraphBatch(batch)
        latent, pooled = self.encode(batch)
        feature = ops.concat([latent, pooled], axis=1)
        return {
            "latent": latent,
            "feature": feature,
            "recon": self.decoder(latent),
            "projection": self.projector(latent),
            "y_hat": self.head(feature),
            "target": batch.target,
        }

    def views(self, batch: GraphBatch, rng=None):
        rng = rng or self._aug_rng
        cfg = self.config
        return batch.augmented(rng, cfg.noise, cfg.mask), batch.augmented(rng, cfg.noise, cfg.mask)


def bigcae_loss(out, view_outs, y, alpha=0.1, beta=1.0, tau=0.1, delta=1.0):
    """beta * contrastive + alpha * Huber(recon) + MAE(regression)."""
    total = masked_mae(out["y_hat"], y)
    if alpha:
        target = np.asarray(out["target"], dtype=out["recon"].data.dtype)
        total = total + ops.huber(out["recon"], target, delta) * alpha
    if beta:
        p1, p2 = view_outs[0]["projection"], view_outs[1]["projection"]
        g = p1.shape[0]
        pos = np.concatenate([np.arange(g) + g, np.arange(g)])
        total = total + ops.contrastive_loss(ops.concat([p1, p2], axis=0), pos, tau) * beta
    return total
