"""Sectional-plane conditional VAE.

Each of the nine section images is encoded separately into (mu, logvar);
the nine sampled latents are fused by a 1D convolution over the plane
axis, concatenated with the mean latent and a small descriptor MLP, and
regressed. A transposed-conv decoder reconstructs every plane.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ops

N_PLANES = 9
IMAGE = (2, 64, 64)


@dataclass
class SPcVAEConfig:
    latent_dim: int = 128
    channels: tuple = (32, 64, 128, 256)
    kernel: int = 3
    dropout: float = 0.3
    desc_dim: int = 6
    desc_widths: tuple = (64, 32)
    fuse_channels: int = 8           # conv1d output channels; 4 positions x 8 = 32
    fuse_kernel: int = 3
    fuse_stride: int = 2
    head_hidden: int = 64
    n_targets: int = 1
    alpha: float = 1.0               # ELBO weight
    beta: float = 1.0                # regression weight
    seed: int = 42

    @property
    def fused_dim(self) -> int:
        positions = (N_PLANES - self.fuse_kernel) // self.fuse_stride + 1
        return positions * self.fuse_channels

    @property
    def feature_dim(self) -> int:
        return self.fused_dim + self.latent_dim + self.desc_widths[-1]

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["desc_widths"] = list(self.desc_widths)
        return d


class SPcVAE(ad.Module):
    def __init__(self, config: SPcVAEConfig | None = None):
        super().__init__()
        cfg = config or SPcVAEConfig()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self._rng = np.random.default_rng(cfg.seed + 1)
        k = cfg.kernel
        chans = (IMAGE[0],) + tuple(cfg.channels)
        self.enc = [ad.Conv2d(a, b, k, rng, stride=2, padding=k // 2) for a, b in zip(chans[:-1], chans[1:])]
        self.spatial = IMAGE[1] // 2 ** len(cfg.channels)
        flat = chans[-1] * self.spatial * self.spatial
        self.to_mu = ad.Dense(flat, cfg.latent_dim, rng)
        self.to_logvar = ad.Dense(flat, cfg.latent_dim, rng)
        self.from_z = ad.Dense(cfg.latent_dim, flat, rng)
        rev = tuple(reversed(chans))
        self.dec = [ad.ConvTranspose2d(a, b, k, rng, stride=2, padding=k // 2, output_padding=1)
                    for a, b in zip(rev[:-1], rev[1:])]
        self.fuse = ad.Conv1d(cfg.latent_dim, cfg.fuse_channels, cfg.fuse_kernel, rng, stride=cfg.fuse_stride)
        self.desc_mlp = ad.mlp((cfg.desc_dim,) + tuple(cfg.desc_widths), rng)
        self.drop = ad.Dropout(cfg.dropout, np.random.default_rng(cfg.seed + 2))
        self.head = ad.mlp((cfg.feature_dim, cfg.head_hidden, cfg.n_targets), rng, final_activation=False)
        if cfg.fused_dim + cfg.latent_dim + cfg.desc_widths[-1] != self.config.feature_dim:
            raise AssertionError("feature width contract broken")

    def encode(self, images):
        """images (M, 2, 64, 64) -> mu, logvar (M, latent)."""
        h = images
        for conv in self.enc:
            h = ops.relu(conv(h))
        h = ops.reshape(h, (h.shape[0], -1))
        return self.to_mu(h), self.to_logvar(h)

    def decode(self, z):
        c = self.config.channels[-1]
        h = ops.relu(self.from_z(z))
        h = ops.reshape(h, (z.shape[0], c, self.spatial, self.spatial))
        for k, deconv in enumerate(self.dec):
            h = deconv(h)
            h = ops.sigmoid(h) if k == len(self.dec) - 1 else ops.relu(h)
        return h

    def forward(self, sections, descriptors, eps=None, reconstruct=True):
        """sections (N, 9, 2, 64, 64), descriptors (N, desc_dim).

        In training mode eps is drawn from the model's seeded source unless
        given; in eval mode eps defaults to zero so the forward is deterministic.
        """
        x = ad.tensor(sections)
        if x.ndim != 5 or tuple(x.shape[1:]) != (N_PLANES,) + IMAGE:
            raise ad.ShapeError("spcvae", f"expected (N, 9, 2, 64, 64) sections, got {x.shape}")
        n = x.shape[0]
        flat = ops.reshape(x, (n * N_PLANES,) + IMAGE)
        mu, logvar = self.encode(flat)
        if eps is None:
            eps = (self._rng.standard_normal(mu.shape) if self.training else np.zeros(mu.shape))
        eps = np.asarray(eps, dtype=mu.data.dtype).reshape(mu.shape)
        z = ops.reparameterize(mu, logvar, eps)
        recon = None
        if reconstruct:
            recon = ops.reshape(self.decode(z), (n, N_PLANES) + IMAGE)
        L = self.config.latent_dim
        zp = ops.reshape(z, (n, N_PLANES, L))
        fused = ops.relu(self.fuse(ops.transpose(zp, (0, 2, 1))))
        fused = ops.reshape(fused, (n, -1))
        zbar = ops.mean(zp, axis=1)
        d = self.desc_mlp(ad.tensor(descriptors))
        feature = ops.concat([fused, zbar, d], axis=1)
        y_hat = self.head(self.drop(feature))
        return {
            "recon": recon,
            "mu": ops.reshape(mu, (n, N_PLANES, L)),
            "logvar": ops.reshape(logvar, (n, N_PLANES, L)),
            "feature": feature,
            "y_hat": y_hat,
        }


def masked_mae(y_hat, y):
    """Mean absolute error over the finite entries of y."""
    y = np.asarray(y, dtype=y_hat.data.dtype)
    mask = np.isfinite(y)
    if mask.all():
        return ops.mae(y_hat, y)
    count = max(int(mask.sum()), 1)
    diff = ops.abs(y_hat - np.where(mask, y, 0.0)) * mask.astype(y.dtype)
    return ops.sum(diff) * (1.0 / count)


def spcvae_loss(out, x, y, alpha=1.0, beta=1.0):
    """alpha * (pixel MSE + KL) + beta * MAE."""
    total = None
    if alpha:
        x = np.asarray(x, dtype=out["mu"].data.dtype)
        elbo = ops.mse(out["recon"], x) + ops.kl_gaussian(out["mu"], out["logvar"])
        total = elbo * alpha
    if beta:
        reg = masked_mae(out["y_hat"], y) * beta
        total = reg if total is None else total + reg
    if total is None:
        return ad.Tensor(np.zeros((), dtype=out["mu"].data.dtype))
    return total
