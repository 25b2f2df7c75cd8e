"""In-memory multi-modal dataset and per-structure featurization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..homology import topo_fingerprint
from ..sections import section_set
from ..structure import CHON, CrystalStructure
from ..supragraph import structure_supragraph

TARGETS = (
    "S_CH4_H2_VSA", "S_CH4_H2_PSA", "dN_CH4_VSA", "dN_CH4_PSA",
    "N_CH4_1bar", "N_H2_1bar", "N_CO2_1bar", "N_N2_1bar", "N_O2_1bar",
    "N_CH4_10bar", "N_CH4_0.1bar",
)
DESCRIPTORS = ("PLD", "LCD", "S_acc", "rho", "phi")
SP_DESCRIPTORS = ("frac_C", "frac_H", "frac_O", "frac_N", "log_atoms", "density")


def sp_descriptors(s: CrystalStructure) -> np.ndarray:
    """Element fractions (C, H, O, N), log(1 + atom count), density."""
    counts = s.element_counts()
    n = len(s)
    return np.array([counts.get(e, 0) / n for e in CHON] + [np.log1p(n), s.density])


def featurize(s: CrystalStructure, supercell=(2, 2, 2), thickness=2.0, max_edge=10.0,
              min_persistence=0.01, padding=0.0) -> dict:
    return {
        "name": s.name,
        "sections": section_set(s, supercell, thickness),
        "sp_desc": sp_descriptors(s),
        "topo": topo_fingerprint(s, max_edge, min_persistence, padding),
        "graph": structure_supragraph(s),
    }


class Standardizer:
    """Column-wise (x - mean) / std fitted on finite entries; std 0 maps to 1."""

    def __init__(self, mean=None, std=None):
        self.mean = None if mean is None else np.asarray(mean, dtype=float)
        self.std = None if std is None else np.asarray(std, dtype=float)

    def fit(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            mean = np.nanmean(x, axis=0) if len(x) else np.zeros(x.shape[1])
            std = np.nanstd(x, axis=0) if len(x) else np.ones(x.shape[1])
        self.mean = np.nan_to_num(mean)
        self.std = np.where(np.isfinite(std) & (std > 1e-12), std, 1.0)
        return self

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["std"])


@dataclass
class Dataset:
    names: list
    sections: np.ndarray                  # (N, 9, 2, 64, 64) float32
    sp_desc: np.ndarray                   # (N, 6)
    topo: np.ndarray                      # (N, 18)
    desc: np.ndarray                      # (N, 5) PLD, LCD, S_acc, rho, phi
    graphs: list                          # per structure (linkage array, linker array)
    targets: np.ndarray                   # (N, T), NaN where missing
    target_names: list = field(default_factory=lambda: [TARGETS[0]])

    def __len__(self):
        return len(self.names)

    @classmethod
    def from_features(cls, feats: list, desc, targets, target_names=None):
        """Stack per-structure ``featurize`` dicts."""
        targets = np.asarray(targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        return cls([f["name"] for f in feats], np.stack([f["sections"] for f in feats]),
                   np.stack([f["sp_desc"] for f in feats]), np.stack([f["topo"] for f in feats]),
                   np.asarray(desc, dtype=float), [f["graph"] for f in feats], targets,
                   list(target_names or TARGETS[:targets.shape[1]]))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Dataset([self.names[i] for i in idx], self.sections[idx], self.sp_desc[idx],
                       self.topo[idx], self.desc[idx], [self.graphs[i] for i in idx],
                       self.targets[idx], list(self.target_names))
