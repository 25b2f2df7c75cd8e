"""Toy frameworks with real linkage geometry, for fixtures and demos.

Each cell holds stacked layers of 1D chains along a: para-phenylene rings
joined by imine (CH=N), amide (C(=O)-NH) or C-C linkages. Two rings per
period, so a hetero pair of linkers gives two distinct building blocks,
mirroring the `linker<a>_<end>_linker<b>_<end>_<net>_relaxed` naming.

`estimate_descriptors` is a coarse grid stand-in for PLD/LCD/S_acc/rho/phi;
real datasets ship these values precomputed.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .structure import CrystalStructure, Lattice

RING_CC = 1.39
CH = 1.09
NETS = ("tfg", "npo", "pts", "dia", "hcb", "sql", "bor", "ctn", "mdf", "cdl")
ENDS = {"CC": ("C", "C"), "imine": ("CH", "N"), "amide": ("CO", "NH")}
VDW = {"C": 1.70, "H": 1.20, "O": 1.52, "N": 1.55}


def _ring(cx, substituted):
    atoms = []
    for k in range(6):
        t = np.deg2rad(60 * k)
        d = np.array([np.cos(t), np.sin(t), 0.0])
        atoms.append(("C", cx + RING_CC * d))
        if k in (0, 3):
            continue
        if substituted and k == 1:
            o = cx + (RING_CC + 1.36) * d
            atoms.append(("O", o))
            atoms.append(("H", o + 0.96 * d))
        else:
            atoms.append(("H", cx + (RING_CC + CH) * d))
    return atoms


def _link(kind, x0, flip):
    """Linkage atoms starting at para carbon x0, heading +x. Returns (atoms, length)."""
    ex, ey = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    p = np.array([x0, 0, 0])
    if kind == "imine":
        # flip=False: ring on the left owns the CH end
        d = (1.47, 1.28, 1.42) if not flip else (1.42, 1.28, 1.47)
        c_at = p + d[0] * ex if not flip else p + (d[0] + d[1]) * ex
        n_at = p + (d[0] + d[1]) * ex if not flip else p + d[0] * ex
        return [("C", c_at), ("H", c_at + CH * ey), ("N", n_at)], sum(d)
    if kind == "amide":
        d = (1.49, 1.34, 1.41) if not flip else (1.41, 1.34, 1.49)
        c_at = p + d[0] * ex if not flip else p + (d[0] + d[1]) * ex
        n_at = p + (d[0] + d[1]) * ex if not flip else p + d[0] * ex
        return [("C", c_at), ("O", c_at + 1.23 * ey), ("N", n_at), ("H", n_at - 1.01 * ey)], sum(d)
    if kind == "CC":
        c1, c2 = p + 1.50 * ex, p + 3.00 * ex
        return [("C", c1), ("H", c1 + CH * ey), ("C", c2), ("H", c2 - CH * ey)], 4.50
    raise ValueError(f"unknown linkage {kind!r}")


def chain_unit(kind, substituted=(False, True)):
    """Atoms of one period (ring A, link, ring B, link) and its length along x."""
    atoms = []
    x = 0.0
    for r in range(2):
        atoms += _ring(np.array([x, 0, 0]), substituted[r])
        link, length = _link(kind, x + RING_CC, flip=(r == 1))
        atoms += link
        x += 2 * RING_CC + length
    return atoms, x


def chain_framework(kind="imine", ids=(109, 18), net="npo", chain_spacing=10.0,
                    layer_spacing=3.6, n_layers=2, shear=0.0, layer_shift=0.0, rng=None):
    """Periodic layered chain framework; the structure name follows the dataset convention."""
    hetero = ids[0] != ids[1]
    substituted = (False, hetero and kind == "CC")
    unit, period = chain_unit(kind, substituted)
    cell = np.array([[period, 0, 0],
                     [shear, chain_spacing, 0],
                     [0, 0, layer_spacing * n_layers]])
    cart, syms = [], []
    for layer in range(n_layers):
        off = np.array([layer * layer_shift, 0.25 * chain_spacing, (layer + 0.5) * layer_spacing])
        for el, pos in unit:
            cart.append(pos + off)
            syms.append(el)
    lat = Lattice(cell)
    frac = lat.to_fractional(np.array(cart))
    if rng is not None:
        frac = frac + rng.normal(0, 0.002, frac.shape) / np.linalg.norm(cell, axis=1)
    ea, eb = ENDS[kind]
    name = f"linker{ids[0]}_{ea}_linker{ids[1]}_{eb}_{net}_relaxed"
    return CrystalStructure.from_arrays(name, cell, syms, frac)


def random_framework(rng):
    kind = ("imine", "CC", "amide")[int(rng.integers(3))]
    a = int(rng.integers(1, 128))
    b = a if rng.random() < 0.3 else int(rng.integers(1, 128))
    return chain_framework(
        kind, (a, b), NETS[int(rng.integers(len(NETS)))],
        chain_spacing=float(rng.uniform(8.5, 14.0)),
        layer_spacing=float(rng.uniform(3.4, 4.4)),
        n_layers=int(rng.integers(1, 3)),
        shear=float(rng.uniform(-2.0, 2.0)),
        layer_shift=float(rng.uniform(0.0, 1.5)),
        rng=rng,
    )


# --------------------------------------------------------------------------
# grid estimate of pore descriptors

def _free_distance(s: CrystalStructure, spacing: float):
    lat = s.lattice
    n = np.maximum(np.ceil(lat.lengths / spacing).astype(int), 4)
    axes = [np.arange(k) / k for k in n]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    shifts = np.array([[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])
    f = s.frac_coords
    img = (f[None] + shifts[:, None]).reshape(-1, 3)
    radii = np.tile([VDW.get(e, 1.7) for e in s.elements], len(shifts))
    tree = cKDTree(lat.to_cartesian(img))
    k = min(12, len(img))
    d, idx = tree.query(lat.to_cartesian(g), k=k)
    d = d.reshape(len(g), k)
    idx = idx.reshape(len(g), k)
    free = np.min(d - radii[idx], axis=1)
    return free.reshape(tuple(n)), n


def _percolates(mask):
    """Does the open region connect a cell to its own periodic image along any axis?"""
    labels, count = ndimage.label(mask)
    if count == 0:
        return False
    for ax in range(3):
        first = np.take(labels, 0, axis=ax)
        last = np.take(labels, -1, axis=ax)
        both = (first > 0) & (last > 0)
        if np.any(first[both] == last[both]):
            return True
    return False


def estimate_descriptors(s: CrystalStructure, spacing: float = 0.5) -> dict:
    """PLD, LCD (Angstrom), S_acc (m2/g), rho (g/cm3), phi from a probe-free grid."""
    free, n = _free_distance(s, spacing)
    lcd = 2.0 * max(float(free.max()), 0.0)
    lo, hi = 0.0, max(float(free.max()), 0.0)
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if _percolates(free > mid):
            lo = mid
        else:
            hi = mid
    pld = 2.0 * lo
    phi = float(np.mean(free > 0))
    shell = float(np.mean((free > 0) & (free <= spacing)))
    area = shell * s.lattice.volume / spacing          # Angstrom^2 per cell
    mass_g = s.mass * 1.66053906660e-24
    s_acc = area * 1e-20 / mass_g
    return {"PLD": round(pld, 6), "LCD": round(lcd, 6), "S_acc": round(s_acc, 3),
            "rho": round(s.density, 6), "phi": round(phi, 6)}


# --------------------------------------------------------------------------
# toy regression task spanning all three modalities

MOTIF_CODE = {"imine": 1.0, "amide": -1.0}


def _z(v):
    v = np.asarray(v, dtype=float)
    sd = v.std()
    return (v - v.mean()) / (sd if sd > 0 else 1.0)


def ablation_targets(desc, sections, graphs, rng, noise=0.05):
    """Smooth target mixing pore descriptors, section statistics and graph composition.

    desc: (N, 5) PLD, LCD, S_acc, rho, phi; sections: (N, 9, 2, H, W); graphs: supragraphs.
    Each part is standardized, the sum is scaled to unit variance before noise.
    """
    desc = np.asarray(desc, dtype=float)
    pore = np.tanh(_z(desc[:, 1])) + 0.5 * _z(desc[:, 4])
    bond_fill = np.asarray(sections)[:, :, 1].mean(axis=(1, 2, 3))
    motif = np.array([MOTIF_CODE.get(g.linkage_nodes[0][0], 0.0) for g in graphs])
    blocks = np.array([len(g.linker_nodes) for g in graphs], dtype=float)
    y = (_z(pore) + _z(bond_fill) + _z(motif + 0.5 * blocks)) / np.sqrt(3.0)
    return y + noise * rng.normal(size=len(y))


def demo_labels(desc, rng, noise=0.02) -> dict:
    """Positive VSA-style labels from pore descriptors, for the demo pipeline only.

    Selectivity peaks near LCD 8 A, uptake grows with void fraction, and the
    working capacity stays a fraction (0.3 to 0.8) of the uptake.
    """
    desc = np.asarray(desc, dtype=float)
    lcd, phi = desc[:, 1], desc[:, 4]
    eps = lambda: 1.0 + noise * rng.normal(size=len(desc))
    s = (2.0 + 6.0 * np.exp(-(((lcd - 8.0) / 4.0) ** 2))) * eps()
    n_ads = (0.3 + 1.5 * phi + 0.02 * lcd) * eps()
    frac = 0.3 + 0.5 / (1.0 + np.exp(-(lcd - 10.0) / 3.0))
    return {"S_CH4_H2_VSA": s, "dN_CH4_VSA": n_ads * frac, "N_CH4_1bar": n_ads}


def ablation_dataset(n=500, seed=0, noise=0.05):
    """``n`` random frameworks, featurized, with ``ablation_targets`` as the single target."""
    from .models.data import DESCRIPTORS, Dataset, featurize

    rng = np.random.default_rng(seed)
    feats, desc = [], []
    for _ in range(n):
        s = random_framework(rng)
        d = estimate_descriptors(s)
        feats.append(featurize(s))
        desc.append([d[k] for k in DESCRIPTORS])
    desc = np.array(desc)
    sections = np.stack([f["sections"] for f in feats])
    y = ablation_targets(desc, sections, [f["graph"] for f in feats], rng, noise)
    return Dataset.from_features(feats, desc, y, ["ablation"])
