"""Periodic crystal model, CIF reading/writing and minimum-image geometry.

All inputs are treated as P1: symmetry operators in a CIF are ignored
(with a warning) and the listed sites are taken as the full cell content.
"""

from __future__ import annotations

import logging
import math
import re
import shlex
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CHON = ("C", "H", "O", "N")

# Standard covalent radii (Angstrom), Cordero et al. 2008 values.
COVALENT_RADII = {
    "H": 0.31, "B": 0.84, "C": 0.76, "N": 0.71, "O": 0.66, "F": 0.57,
    "Si": 1.11, "P": 1.07, "S": 1.05, "Cl": 1.02, "Br": 1.20, "I": 1.39,
    "Zn": 1.22, "Cu": 1.32, "Li": 1.28, "Na": 1.66,
}
ATOMIC_MASSES = {
    "H": 1.008, "B": 10.81, "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998,
    "Si": 28.085, "P": 30.974, "S": 32.06, "Cl": 35.45, "Br": 79.904, "I": 126.90,
    "Zn": 65.38, "Cu": 63.546, "Li": 6.94, "Na": 22.990,
}
DEFAULT_RADIUS = 0.80
BOND_TOLERANCE = 0.40
AMU_PER_A3_TO_G_PER_CM3 = 1.66053906660


class CifParseError(ValueError):
    """Raised for malformed or incomplete CIF input."""


def _wrap(frac: np.ndarray) -> np.ndarray:
    out = np.mod(frac, 1.0)
    # np.mod(-1e-17, 1.0) == 1.0 in floating point
    out[out >= 1.0] = 0.0
    return out


@dataclass(frozen=True)
class Lattice:
    """Rows of ``cell`` are the lattice vectors a, b, c in Angstrom."""

    cell: np.ndarray

    def __post_init__(self):
        cell = np.array(self.cell, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(cell)):
            raise ValueError("lattice contains non-finite entries")
        if np.linalg.det(cell) <= 0:
            raise ValueError("lattice must be right-handed and non-degenerate")
        cell.setflags(write=False)
        object.__setattr__(self, "cell", cell)

    @classmethod
    def from_parameters(cls, a, b, c, alpha, beta, gamma) -> "Lattice":
        al, be, ga = (math.radians(x) for x in (alpha, beta, gamma))
        cos_al, cos_be, cos_ga = math.cos(al), math.cos(be), math.cos(ga)
        sin_ga = math.sin(ga)
        # snap exact right angles so orthogonal cells stay exactly diagonal
        if abs(gamma - 90.0) < 1e-12:
            cos_ga, sin_ga = 0.0, 1.0
        if abs(alpha - 90.0) < 1e-12:
            cos_al = 0.0
        if abs(beta - 90.0) < 1e-12:
            cos_be = 0.0
        cx = c * cos_be
        cy = c * (cos_al - cos_be * cos_ga) / sin_ga
        cz2 = c * c - cx * cx - cy * cy
        if cz2 <= 0:
            raise ValueError("cell angles do not describe a valid cell")
        return cls(np.array([
            [a, 0.0, 0.0],
            [b * cos_ga, b * sin_ga, 0.0],
            [cx, cy, math.sqrt(cz2)],
        ]))

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.cell))

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.cell, axis=1)

    @property
    def angles(self) -> np.ndarray:
        a, b, c = self.cell
        def ang(u, v):
            cosv = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
            return math.degrees(math.acos(max(-1.0, min(1.0, cosv))))
        return np.array([ang(b, c), ang(a, c), ang(a, b)])

    @property
    def perpendicular_widths(self) -> np.ndarray:
        """Distances between opposite cell faces."""
        recip = np.linalg.inv(self.cell).T
        return 1.0 / np.linalg.norm(recip, axis=1)

    def is_orthogonal(self, tol: float = 1e-6) -> bool:
        return bool(np.all(np.abs(self.angles - 90.0) <= tol))

    def to_cartesian(self, frac: np.ndarray) -> np.ndarray:
        return np.asarray(frac, dtype=float) @ self.cell

    def to_fractional(self, cart: np.ndarray) -> np.ndarray:
        return np.asarray(cart, dtype=float) @ np.linalg.inv(self.cell)


@dataclass(frozen=True)
class AtomSite:
    element: str            # one of C, H, O, N or "other"
    frac: tuple
    symbol: str = ""        # raw symbol as read; equals element for C/H/O/N

    def __post_init__(self):
        if not self.symbol:
            object.__setattr__(self, "symbol", self.element)


def canonical_element(symbol: str) -> str:
    sym = symbol.strip()
    return sym if sym in CHON else "other"


@dataclass(frozen=True)
class CrystalStructure:
    name: str
    lattice: Lattice
    sites: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.name:
            raise ValueError("structure name must be non-empty")
        if len(self.sites) == 0:
            raise ValueError("structure must contain at least one site")
        object.__setattr__(self, "sites", tuple(self.sites))

    @classmethod
    def from_arrays(cls, name: str, cell, symbols: Sequence[str], frac) -> "CrystalStructure":
        frac = _wrap(np.asarray(frac, dtype=float).reshape(-1, 3))
        lattice = cell if isinstance(cell, Lattice) else Lattice(np.asarray(cell, dtype=float))
        sites = tuple(
            AtomSite(canonical_element(s), tuple(float(x) for x in f), s)
            for s, f in zip(symbols, frac)
        )
        return cls(name, lattice, sites)

    def __len__(self) -> int:
        return len(self.sites)

    @cached_property
    def frac_coords(self) -> np.ndarray:
        arr = np.array([s.frac for s in self.sites], dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def cart_coords(self) -> np.ndarray:
        arr = self.lattice.to_cartesian(self.frac_coords)
        arr.setflags(write=False)
        return arr

    @property
    def elements(self) -> list[str]:
        return [s.element for s in self.sites]

    @property
    def symbols(self) -> list[str]:
        return [s.symbol for s in self.sites]

    @property
    def mass(self) -> float:
        return float(sum(ATOMIC_MASSES.get(s, 0.0) for s in self.symbols))

    @property
    def density(self) -> float:
        """Mass density in g/cm^3."""
        return self.mass / self.lattice.volume * AMU_PER_A3_TO_G_PER_CM3

    def element_counts(self) -> dict[str, int]:
        counts = {e: 0 for e in (*CHON, "other")}
        for e in self.elements:
            counts[e] += 1
        return counts


# --------------------------------------------------------------------------
# CIF I/O

_CELL_TAGS = ("_cell_length_a", "_cell_length_b", "_cell_length_c",
              "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma")
_VECTOR_TAGS = ("_cell_vector_a", "_cell_vector_b", "_cell_vector_c")
_SYMOP_TAGS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")


def _cif_float(token: str, lineno: int, tag: str) -> float:
    # strip standard uncertainty, e.g. 10.123(4)
    cleaned = re.sub(r"\(\d+\)$", "", token.strip())
    try:
        return float(cleaned)
    except ValueError:
        raise CifParseError(f"line {lineno}: non-numeric value {token!r} for {tag}") from None


def _tokenize(line: str) -> list[str]:
    try:
        return shlex.split(line, posix=True)
    except ValueError:
        return line.split()


def parse_cif(text: str, name: str | None = None) -> CrystalStructure:
    """Parse P1 CIF text into a :class:`CrystalStructure`.

    Fractional coordinates are wrapped into [0, 1). Sites with symbols other
    than C/H/O/N are kept with ``element="other"``.
    """
    lines = text.splitlines()
    scalars: dict[str, tuple[str, int]] = {}
    vectors: dict[str, tuple[list[str], int]] = {}
    data_name = None
    loops: list[tuple[list[str], list[tuple[list[str], int]]]] = []

    i = 0
    n = len(lines)
    while i < n:
        raw = lines[i]
        line = raw.strip()
        lineno = i + 1
        if not line or line.startswith("#"):
            i += 1
            continue
        if line.startswith("data_"):
            data_name = line[5:].strip() or None
            i += 1
            continue
        if line.lower() == "loop_":
            headers: list[str] = []
            rows: list[tuple[list[str], int]] = []
            i += 1
            while i < n and lines[i].strip().startswith("_"):
                headers.append(lines[i].strip().split()[0])
                i += 1
            pending: list[str] = []
            pending_line = i + 1
            while i < n:
                s = lines[i].strip()
                if not s or s.startswith("#"):
                    i += 1
                    continue
                if s.startswith("_") or s.lower() == "loop_" or s.startswith("data_"):
                    break
                if not pending:
                    pending_line = i + 1
                pending.extend(_tokenize(s))
                while len(pending) >= len(headers) and headers:
                    rows.append((pending[: len(headers)], pending_line))
                    pending = pending[len(headers):]
                i += 1
            loops.append((headers, rows))
            continue
        if line.startswith("_"):
            parts = _tokenize(line)
            tag = parts[0]
            if tag in _VECTOR_TAGS:
                vectors[tag] = (parts[1:4], lineno)
            elif len(parts) >= 2:
                scalars[tag] = (parts[1], lineno)
            i += 1
            continue
        i += 1

    if any(t in vectors for t in _VECTOR_TAGS):
        missing = [t for t in _VECTOR_TAGS if t not in vectors]
        if missing:
            raise CifParseError(f"missing cell tag {missing[0]}")
        cell = np.array([[_cif_float(x, vectors[t][1], t) for x in vectors[t][0]]
                         for t in _VECTOR_TAGS])
        lattice = Lattice(cell)
    else:
        for tag in _CELL_TAGS:
            if tag not in scalars:
                raise CifParseError(f"missing cell tag {tag}")
        params = [_cif_float(scalars[t][0], scalars[t][1], t) for t in _CELL_TAGS]
        lattice = Lattice.from_parameters(*params)

    site_loop = None
    for headers, rows in loops:
        if any(h in _SYMOP_TAGS for h in headers):
            nontrivial = [r for r, _ in rows if r and r[-1].replace(" ", "").lower() != "x,y,z"]
            if nontrivial:
                log.warning("symmetry operators present; treating structure as P1")
        if "_atom_site_fract_x" in headers:
            site_loop = (headers, rows)
    if site_loop is None:
        raise CifParseError("missing atom-site loop with tag _atom_site_fract_x")
    headers, rows = site_loop
    for tag in ("_atom_site_fract_y", "_atom_site_fract_z"):
        if tag not in headers:
            raise CifParseError(f"missing atom-site tag {tag}")
    if "_atom_site_type_symbol" in headers:
        sym_col = headers.index("_atom_site_type_symbol")
        from_label = False
    elif "_atom_site_label" in headers:
        sym_col = headers.index("_atom_site_label")
        from_label = True
    else:
        raise CifParseError("missing atom-site tag _atom_site_type_symbol")
    cols = [headers.index(t) for t in ("_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z")]

    symbols, frac = [], []
    for row, lineno in rows:
        sym = row[sym_col]
        if from_label:
            m = re.match(r"[A-Z][a-z]?", sym)
            sym = m.group(0) if m else sym
        sym = re.sub(r"[^A-Za-z]", "", sym) or sym
        symbols.append(sym)
        frac.append([_cif_float(row[c], lineno, headers[c]) for c in cols])
    if not symbols:
        raise CifParseError("atom-site loop contains no sites")

    return CrystalStructure.from_arrays(name or data_name or "structure", lattice, symbols, frac)


def write_cif(s: CrystalStructure) -> str:
    """Canonical P1 serialization; fractional coordinates use 9 decimals."""
    a, b, c = s.lattice.lengths
    al, be, ga = s.lattice.angles
    out = [f"data_{s.name}", "_symmetry_space_group_name_H-M 'P 1'"]
    for tag, val in zip(_CELL_TAGS, (a, b, c, al, be, ga)):
        out.append(f"{tag} {val:.12f}")
    out += ["loop_", "_atom_site_label", "_atom_site_type_symbol",
            "_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z"]
    for k, site in enumerate(s.sites):
        x, y, z = site.frac
        out.append(f"{site.symbol}{k + 1} {site.symbol} {x:.9f} {y:.9f} {z:.9f}")
    return "\n".join(out) + "\n"


def read_cif(path) -> CrystalStructure:
    from pathlib import Path
    p = Path(path)
    return parse_cif(p.read_text(), name=p.stem)


# --------------------------------------------------------------------------
# geometry

def make_supercell(s: CrystalStructure, reps=(2, 2, 2)) -> CrystalStructure:
    reps = tuple(int(r) for r in reps)
    if len(reps) != 3 or any(r < 1 for r in reps):
        raise ValueError(f"supercell repetitions must be >= 1, got {reps}")
    if reps == (1, 1, 1):
        return s
    scale = np.array(reps, dtype=float)
    shifts = np.array(list(product(*(range(r) for r in reps))), dtype=float)
    frac = s.frac_coords
    new_frac = ((frac[None, :, :] + shifts[:, None, :]) / scale).reshape(-1, 3)
    symbols = s.symbols * len(shifts)
    cell = s.lattice.cell * scale[:, None]
    return CrystalStructure.from_arrays(s.name, cell, symbols, new_frac)


_IMAGES = np.array(list(product((-1, 0, 1), repeat=3)), dtype=float)


def minimum_image(lattice: Lattice, dfrac: np.ndarray) -> np.ndarray:
    """Cartesian minimum-image vectors for fractional differences (..., 3)."""
    d = np.asarray(dfrac, dtype=float)
    d = d - np.round(d)
    if lattice.is_orthogonal():
        return d @ lattice.cell
    cand = (d[..., None, :] + _IMAGES) @ lattice.cell     # (..., 27, 3)
    idx = np.argmin(np.einsum("...ij,...ij->...i", cand, cand), axis=-1)
    return np.take_along_axis(cand, idx[..., None, None], axis=-2)[..., 0, :]


def periodic_distance(s: CrystalStructure, i: int, j: int) -> float:
    n = len(s)
    for k in (i, j):
        if not 0 <= k < n:
            raise IndexError(f"site index {k} out of range for {n} sites")
    if i == j:
        return 0.0
    f = s.frac_coords
    return float(np.linalg.norm(minimum_image(s.lattice, f[j] - f[i])))


def neighbor_pairs(s: CrystalStructure, cutoff: float) -> list[tuple[int, int, float]]:
    """Unordered site pairs within ``cutoff`` under the minimum image.

    Uses cell-list binning in fractional space; each bin is at least
    ``cutoff`` thick perpendicular to its faces.
    """
    if not cutoff > 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    frac = s.frac_coords
    n = len(frac)
    widths = s.lattice.perpendicular_widths
    nbins = np.maximum(1, np.floor(widths / cutoff).astype(int))
    bidx = np.minimum((frac * nbins).astype(int), nbins - 1)
    flat = np.ravel_multi_index(bidx.T, nbins)
    order = np.argsort(flat, kind="stable")
    members: dict[int, np.ndarray] = {}
    uniq, starts = np.unique(flat[order], return_index=True)
    bounds = list(starts) + [n]
    for k, u in enumerate(uniq):
        members[int(u)] = order[bounds[k]:bounds[k + 1]]

    offsets = [sorted({o % nb for o in (-1, 0, 1)}) for nb in nbins]
    result: list[tuple[int, int, float]] = []
    cut2 = cutoff * cutoff
    for key, idx_a in members.items():
        ba = np.array(np.unravel_index(key, nbins))
        neigh_keys = set()
        for dx in offsets[0]:
            for dy in offsets[1]:
                for dz in offsets[2]:
                    bb = (ba + (dx, dy, dz)) % nbins
                    neigh_keys.add(int(np.ravel_multi_index(tuple(bb), nbins)))
        cand = [members[k] for k in sorted(neigh_keys) if k in members]
        if not cand:
            continue
        idx_b = np.concatenate(cand)
        dvec = minimum_image(s.lattice, frac[idx_b][None, :, :] - frac[idx_a][:, None, :])
        d2 = np.einsum("ijk,ijk->ij", dvec, dvec)
        ii, jj = np.nonzero((d2 <= cut2) & (idx_a[:, None] < idx_b[None, :]))
        for p, q in zip(ii, jj):
            result.append((int(idx_a[p]), int(idx_b[q]), float(math.sqrt(d2[p, q]))))
    result.sort()
    return result


def bond_cutoff(sym_i: str, sym_j: str, tolerance: float = BOND_TOLERANCE) -> float:
    return COVALENT_RADII.get(sym_i, DEFAULT_RADIUS) + COVALENT_RADII.get(sym_j, DEFAULT_RADIUS) + tolerance


def infer_bonds(s: CrystalStructure, tolerance: float = BOND_TOLERANCE) -> list[tuple[int, int, float]]:
    """Bonds by the covalent-radius rule d <= r_i + r_j + tolerance."""
    syms = s.symbols
    rmax = max(COVALENT_RADII.get(x, DEFAULT_RADIUS) for x in set(syms))
    pairs = neighbor_pairs(s, 2 * rmax + tolerance)
    return [(i, j, d) for i, j, d in pairs
            if d <= bond_cutoff(syms[i], syms[j], tolerance) and d > 0.1]


def bond_vector(s: CrystalStructure, i: int, j: int) -> np.ndarray:
    f = s.frac_coords
    return minimum_image(s.lattice, f[j] - f[i])


def bond_vectors(s: CrystalStructure, bonds) -> np.ndarray:
    """Minimum-image vectors i->j for a bond list, shape (m, 3)."""
    if not len(bonds):
        return np.zeros((0, 3))
    ij = np.array([(b[0], b[1]) for b in bonds], dtype=int)
    f = s.frac_coords
    return minimum_image(s.lattice, f[ij[:, 1]] - f[ij[:, 0]])


def adjacency(n: int, bonds: Iterable[tuple[int, int, float]]) -> list[set[int]]:
    adj: list[set[int]] = [set() for _ in range(n)]
    for i, j, _ in bonds:
        adj[i].add(j)
        adj[j].add(i)
    return adj
