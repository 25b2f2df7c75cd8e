"""Nine sectional-plane images per structure.

A supercell is cut into thin slabs along nine fixed lattice directions; the
atoms and bonds inside each slab are projected orthogonally onto the plane
and rasterized into a two-channel 64x64 image (atom codes, bond lines).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .structure import CrystalStructure, bond_vectors, infer_bonds, make_supercell

IMAGE_SIZE = 64
ELEMENT_CODES = {"C": 0.25, "O": 0.50, "H": 0.75, "N": 1.00}
DEFAULT_THICKNESS = 2.0
DEFAULT_SUPERCELL = (2, 2, 2)

_NORMALS = (
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (0, 1, 1), (1, 1, 1),
    (-1, 1, 1), (2, 1, 0), (0, 2, 1),
)


def nine_normals() -> list[tuple[int, int, int]]:
    return list(_NORMALS)


@dataclass(frozen=True)
class SectionPlane:
    normal: tuple
    offset: float = 0.5                 # fractional position of the slab centre along the normal
    thickness: float = DEFAULT_THICKNESS

    def __post_init__(self):
        if tuple(self.normal) == (0, 0, 0):
            raise ValueError("plane normal must be non-zero")
        if not self.thickness > 0:
            raise ValueError("slab thickness must be positive")


@dataclass
class Projection:
    """Atoms and bonds of one slab in in-plane (u, v) coordinates."""

    points: np.ndarray          # (n, 2)
    elements: list
    segments: np.ndarray        # (m, 2, 2)
    extent: float               # side of the bounding square of the projected cell

    def __len__(self):
        return len(self.points)


def in_plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    u = np.cross(n, e)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def _cartesian_normal(s: CrystalStructure, normal) -> np.ndarray:
    d = np.asarray(normal, dtype=float) @ s.lattice.cell
    return d / np.linalg.norm(d)


def slice_and_project(s: CrystalStructure, plane: SectionPlane, bonds=None) -> Projection:
    """Project the atoms within ``thickness/2`` of the slab centre plane.

    The slab centre passes through the point at fractional coordinate
    ``offset`` along every axis (the cell centroid for the default 0.5).
    Bonds are kept when both endpoints lie in the slab.
    """
    n_hat = _cartesian_normal(s, plane.normal)
    extent_along = abs(s.lattice.cell @ n_hat).sum()
    if plane.thickness >= extent_along:
        raise ValueError("slab thickness must be smaller than the cell extent along the normal")
    u, v = in_plane_basis(n_hat)
    centre = s.lattice.to_cartesian(np.full(3, plane.offset))
    rel = s.cart_coords - centre
    signed = rel @ n_hat
    inside = np.abs(signed) <= plane.thickness / 2.0
    idx = np.nonzero(inside)[0]
    pts = np.stack([rel[idx] @ u, rel[idx] @ v], axis=1) if len(idx) else np.zeros((0, 2))
    elements = [s.sites[i].element for i in idx]

    if bonds is None:
        bonds = infer_bonds(s)
    segments = np.zeros((0, 2, 2))
    if len(bonds):
        ij = np.array([(b[0], b[1]) for b in bonds], dtype=int)
        keep = inside[ij[:, 0]] & inside[ij[:, 1]]
        if keep.any():
            vec = bond_vectors(s, [bonds[k] for k in np.nonzero(keep)[0]])
            p = rel[ij[keep, 0]]
            q = p + vec
            segments = np.stack([np.stack([p @ u, p @ v], axis=1),
                                 np.stack([q @ u, q @ v], axis=1)], axis=1)

    corners = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=float)
    cc = s.lattice.to_cartesian(corners) - centre
    half = max(np.abs(cc @ u).max(), np.abs(cc @ v).max())
    return Projection(pts, elements, segments, 2.0 * half)


def _to_pixel(coords: np.ndarray, extent: float) -> np.ndarray:
    return (np.asarray(coords, dtype=float) + extent / 2.0) / extent * IMAGE_SIZE


def _dda(p0: np.ndarray, p1: np.ndarray):
    """Pixels hit by evenly spaced samples (at most one pixel apart) along p0->p1."""
    steps = int(math.ceil(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))))
    steps = max(steps, 1)
    t = np.linspace(0.0, 1.0, steps + 1)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    return np.floor(pts).astype(int)


def rasterize(points, elements, segments, extent: float) -> np.ndarray:
    """Render a projection into a (2, 64, 64) float32 array.

    Row index follows the v coordinate, column index the u coordinate. The
    atom channel keeps the maximum element code on collisions; unknown
    elements are not drawn. Bonds are 1-pixel lines drawn by DDA.
    """
    if not extent > 0:
        raise ValueError("raster extent must be positive")
    img = np.zeros((2, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts):
        pix = np.floor(_to_pixel(pts, extent)).astype(int)
        for (col, row), el in zip(pix, elements):
            code = ELEMENT_CODES.get(el, 0.0)
            if code and 0 <= row < IMAGE_SIZE and 0 <= col < IMAGE_SIZE:
                img[0, row, col] = max(img[0, row, col], code)
    segs = np.asarray(segments, dtype=float).reshape(-1, 2, 2)
    for seg in segs:
        p0, p1 = _to_pixel(seg[0], extent), _to_pixel(seg[1], extent)
        pix = _dda(p0, p1)
        ok = (pix[:, 0] >= 0) & (pix[:, 0] < IMAGE_SIZE) & (pix[:, 1] >= 0) & (pix[:, 1] < IMAGE_SIZE)
        pix = pix[ok]
        img[1, pix[:, 1], pix[:, 0]] = 1.0
    return img


def section_set(s: CrystalStructure, supercell=DEFAULT_SUPERCELL,
                thickness: float = DEFAULT_THICKNESS, offset: float = 0.5) -> np.ndarray:
    """Full per-structure pipeline: (9, 2, 64, 64) float32 array in canonical order."""
    big = make_supercell(s, supercell)
    bonds = infer_bonds(big)
    images = []
    for normal in nine_normals():
        proj = slice_and_project(big, SectionPlane(normal, offset, thickness), bonds=bonds)
        images.append(rasterize(proj.points, proj.elements, proj.segments, proj.extent))
    return np.stack(images)


# --------------------------------------------------------------------------
# serialization: flat little-endian float32 + JSON sidecar

def save_section_set(path, name: str, sections: np.ndarray) -> None:
    path = Path(path)
    arr = np.asarray(sections, dtype="<f4")
    if arr.shape != (9, 2, IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"section set must have shape (9, 2, 64, 64), got {arr.shape}")
    path.with_suffix(".bin").write_bytes(arr.tobytes(order="C"))
    sidecar = {"name": name, "shape": list(arr.shape), "dtype": "float32-le",
               "element_codes": ELEMENT_CODES, "normals": [list(n) for n in nine_normals()]}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def load_section_set(path) -> tuple[str, np.ndarray]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    arr = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    return meta["name"], arr.reshape(meta["shape"]).astype(np.float32)
