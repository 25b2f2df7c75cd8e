"""Vietoris-Rips persistence (H0, H1) and the 18-value topological fingerprint.

H0 comes from Kruskal's algorithm. H1 is computed by reducing the coboundary
matrix of the 2-skeleton (persistent cohomology), processing edges from the
last to the first and skipping the spanning-tree edges that already died in
H0. Cohomology and homology give the same pairs for the same simplex order,
and the coboundary form keeps every column short (at most n - 2 triangles).

Simplices are ordered by (filtration value, dimension, vertex tuple).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

DEFAULT_MAX_EDGE = 10.0
DEFAULT_MIN_PERSISTENCE = 0.01
HIST_RANGE = (0.0, 5.0)
HIST_BINS = 3
FINGERPRINT_SIZE = 2 * HIST_BINS * HIST_BINS

# written next to fingerprint files so a different binning can be detected
BINNING = {
    "dims": [0, 1],
    "bins": [HIST_BINS, HIST_BINS],
    "range": list(HIST_RANGE),
    "layout": "dim-major, birth bin then death bin",
    "clamp": True,
}


@dataclass(frozen=True, order=True)
class PersistencePair:
    dim: int
    birth: float
    death: float

    @property
    def persistence(self) -> float:
        return self.death - self.birth


def distance_matrix(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 1:
        return np.zeros((1, 1))
    return squareform(pdist(pts))


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        # keep the smaller root: the elder vertex survives under our order
        if ra < rb:
            self.parent[rb] = ra
        else:
            self.parent[ra] = rb
        return True


def _edges(D: np.ndarray, max_edge: float):
    n = len(D)
    iu, ju = np.triu_indices(n, k=1)
    w = D[iu, ju]
    keep = w <= max_edge
    iu, ju, w = iu[keep], ju[keep], w[keep]
    order = np.lexsort((ju, iu, w))
    return iu[order], ju[order], w[order]


def _h0(n, iu, ju, w, max_edge):
    uf = _UnionFind(n)
    pairs = []
    tree = np.zeros(len(w), dtype=bool)
    for e in range(len(w)):
        if uf.union(int(iu[e]), int(ju[e])):
            tree[e] = True
            pairs.append(PersistencePair(0, 0.0, float(w[e])))
    roots = {uf.find(i) for i in range(n)}
    pairs.extend(PersistencePair(0, 0.0, float(max_edge)) for _ in roots)
    return pairs, tree


def _h1(D, iu, ju, w, tree, max_edge):
    n = len(D)
    within = D <= max_edge
    nn = n * n
    pivot_of = {}      # triangle id -> reduced coboundary column that owns it
    pairs = []

    def tri_filt(t):
        i, r = divmod(t, nn)
        j, k = divmod(r, n)
        return max(D[i, j], D[i, k], D[j, k])

    def low(col):
        return min(col, key=lambda t: (tri_filt(t), t))

    for e in range(len(w) - 1, -1, -1):
        if tree[e]:
            continue
        i, j = int(iu[e]), int(ju[e])
        ks = np.nonzero(within[i] & within[j])[0]
        ks = ks[(ks != i) & (ks != j)]
        if len(ks) == 0:
            pairs.append(PersistencePair(1, float(w[e]), float(max_edge)))
            continue
        tri = np.sort(np.stack([np.full(len(ks), i), np.full(len(ks), j), ks], axis=1), axis=1)
        ids = tri[:, 0] * nn + tri[:, 1] * n + tri[:, 2]
        col = set(int(t) for t in ids)
        # cheapest pivot first, computed vectorized
        filt = np.maximum(w[e], np.maximum(D[i, ks], D[j, ks]))
        piv = int(ids[np.lexsort((ids, filt))[0]])
        while piv in pivot_of:
            col ^= pivot_of[piv]
            if not col:
                break
            piv = low(col)
        if not col:
            pairs.append(PersistencePair(1, float(w[e]), float(max_edge)))
            continue
        pivot_of[piv] = frozenset(col)
        pairs.append(PersistencePair(1, float(w[e]), float(tri_filt(piv))))
    return pairs


def rips_persistence(points, max_edge: float = DEFAULT_MAX_EDGE, keep_zero: bool = False):
    """H0 and H1 pairs of the Rips filtration truncated at ``max_edge``.

    Essential classes get ``death = max_edge``. Pairs born and killed at the
    same filtration value carry no information and are dropped unless
    ``keep_zero`` is set.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("point cloud is empty")
    pts = pts.reshape(-1, 3)
    if not max_edge > 0:
        raise ValueError("max_edge must be positive")
    D = distance_matrix(pts)
    iu, ju, w = _edges(D, max_edge)
    h0, tree = _h0(len(pts), iu, ju, w, max_edge)
    h1 = _h1(D, iu, ju, w, tree, max_edge)
    pairs = h0 + h1
    if not keep_zero:
        pairs = [p for p in pairs if p.death > p.birth]
    return sorted(pairs)


def filter_pairs(pairs, min_persistence: float = DEFAULT_MIN_PERSISTENCE):
    if min_persistence < 0:
        raise ValueError("min_persistence must be non-negative")
    return [p for p in pairs if p.death - p.birth > min_persistence]


def vectorize(pairs) -> np.ndarray:
    """Per-dimension 3x3 (birth, death) count histogram over [0, 5]^2, clamped."""
    out = np.zeros(FINGERPRINT_SIZE)
    lo, hi = HIST_RANGE
    width = (hi - lo) / HIST_BINS
    for p in pairs:
        if p.dim not in (0, 1):
            continue
        b = min(max(int(np.floor((p.birth - lo) / width)), 0), HIST_BINS - 1)
        d = min(max(int(np.floor((p.death - lo) / width)), 0), HIST_BINS - 1)
        out[p.dim * HIST_BINS * HIST_BINS + b * HIST_BINS + d] += 1
    return out


def point_cloud(s, padding: float = 0.0) -> np.ndarray:
    """Cartesian coordinates of the cell's atoms, plus periodic images within
    ``padding`` Angstrom of the cell faces (measured along each face normal)."""
    frac = s.frac_coords
    if padding <= 0:
        return s.cart_coords.copy()
    reach = padding / s.lattice.perpendicular_widths
    reps = np.ceil(reach).astype(int)
    shifts = np.array(np.meshgrid(*[np.arange(-r, r + 1) for r in reps], indexing="ij")).reshape(3, -1).T
    f = (frac[None, :, :] + shifts[:, None, :]).reshape(-1, 3)
    keep = np.all((f >= -reach) & (f < 1 + reach), axis=1)
    return s.lattice.to_cartesian(f[keep])


def topo_fingerprint(s, max_edge: float = DEFAULT_MAX_EDGE,
                     min_persistence: float = DEFAULT_MIN_PERSISTENCE, padding: float = 0.0):
    pairs = rips_persistence(point_cloud(s, padding), max_edge)
    return vectorize(filter_pairs(pairs, min_persistence))
