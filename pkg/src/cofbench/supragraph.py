"""Coarse-grained bipartite graph of linkers and linkage motifs.

Aromatic rings are found first and excluded; linkage motifs (imine, amide,
C-C) are then located among the remaining atoms from bond-length windows.
Cutting the linkage bonds splits the framework into building blocks, which
collapse by chemical formula into linker nodes. Every linkage node is joined
to every linker node.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .structure import CrystalStructure, adjacency, bond_vectors, infer_bonds

MOTIFS = ("CC", "imine", "amide", "other")
MOTIF_SIZE = {"CC": 2, "imine": 2, "amide": 3}
LINKER_ID_SLOTS = 128
LINKAGE_FEATURES = len(MOTIFS) + 4 + 1
LINKER_FEATURES = 4 + 1 + 1 + LINKER_ID_SLOTS


@dataclass
class GeometryConfig:
    """Bond-length windows (Angstrom). Standard covalent geometry, all tunable."""

    ring_bond: tuple = (1.30, 1.45)
    ring_planarity: float = 0.15
    ring_nonadjacent: tuple = (2.05, 3.00)
    imine_cn: tuple = (1.20, 1.35)
    amide_cn: tuple = (1.28, 1.40)
    amide_co: tuple = (1.18, 1.28)
    cc_single: tuple = (1.40, 1.58)


DEFAULT_GEOMETRY = GeometryConfig()


class SupragraphError(ValueError):
    def __init__(self, missing: str, message: str):
        super().__init__(message)
        self.missing = missing


@dataclass
class LinkageSite:
    motif: str
    atom_indices: tuple
    position: np.ndarray

    def __post_init__(self):
        if self.motif not in MOTIFS:
            raise ValueError(f"unknown motif {self.motif!r}")
        if self.motif in MOTIF_SIZE and len(self.atom_indices) != MOTIF_SIZE[self.motif]:
            raise ValueError(f"{self.motif} site needs {MOTIF_SIZE[self.motif]} atoms")


@dataclass
class Supragraph:
    linkage_nodes: list          # (motif, feature vector)
    linker_nodes: list           # (label, feature vector)
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(a, b) for a in range(len(self.linkage_nodes)) for b in range(len(self.linker_nodes))]

    def linkage_matrix(self) -> np.ndarray:
        return np.array([f for _, f in self.linkage_nodes], dtype=float).reshape(-1, LINKAGE_FEATURES)

    def linker_matrix(self) -> np.ndarray:
        return np.array([f for _, f in self.linker_nodes], dtype=float).reshape(-1, LINKER_FEATURES)

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "complete_bipartite": True,
            "linkage_nodes": [{"motif": m, "features": [float(x) for x in f]} for m, f in self.linkage_nodes],
            "linker_nodes": [{"label": l, "features": [float(x) for x in f]} for l, f in self.linker_nodes],
            "meta": self.meta,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Supragraph":
        doc = json.loads(text)
        return cls([(d["motif"], np.array(d["features"])) for d in doc["linkage_nodes"]],
                   [(d["label"], np.array(d["features"])) for d in doc["linker_nodes"]],
                   doc.get("name", ""), doc.get("meta", {}))


def _inside(x, window):
    return window[0] <= x <= window[1]


class _Bonded:
    """Bond table with distances and minimum-image vectors for quick lookup."""

    def __init__(self, s: CrystalStructure, bonds=None):
        self.bonds = infer_bonds(s) if bonds is None else list(bonds)
        self.adj = adjacency(len(s), self.bonds)
        vecs = bond_vectors(s, self.bonds)
        self.length = {}
        self.vec = {}
        for (i, j, d), v in zip(self.bonds, vecs):
            self.length[i, j] = self.length[j, i] = d
            self.vec[i, j] = v
            self.vec[j, i] = -v

    def d(self, i, j):
        return self.length.get((i, j))


def _cycles(adj, nodes, max_len=6, min_len=5):
    """Simple cycles of length min_len..max_len in the subgraph on ``nodes``,
    each returned once as a tuple starting at its smallest vertex."""
    nodes = set(nodes)
    found = set()
    for start in sorted(nodes):
        stack = [(start, (start,))]
        while stack:
            v, path = stack.pop()
            for w in adj[v]:
                if w not in nodes or w < start:
                    continue
                if w == start and len(path) >= min_len:
                    cyc = path
                    # canonical direction: smaller second vertex
                    if cyc[1] > cyc[-1]:
                        cyc = (cyc[0],) + tuple(reversed(cyc[1:]))
                    found.add(cyc)
                elif w not in path and len(path) < max_len:
                    stack.append((w, path + (w,)))
    return sorted(found)


def find_aromatic_rings(s: CrystalStructure, bonds=None, geometry: GeometryConfig = DEFAULT_GEOMETRY):
    """Aromatic 5/6-rings of C/N atoms as sorted index tuples."""
    bt = bonds if isinstance(bonds, _Bonded) else _Bonded(s, bonds)
    elements = s.elements
    cn = [i for i, e in enumerate(elements) if e in ("C", "N")]
    ring_adj = [set() for _ in range(len(s))]
    for i, j, d in bt.bonds:
        if elements[i] in ("C", "N") and elements[j] in ("C", "N") and _inside(d, geometry.ring_bond):
            ring_adj[i].add(j)
            ring_adj[j].add(i)
    rings = []
    for cyc in _cycles(ring_adj, cn):
        # unwrap through bond vectors; a cycle that does not close wraps the cell
        pos = [np.zeros(3)]
        for a, b in zip(cyc, cyc[1:] + cyc[:1]):
            pos.append(pos[-1] + bt.vec[a, b])
        if np.linalg.norm(pos[-1]) > 1e-3:
            continue
        pos = np.array(pos[:-1])
        # (a) local neighbour count: ring carbons are three-coordinate
        if any(elements[a] == "C" and len(bt.adj[a]) != 3 for a in cyc):
            continue
        centred = pos - pos.mean(axis=0)
        normal = np.linalg.svd(centred)[2][-1]
        if np.max(np.abs(centred @ normal)) > geometry.ring_planarity:
            continue
        # (b) pairwise distances of non-adjacent ring atoms
        k = len(cyc)
        ok = True
        for p in range(k):
            for q in range(p + 2, k):
                if p == 0 and q == k - 1:
                    continue
                if not _inside(np.linalg.norm(pos[p] - pos[q]), geometry.ring_nonadjacent):
                    ok = False
        if ok:
            rings.append(tuple(sorted(cyc)))
    return rings


def detect_aromatic_rings(s: CrystalStructure, bonds=None, geometry: GeometryConfig = DEFAULT_GEOMETRY) -> set[int]:
    return {a for ring in find_aromatic_rings(s, bonds, geometry) for a in ring}


def ring_systems(rings) -> dict[int, int]:
    """Map ring atom -> ring-system id; rings sharing atoms form one system."""
    parent = list(range(len(rings)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner = {}
    for r, ring in enumerate(rings):
        for a in ring:
            if a in owner:
                parent[find(r)] = find(owner[a])
            else:
                owner[a] = r
    return {a: find(r) for a, r in owner.items()}


def _centroid(s, bt, atoms):
    base = s.cart_coords[atoms[0]]
    pts = [base]
    for a in atoms[1:]:
        step = bt.vec.get((atoms[0], a))
        pts.append(base + step if step is not None else s.cart_coords[a])
    return np.mean(pts, axis=0)


def detect_linkages(s: CrystalStructure, excluded, bonds=None,
                    geometry: GeometryConfig = DEFAULT_GEOMETRY, rings=None) -> list[LinkageSite]:
    """Linkage motifs among non-ring atoms, resolved by priority amide > imine > CC."""
    bt = bonds if isinstance(bonds, _Bonded) else _Bonded(s, bonds)
    excluded = set(excluded)
    elements = s.elements
    if rings is None:
        rings = find_aromatic_rings(s, bt, geometry)
    system = ring_systems(rings)
    used: set[int] = set()
    sites: list[LinkageSite] = []

    def free(i):
        return i not in excluded and i not in used

    def add(motif, atoms):
        atoms = tuple(sorted(atoms))
        used.update(atoms)
        sites.append(LinkageSite(motif, atoms, _centroid(s, bt, list(atoms))))

    def ring_neighbours(i):
        return [j for j in bt.adj[i] if j in excluded and elements[j] == "C"]

    for c in range(len(s)):
        if elements[c] != "C" or not free(c):
            continue
        oxy = [o for o in bt.adj[c] if elements[o] == "O" and free(o) and _inside(bt.d(c, o), geometry.amide_co)]
        nit = [n for n in bt.adj[c] if elements[n] == "N" and free(n) and _inside(bt.d(c, n), geometry.amide_cn)]
        if oxy and nit:
            add("amide", (c, min(nit), min(oxy)))

    for c in range(len(s)):
        if elements[c] != "C" or not free(c) or not ring_neighbours(c):
            continue
        nit = [n for n in bt.adj[c] if elements[n] == "N" and free(n) and _inside(bt.d(c, n), geometry.imine_cn)]
        if nit:
            add("imine", (c, min(nit)))

    for c1 in range(len(s)):
        if elements[c1] != "C" or not free(c1):
            continue
        for c2 in sorted(bt.adj[c1]):
            if c2 <= c1 or elements[c2] != "C" or not free(c2) or not free(c1):
                continue
            if not _inside(bt.d(c1, c2), geometry.cc_single):
                continue
            sys1 = {system[j] for j in ring_neighbours(c1) if j in system}
            sys2 = {system[j] for j in ring_neighbours(c2) if j in system}
            if sys1 and sys2 and any(a != b for a in sys1 for b in sys2):
                add("CC", (c1, c2))
    return sites


def _cut_bonds(sites, bt, elements):
    cut = set()
    for site in sites:
        atoms = site.atom_indices
        for a in atoms:
            for b in atoms:
                if a < b and (a, b) in bt.length:
                    if {elements[a], elements[b]} == {"C", "O"}:
                        continue        # carbonyl stays on its building block
                    cut.add((a, b))
    return cut


def linker_components(s: CrystalStructure, sites, bonds=None):
    """Connected components after cutting the bonds inside each linkage site."""
    bt = bonds if isinstance(bonds, _Bonded) else _Bonded(s, bonds)
    cut = _cut_bonds(sites, bt, s.elements)
    parent = list(range(len(s)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j, _ in bt.bonds:
        if (min(i, j), max(i, j)) in cut:
            continue
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    comps: dict[int, list[int]] = {}
    for i in range(len(s)):
        comps.setdefault(find(i), []).append(i)
    return [comps[k] for k in sorted(comps)]


def formula(elements) -> str:
    c = Counter(elements)
    return "".join(f"{e}{c[e]}" for e in ("C", "H", "N", "O", "other") if c[e])


_LINKER_RE = re.compile(r"linker(\d+)")


def linker_ids_from_name(name: str) -> list[int]:
    """Distinct linker ids in a structure name, in first-seen order."""
    out = []
    for m in _LINKER_RE.finditer(name or ""):
        k = int(m.group(1))
        if k not in out:
            out.append(k)
    return out


def _linkage_feature(motif, s, atoms, count):
    f = np.zeros(LINKAGE_FEATURES)
    f[MOTIFS.index(motif)] = 1.0
    el = [s.elements[a] for a in atoms]
    for k, e in enumerate(("C", "H", "O", "N")):
        f[len(MOTIFS) + k] = el.count(e)
    f[-1] = count
    return f


def _linker_feature(elements, n_rings, linker_id):
    f = np.zeros(LINKER_FEATURES)
    for k, e in enumerate(("C", "H", "O", "N")):
        f[k] = elements.count(e)
    f[4] = len(elements)
    f[5] = n_rings
    if linker_id is not None:
        f[6 + linker_id % LINKER_ID_SLOTS] = 1.0
    return f


def build_supragraph(s: CrystalStructure, sites, linker_ids=None, bonds=None, rings=None) -> Supragraph:
    """Complete bipartite graph between linkage-motif nodes and linker-type nodes.

    Sites collapse by motif; building blocks collapse by formula. Linker ids
    are attached only when their number equals the number of linker types
    (then in sorted-formula order against first-seen id order).
    """
    if not sites:
        raise SupragraphError("linkage", f"{s.name}: no linkage sites, cannot build linkage nodes")
    bt = bonds if isinstance(bonds, _Bonded) else _Bonded(s, bonds)
    by_motif: dict[str, list] = {}
    for site in sites:
        by_motif.setdefault(site.motif, []).append(site)
    linkage_nodes = [(m, _linkage_feature(m, s, by_motif[m][0].atom_indices, len(by_motif[m])))
                     for m in MOTIFS if m in by_motif]

    comps = linker_components(s, [x for x in sites if x.atom_indices], bt)
    # a component made only of linkage atoms and hydrogens is not a building block
    linkage_atoms = {a for x in sites for a in x.atom_indices}
    comps = [c for c in comps if any(a not in linkage_atoms and s.elements[a] != "H" for a in c)]
    if not comps:
        raise SupragraphError("linker", f"{s.name}: no linker building blocks found")
    if rings is None:
        rings = find_aromatic_rings(s, bt)
    elements = s.elements
    types: dict[str, tuple] = {}
    for comp in comps:
        key = formula([elements[a] for a in comp])
        if key not in types:
            cs = set(comp)
            n_rings = sum(1 for r in rings if set(r) <= cs)
            types[key] = ([elements[a] for a in comp], n_rings)
    keys = sorted(types)
    ids = list(linker_ids) if linker_ids else []
    assign = dict(zip(keys, ids)) if len(ids) == len(keys) else {}
    linker_nodes = []
    for k in keys:
        label = f"linker{assign[k]}" if k in assign else k
        linker_nodes.append((label, _linker_feature(types[k][0], types[k][1], assign.get(k))))
    return Supragraph(linkage_nodes, linker_nodes, s.name,
                      {"n_sites": len(sites), "n_components": len(comps)})


def structure_supragraph(s: CrystalStructure, geometry: GeometryConfig = DEFAULT_GEOMETRY) -> Supragraph:
    """Featurization entry point; a structure without a detectable linkage
    gets a single placeholder ``other`` linkage node instead of failing."""
    bt = _Bonded(s)
    rings = find_aromatic_rings(s, bt, geometry)
    excluded = {a for r in rings for a in r}
    sites = detect_linkages(s, excluded, bt, geometry, rings)
    if not sites:
        sites = [LinkageSite("other", (), np.zeros(3))]
    return build_supragraph(s, sites, linker_ids_from_name(s.name), bt, rings)
