"""Separation metrics, pre-screen, weighted composite ranking and its diagnostics."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .autodiff.checkpoint import atomic_write

APS_THRESHOLD = 100.0          # mol/kg, lower bound for high performers
WINDOW_DESCRIPTORS = ("PLD", "LCD", "S_acc", "phi")
# which predicted targets feed each swing mode: (selectivity, working capacity, adsorbed uptake)
MODE_TARGETS = {
    "VSA": ("S_CH4_H2_VSA", "dN_CH4_VSA", "N_CH4_1bar"),
    "PSA": ("S_CH4_H2_PSA", "dN_CH4_PSA", "N_CH4_10bar"),
}


class UndefinedMetricError(ValueError):
    def __init__(self, metric: str, message: str):
        super().__init__(f"{metric}: {message}")
        self.metric = metric


class NameParseError(ValueError):
    def __init__(self, name: str, token: str, message: str):
        super().__init__(f"cannot parse {name!r} at token {token!r}: {message}")
        self.name, self.token = name, token


# ---------------------------------------------------------------- formulas

def selectivity(n_a, n_b, y_a, y_b):
    """Mixture selectivity (N_a / y_a) / (N_b / y_b)."""
    n_a, n_b, y_a, y_b = (np.asarray(v, dtype=float) for v in (n_a, n_b, y_a, y_b))
    if np.any(n_b == 0) or np.any(y_a == 0):
        raise UndefinedMetricError("selectivity", "zero H2 uptake or zero CH4 feed fraction")
    return (n_a / y_a) / (n_b / y_b)


def working_capacity(n_ads, n_des):
    return np.asarray(n_ads, dtype=float) - np.asarray(n_des, dtype=float)


def aps(s, delta_n):
    return np.asarray(s, dtype=float) * np.asarray(delta_n, dtype=float)


def regenerability(delta_n, n_ads):
    """R% = delta_N / N_ads * 100."""
    n_ads = np.asarray(n_ads, dtype=float)
    if np.any(n_ads == 0):
        raise UndefinedMetricError("R%", "adsorbed uptake is zero")
    return np.asarray(delta_n, dtype=float) / n_ads * 100.0


def high_performing(aps_values, threshold=APS_THRESHOLD):
    return np.asarray(aps_values, dtype=float) >= threshold


# ---------------------------------------------------------------- records

@dataclass
class ScreeningRecord:
    name: str
    S: float
    delta_N: float
    N_ads: float
    APS: float
    R_pct: float
    descriptors: dict = field(default_factory=dict)

    @classmethod
    def from_metrics(cls, name, S, delta_N, N_ads, descriptors=None):
        return cls(name, float(S), float(delta_N), float(N_ads), float(aps(S, delta_N)),
                   float(regenerability(delta_N, N_ads)), dict(descriptors or {}))

    @classmethod
    def from_uptakes(cls, name, n_ads: dict, n_des: dict, y: dict, descriptors=None):
        """Uptakes in mol/kg keyed by gas ("CH4", "H2"); y holds feed mole fractions."""
        if not math.isclose(sum(y.values()), 1.0, abs_tol=1e-9):
            raise ValueError(f"{name}: feed mole fractions must sum to 1")
        s = selectivity(n_ads["CH4"], n_ads["H2"], y["CH4"], y["H2"])
        return cls.from_metrics(name, s, working_capacity(n_ads["CH4"], n_des["CH4"]), n_ads["CH4"], descriptors)


def records_from_predictions(names, preds: dict, descriptors=None, mode="VSA"):
    """Build records from per-target prediction arrays (keys are target names)."""
    s_key, dn_key, ads_key = MODE_TARGETS[mode]
    out = []
    for i, name in enumerate(names):
        desc = {k: float(v[i]) for k, v in (descriptors or {}).items()}
        out.append(ScreeningRecord.from_metrics(name, preds[s_key][i], preds[dn_key][i], preds[ads_key][i], desc))
    return out


def prescreen(records, lcd_max=20.0, phi_max=0.80):
    """Keep LCD < lcd_max and phi < phi_max (strict). Returns (kept, n_missing)."""
    kept, missing = [], 0
    for r in records:
        lcd, phi = r.descriptors.get("LCD"), r.descriptors.get("phi")
        if lcd is None or phi is None or not (np.isfinite(lcd) and np.isfinite(phi)):
            missing += 1
            continue
        if lcd < lcd_max and phi < phi_max:
            kept.append(r)
    return kept, missing


# ---------------------------------------------------------------- scoring

def minmax(values, lo=None, hi=None):
    """(v - min) / (max - min); a constant column maps to zeros."""
    v = np.asarray(values, dtype=float)
    lo = v.min() if lo is None else lo
    hi = v.max() if hi is None else hi
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


@dataclass(frozen=True)
class WeightPair:
    w_R: float
    w_A: float

    def __post_init__(self):
        if self.w_R < 0 or self.w_A < 0:
            raise ValueError(f"weights must be non-negative, got ({self.w_R}, {self.w_A})")
        if abs(self.w_R + self.w_A - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {self.w_R} + {self.w_A}")

    @classmethod
    def of(cls, w):
        return w if isinstance(w, WeightPair) else cls(float(w[0]), float(w[1]))

    def label(self, digits=1):
        return f"{self.w_R:.{digits}f}_{self.w_A:.{digits}f}"


BASELINE = WeightPair(0.5, 0.5)


def weight_grid(step=0.1):
    n = round(1.0 / step)
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} does not divide 1 evenly")
    return [WeightPair(k / n, (n - k) / n) for k in range(n + 1)]


def composite(r_norm, a_norm, w):
    w = WeightPair.of(w)
    return w.w_R * np.asarray(r_norm, dtype=float) + w.w_A * np.asarray(a_norm, dtype=float)


def contribution_rates(r_norm, a_norm, w):
    """Shares of the composite score; (0.5, 0.5) where both contributions are zero."""
    w = WeightPair.of(w)
    cr = w.w_R * np.asarray(r_norm, dtype=float)
    ca = w.w_A * np.asarray(a_norm, dtype=float)
    total = cr + ca
    zero = total <= 0
    safe = np.where(zero, 1.0, total)
    rate_r = np.where(zero, 0.5, cr / safe)
    return rate_r, np.where(zero, 0.5, 1.0 - rate_r)


def rank_order(names, scores):
    """Indices by descending score, ties broken by name."""
    return np.lexsort((np.asarray(names, dtype=object).astype(str), -np.asarray(scores, dtype=float)))


class CofName(NamedTuple):
    linker_a: str
    end_a: str
    linker_b: str
    end_b: str
    bond: str
    net: str


_BONDS = {("C", "C"): "CC", ("CH", "N"): "imine", ("CO", "NH"): "amide"}
_END = re.compile(r"^[A-Z][A-Za-z0-9]*$")


def bond_type(end_a, end_b):
    return _BONDS.get(tuple(sorted((end_a, end_b))), "other")


def parse_cof_name(name: str) -> CofName:
    """``linker<id>_<end>_linker<id>_<end>_<net>_relaxed[...]``."""
    tokens = name.split("_")
    if len(tokens) < 6:
        raise NameParseError(name, name, "too few '_' separated tokens")
    for pos in (0, 2):
        if not re.fullmatch(r"linker\d+", tokens[pos]):
            raise NameParseError(name, tokens[pos], "expected linker<id>")
        if not _END.match(tokens[pos + 1]):
            raise NameParseError(name, tokens[pos + 1], "expected an end code")
    try:
        relaxed = tokens.index("relaxed", 4)
    except ValueError:
        raise NameParseError(name, tokens[-1], "missing 'relaxed' marker") from None
    net = "_".join(tokens[4:relaxed])
    if not net:
        raise NameParseError(name, tokens[4], "empty net")
    a, ea, b, eb = tokens[0][6:], tokens[1], tokens[2][6:], tokens[3]
    return CofName(a, ea, b, eb, bond_type(ea, eb), net)


@dataclass
class RankedEntry:
    name: str
    S_i: float
    rate_R: float
    rate_A: float
    bond: str
    net: str


def _parsed(name):
    try:
        return parse_cof_name(name)
    except NameParseError:
        return None


def normalized_metrics(records, population=None):
    """Normalized (R%, APS) for ``records`` with min/max taken over ``population``."""
    pop = records if population is None else population
    r = np.array([x.R_pct for x in records], dtype=float)
    a = np.array([x.APS for x in records], dtype=float)
    pr = np.array([x.R_pct for x in pop], dtype=float)
    pa = np.array([x.APS for x in pop], dtype=float)
    return (np.clip(minmax(r, pr.min(), pr.max()), 0, 1),
            np.clip(minmax(a, pa.min(), pa.max()), 0, 1))


def rank(records, w, population=None, top=None, normalized=None):
    w = WeightPair.of(w)
    r_n, a_n = normalized if normalized is not None else normalized_metrics(records, population)
    s = composite(r_n, a_n, w)
    rate_r, rate_a = contribution_rates(r_n, a_n, w)
    names = [x.name for x in records]
    order = rank_order(names, s)
    if top is not None:
        order = order[:top]
    out = []
    for i in order:
        p = _parsed(names[i])
        out.append(RankedEntry(names[i], float(s[i]), float(rate_r[i]), float(rate_a[i]),
                               p.bond if p else "other", p.net if p else ""))
    return out


def top_names(r_norm, a_norm, names, w, k=10):
    return [names[i] for i in rank_order(names, composite(r_norm, a_norm, w))[:k]]


def weight_scan(records, step=0.1, k=10, baseline=BASELINE, population=None, weights=None):
    """[(w_R, w_A, overlap)] of each grid weight's top-k with the baseline top-k.

    ``weights`` replaces the grid when given."""
    if len(records) < k:
        raise ValueError(f"weight scan needs at least {k} records, got {len(records)}")
    r_n, a_n = normalized_metrics(records, population)
    names = [x.name for x in records]
    base = set(top_names(r_n, a_n, names, baseline, k))
    return [(w.w_R, w.w_A, len(base & set(top_names(r_n, a_n, names, w, k))) / k)
            for w in (weight_grid(step) if weights is None else map(WeightPair.of, weights))]


def structure_stats(ranked, k=100):
    """Bond, net and linker frequency tables over the top-k names."""
    if len(ranked) < k:
        raise ValueError(f"need at least {k} ranked entries, got {len(ranked)}")
    bonds, nets, linkers = Counter(), Counter(), Counter()
    for e in ranked[:k]:
        name = e.name if isinstance(e, RankedEntry) else e
        p = _parsed(name)
        if p is None:
            bonds["other"] += 1
            continue
        bonds[p.bond] += 1
        nets[p.net] += 1
        linkers[f"linker{p.linker_a}"] += 1
        linkers[f"linker{p.linker_b}"] += 1
    sort = lambda c: dict(sorted(c.items(), key=lambda kv: (-kv[1], kv[0])))
    return {"bond": sort(bonds), "net": sort(nets), "linker": sort(linkers)}


def performance_window(records, threshold=APS_THRESHOLD, descriptors=WINDOW_DESCRIPTORS):
    """Per-descriptor (min, max) over records with APS >= threshold; {} if none qualify."""
    q = [r for r in records if r.APS >= threshold]
    if not q:
        return {}
    out = {}
    for d in descriptors:
        vals = [r.descriptors[d] for r in q if d in r.descriptors and np.isfinite(r.descriptors[d])]
        if vals:
            out[d] = (float(min(vals)), float(max(vals)))
    return out


# ---------------------------------------------------------------- outputs

def _fmt(x):
    return f"{x:.6f}"


def ranking_csv(entries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "S_i", "rate_R", "rate_A", "bond", "net"])
    for e in entries:
        w.writerow([e.name, _fmt(e.S_i), _fmt(e.rate_R), _fmt(e.rate_A), e.bond, e.net])
    return buf.getvalue()


def overlap_csv(scan) -> str:
    lines = ["w_R,w_A,overlap"] + [f"{a:.6f},{b:.6f},{o:.6f}" for a, b, o in scan]
    return "\n".join(lines) + "\n"


def screen(records, out_dir=None, step=0.1, top=10, stats_k=100, population="prescreened",
           lcd_max=20.0, phi_max=0.80, aps_threshold=APS_THRESHOLD, apply_prescreen=True, weights=None):
    """Full screening pass. Writes ranking/overlap/stats files when ``out_dir`` is given.

    ``weights`` (list of (w_R, w_A)) restricts the pass to those weights instead of the grid.
    """
    if population not in ("prescreened", "all"):
        raise ValueError("population must be 'prescreened' or 'all'")
    cands, missing = prescreen(records, lcd_max, phi_max) if apply_prescreen else (list(records), 0)
    if not cands:
        raise ValueError("no records survive the pre-screen")
    pop = cands if population == "prescreened" else records
    normalized = normalized_metrics(cands, pop)
    grid = weight_grid(step) if weights is None else [WeightPair.of(w) for w in weights]
    if not grid:
        raise ValueError("empty weight list")
    ticks = [step] if weights is None else [x for w in grid for x in (w.w_R, w.w_A)]
    digits = 1 if all(abs(t * 10 - round(t * 10)) < 1e-9 for t in ticks) else 3
    rankings, stats = {}, {}
    for w in grid:
        full = rank(cands, w, normalized=normalized)
        rankings[w.label(digits)] = full[:top]
        stats[w.label(digits)] = structure_stats(full, min(stats_k, len(full)))
    scan = weight_scan(cands, step, min(top, len(cands)), population=pop, weights=weights)
    window = performance_window(cands, aps_threshold)
    result = {"rankings": rankings, "overlap": scan, "stats": stats, "window": window,
              "n_input": len(records), "n_candidates": len(cands), "n_missing_descriptors": missing,
              "normalization_population": population}
    if out_dir is not None:
        out = Path(out_dir)
        for label, entries in rankings.items():
            atomic_write(out / f"ranking_{label}.csv", ranking_csv(entries).encode())
        atomic_write(out / "overlap.csv", overlap_csv(scan).encode())
        atomic_write(out / "stats.json", (json.dumps(stats, indent=1, sort_keys=True) + "\n").encode())
        summary = {k: result[k] for k in ("n_input", "n_candidates", "n_missing_descriptors",
                                          "normalization_population")}
        summary["aps_threshold"] = aps_threshold
        summary["window"] = {k: list(v) for k, v in window.items()}
        atomic_write(out / "summary.json", (json.dumps(summary, indent=1, sort_keys=True) + "\n").encode())
    return result
