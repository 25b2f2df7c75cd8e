"""Regression metrics, fold splitting and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    def __init__(self, metric: str, message: str):
        super().__init__(f"{metric}: {message}")
        self.metric = metric


def _pair(y, yhat, metric, min_len=1):
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"{metric}: length mismatch {len(y)} vs {len(yhat)}")
    if len(y) < min_len:
        raise ValueError(f"{metric}: need at least {min_len} values")
    return y, yhat


def r2(y, yhat) -> float:
    y, yhat = _pair(y, yhat, "r2")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetricError("r2", "reference values are constant")
    return float(1.0 - np.sum((y - yhat) ** 2) / ss_tot)


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat, "rmse")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat, "mae")
    return float(np.mean(np.abs(y - yhat)))


def pearson(x, y) -> float:
    x, y = _pair(x, y, "pearson", 2)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(dx * dx)), np.sqrt(np.sum(dy * dy))
    if sx == 0 or sy == 0:
        raise UndefinedMetricError("pearson", "constant input")
    return float(np.clip(np.sum(dx * dy) / (sx * sy), -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks (ties share the mean rank)."""
    x, y = _pair(x, y, "spearman", 2)
    try:
        return pearson(rankdata(x), rankdata(y))
    except UndefinedMetricError:
        raise UndefinedMetricError("spearman", "constant input") from None


@dataclass
class MetricReport:
    r2: float
    rmse: float
    mae: float
    pearson: float
    spearman: float

    def to_dict(self):
        return asdict(self)


def report(y, yhat) -> MetricReport:
    return MetricReport(r2(y, yhat), rmse(y, yhat), mae(y, yhat), pearson(y, yhat), spearman(y, yhat))


def aggregate(reports) -> dict:
    """{metric: (mean, std)} over folds; std is the sample standard deviation."""
    out = {}
    for key in MetricReport.__dataclass_fields__:
        v = np.array([getattr(r, key) for r in reports], dtype=float)
        out[key] = (float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0)
    return out


def kfold_split(names, folds=5, seed=42):
    """Fold index per item: seeded shuffle, then round-robin so sizes differ by <= 1."""
    n = len(names)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > n:
        raise ValueError(f"cannot split {n} items into {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    assign = np.empty(n, dtype=int)
    assign[order] = np.arange(n) % folds
    return assign


def fold_indices(assign, k):
    """(train, test) index arrays for fold k."""
    assign = np.asarray(assign)
    return np.flatnonzero(assign != k), np.flatnonzero(assign == k)


def t_sf_two_sided(t, df) -> float:
    """P(|T| >= |t|) for Student's t with df degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_ttest(a, b):
    """Paired t statistic on a - b and its two-sided p-value."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired t-test: length mismatch {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = float(mean / (sd / math.sqrt(len(d))))
    return t, t_sf_two_sided(t, len(d) - 1)
