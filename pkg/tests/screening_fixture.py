"""Regenerated screening inputs from the transcribed top-10 ranking tables.

Each table row gives S_i and the two contribution rates at a known weight
pair, so the normalized metrics follow directly:
    R~ = S_i * rate_R / w_R,   A~ = S_i * rate_A / w_A.
Estimates from different weight pairs are averaged. A metric never observed
(weight zero in every table the name appears in) is set to 0, which can only
lower that record's score. A low anchor record pins both minima at 0, and raw
values are placed on arbitrary linear scales; min-max normalization removes
the scale again.
"""

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from cofbench.screening import ScreeningRecord

TABLES = Path(__file__).parent / "data" / "ranking_tables.csv"
ANCHOR = "linker0_C_linker0_C_anchor_relaxed"
R_RANGE = (5.0, 95.0)       # percent
APS_RANGE = (0.5, 300.0)    # mol/kg


def table_rows(mode=None):
    with open(TABLES, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("w_R", "w_A", "S_i", "rate_R", "rate_A"):
            r[k] = float(r[k])
        r["rank"] = int(r["rank"])
    return [r for r in rows if mode is None or r["mode"] == mode]


def normalized_estimates(mode="VSA"):
    R, A = defaultdict(list), defaultdict(list)
    for r in table_rows(mode):
        if r["w_R"] > 0:
            R[r["name"]].append(r["S_i"] * r["rate_R"] / r["w_R"])
        if r["w_A"] > 0:
            A[r["name"]].append(r["S_i"] * r["rate_A"] / r["w_A"])
    names = sorted(set(R) | set(A))
    return {n: (float(np.mean(R[n])) if R[n] else 0.0, float(np.mean(A[n])) if A[n] else 0.0) for n in names}


def regenerated_records(mode="VSA"):
    est = normalized_estimates(mode)
    est[ANCHOR] = (0.0, 0.0)
    out = []
    for name, (rn, an) in sorted(est.items()):
        r_pct = R_RANGE[0] + rn * (R_RANGE[1] - R_RANGE[0])
        aps = APS_RANGE[0] + an * (APS_RANGE[1] - APS_RANGE[0])
        n_ads = 1.0
        dn = r_pct / 100.0 * n_ads
        out.append(ScreeningRecord.from_metrics(name, aps / dn, dn, n_ads, {"LCD": 10.0, "phi": 0.5}))
    return out
