import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from screening_fixture import regenerated_records, table_rows

from cofbench import screening as sc
from cofbench.screening import NameParseError, ScreeningRecord, UndefinedMetricError, WeightPair


def rec(name, r_pct, aps_v, **desc):
    # N_ads = 1 so delta_N = R% / 100 and S = APS / delta_N
    dn = r_pct / 100.0
    return ScreeningRecord.from_metrics(name, aps_v / dn, dn, 1.0, desc or {"LCD": 10.0, "phi": 0.5})


def random_records(rng, n):
    return [rec(f"linker{rng.integers(1, 120)}_C_linker{rng.integers(1, 120)}_C_n{i:04d}_relaxed",
                float(rng.uniform(1, 100)), float(rng.uniform(0, 300)),
                LCD=float(rng.uniform(3, 30)), phi=float(rng.uniform(0.2, 0.95)), PLD=float(rng.uniform(2, 10)),
                S_acc=float(rng.uniform(0, 5000)))
            for i in range(n)]


# ---------------------------------------------------------------- formulas

def test_selectivity_examples():
    assert sc.selectivity(1.3, 1.3, 0.5, 0.5) == 1.0
    assert sc.selectivity(2.0, 1.0, 0.5, 0.5) == 2.0


@given(st.floats(1e-3, 50), st.floats(1e-3, 50), st.floats(0.01, 0.99))
def test_selectivity_identity(n_a, n_b, y_a):
    y_b = 1 - y_a
    s = sc.selectivity(n_a, n_b, y_a, y_b)
    assert s * (y_a / y_b) == pytest.approx(n_a / n_b, rel=1e-12)


def test_selectivity_undefined():
    with pytest.raises(UndefinedMetricError):
        sc.selectivity(1.0, 0.0, 0.5, 0.5)


def test_capacity_aps_regenerability():
    dn = sc.working_capacity(2.0, 1.0)
    assert dn == 1.0 and sc.regenerability(dn, 2.0) == 50.0
    assert sc.aps(10.0, 1.5) == 15.0
    assert sc.regenerability(sc.working_capacity(3.0, 0.0), 3.0) == 100.0
    with pytest.raises(UndefinedMetricError):
        sc.regenerability(0.0, 0.0)
    assert list(sc.high_performing([99.9, 100.0, 150.0])) == [False, True, True]


@given(st.floats(0.01, 50), st.floats(0, 1))
def test_regenerability_bounded(n_ads, frac):
    r = sc.regenerability(sc.working_capacity(n_ads, n_ads * frac), n_ads)
    assert -1e-9 <= r <= 100 + 1e-9


def test_record_from_uptakes():
    r = ScreeningRecord.from_uptakes("x", {"CH4": 2.0, "H2": 0.5}, {"CH4": 0.5}, {"CH4": 0.5, "H2": 0.5})
    assert r.S == 4.0 and r.delta_N == 1.5 and r.APS == 6.0 and r.R_pct == 75.0
    with pytest.raises(ValueError):
        ScreeningRecord.from_uptakes("x", {"CH4": 2.0, "H2": 0.5}, {"CH4": 0.5}, {"CH4": 0.5, "H2": 0.6})


def test_records_from_predictions():
    preds = {"S_CH4_H2_VSA": np.array([10.0]), "dN_CH4_VSA": np.array([1.5]), "N_CH4_1bar": np.array([3.0])}
    (r,) = sc.records_from_predictions(["a"], preds, {"LCD": np.array([8.0])})
    assert r.APS == 15.0 and r.R_pct == 50.0 and r.descriptors == {"LCD": 8.0}


# ---------------------------------------------------------------- pre-screen and normalization

def test_prescreen_boundaries():
    recs = [rec("a", 50, 10, LCD=25.0, phi=0.5), rec("b", 50, 10, LCD=10.0, phi=0.5),
            rec("c", 50, 10, LCD=20.0, phi=0.5), rec("d", 50, 10, LCD=10.0, phi=0.80),
            rec("e", 50, 10, LCD=10.0)]
    kept, missing = sc.prescreen(recs)
    assert [r.name for r in kept] == ["b"] and missing == 1


def test_minmax_examples():
    np.testing.assert_array_equal(sc.minmax([1, 2, 3]), [0, 0.5, 1])
    np.testing.assert_array_equal(sc.minmax([5, 5]), [0, 0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
def test_minmax_extremum(v):
    out = sc.minmax(v)
    if max(v) > min(v):
        assert out[int(np.argmax(v))] == 1.0 and out[int(np.argmin(v))] == 0.0
    assert np.all((out >= 0) & (out <= 1))


# ---------------------------------------------------------------- composite and rates

def test_composite_examples():
    assert sc.composite(0.4, 0.8, (0.5, 0.5)) == pytest.approx(0.6)
    assert sc.composite(0.3, 0.9, (1.0, 0.0)) == 0.3


def test_weight_pair_validation():
    with pytest.raises(ValueError):
        WeightPair(0.6, 0.6)
    with pytest.raises(ValueError):
        WeightPair(-0.1, 1.1)
    with pytest.raises(ValueError):
        sc.weight_grid(0.3)
    assert len(sc.weight_grid(0.1)) == 11


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_composite_monotone(r, a, dr, da, w):
    w = WeightPair(w, 1 - w)
    base = sc.composite(r, a, w)
    assert sc.composite(min(r + dr, 1), a, w) >= base
    assert sc.composite(r, min(a + da, 1), w) >= base


def test_contribution_rate_examples():
    assert sc.contribution_rates(0.7, 0.3, (1.0, 0.0)) == (1.0, 0.0)
    r, a = sc.contribution_rates(0.2, 0.8, (0.5, 0.5))
    assert (float(r), float(a)) == pytest.approx((0.2, 0.8))
    assert sc.contribution_rates(0.0, 0.0, (0.5, 0.5)) == (0.5, 0.5)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_rates_sum_to_one(r, a, w):
    rr, ra = sc.contribution_rates(r, a, (w, 1 - w))
    assert abs(rr + ra - 1.0) <= 1e-9


def test_rank_ties_by_name():
    recs = [rec("b", 50, 10), rec("a", 50, 10), rec("c", 90, 300)]
    assert [e.name for e in sc.rank(recs, (0.5, 0.5))] == ["c", "a", "b"]


def test_degenerate_weights_match_single_metric():
    recs = random_records(np.random.default_rng(5), 200)
    by_r = sorted(recs, key=lambda r: (-r.R_pct, r.name))
    by_a = sorted(recs, key=lambda r: (-r.APS, r.name))
    assert [e.name for e in sc.rank(recs, (1.0, 0.0))] == [r.name for r in by_r]
    assert [e.name for e in sc.rank(recs, (0.0, 1.0))] == [r.name for r in by_a]


def test_rank_population_bounds():
    recs = [rec("a", 50, 100), rec("b", 60, 200)]
    wide = recs + [rec("z", 10, 0), rec("y", 100, 400)]
    e = {x.name: x for x in sc.rank(recs, (0.5, 0.5), population=wide)}
    assert e["a"].S_i == pytest.approx(0.5 * (40 / 90) + 0.5 * 0.25)


# ---------------------------------------------------------------- weight scan

def test_weight_scan_baseline_and_oracle():
    recs = random_records(np.random.default_rng(9), 50)
    scan = sc.weight_scan(recs, 0.1)
    assert [round(a, 1) for a, _, _ in scan] == [k / 10 for k in range(11)]
    assert dict((round(a, 1), o) for a, _, o in scan)[0.5] == 1.0
    # independent oracle: plain Python sort per weight
    r = np.array([x.R_pct for x in recs])
    a = np.array([x.APS for x in recs])
    rn, an = (r - r.min()) / (r.max() - r.min()), (a - a.min()) / (a.max() - a.min())

    def top(wr):
        s = [(-(wr * rn[i] + (1 - wr) * an[i]), recs[i].name) for i in range(len(recs))]
        return {name for _, name in sorted(s)[:10]}

    base = top(0.5)
    for wr, wa, ov in scan:
        assert ov == len(base & top(wr)) / 10
        assert ov in {k / 10 for k in range(11)}


def test_weight_scan_disjoint_and_too_small():
    # R% and APS anti-correlated: the R-only and A-only top-10s share nothing
    recs = [rec(f"r{i:02d}", 100 - i, i * 10) for i in range(30)]
    scan = {round(a, 1): o for a, _, o in sc.weight_scan(recs, 0.1, baseline=WeightPair(1.0, 0.0))}
    assert scan[1.0] == 1.0 and scan[0.0] == 0.0
    with pytest.raises(ValueError):
        sc.weight_scan(recs[:9])


# ---------------------------------------------------------------- names and stats

NAME_CASES = [
    ("linker110_C_linker91_C_tfg_relaxed", "CC", "tfg"),
    ("linker109_CH_linker18_N_npo_relaxed", "imine", "npo"),
    ("linker109_NH_linker15_CO_npo_relaxed", "amide", "npo"),
    ("linker91_C_linker91_C_qtz-f_relaxed_interp_2", "CC", "qtz-f"),
    ("linker100_CH2_linker12_NH_qtz_relaxed_interp_2", "other", "qtz"),
]


@pytest.mark.parametrize("name,bond,net", NAME_CASES)
def test_parse_cof_name(name, bond, net):
    p = sc.parse_cof_name(name)
    assert (p.bond, p.net) == (bond, net)


def test_parse_cof_name_fields():
    p = sc.parse_cof_name("linker101_N_linker100_CH_pts_relaxed_interp_2")
    assert p == ("101", "N", "100", "CH", "imine", "pts")


@pytest.mark.parametrize("name,token", [
    ("linkerX_C_linker91_C_tfg_relaxed", "linkerX"),
    ("linker1_c_linker91_C_tfg_relaxed", "c"),
    ("linker1_C_linker91_C_tfg_unrelaxed", "unrelaxed"),
    ("linker1_C_tfg", "linker1_C_tfg"),
])
def test_parse_cof_name_errors(name, token):
    with pytest.raises(NameParseError) as exc:
        sc.parse_cof_name(name)
    assert exc.value.token == token


def test_all_table_names_parse_to_printed_columns():
    for r in table_rows():
        p = sc.parse_cof_name(r["name"])
        assert (p.bond, p.net) == (r["bond"], r["net"]), r["name"]


def test_structure_stats_identical_names():
    name = "linker110_C_linker91_C_tfg_relaxed"
    st_ = sc.structure_stats([name] * 100, 100)
    assert st_["bond"] == {"CC": 100} and st_["net"] == {"tfg": 100}
    assert st_["linker"] == {"linker110": 100, "linker91": 100}


def test_structure_stats_constructed_distribution():
    names = (["linker1_C_linker2_C_tfg_relaxed"] * 40 + ["linker3_CH_linker3_N_pts_relaxed"] * 35
             + ["linker4_NH_linker1_CO_hcb_relaxed"] * 25)
    stats = sc.structure_stats(names, 100)
    assert stats["bond"] == {"CC": 40, "imine": 35, "amide": 25}
    assert stats["net"] == {"tfg": 40, "pts": 35, "hcb": 25}
    assert stats["linker"] == {"linker3": 70, "linker1": 65, "linker2": 40, "linker4": 25}
    assert sum(stats["bond"].values()) == 100 and sum(stats["linker"].values()) == 200


# ---------------------------------------------------------------- windows

def test_performance_window():
    recs = [rec("a", 50, 150, PLD=4.0, LCD=6.0, S_acc=100.0, phi=0.4),
            rec("b", 50, 99, PLD=9.0, LCD=9.0, S_acc=900.0, phi=0.7),
            rec("c", 50, 100, PLD=5.0, LCD=5.0, S_acc=300.0, phi=0.5)]
    w = sc.performance_window(recs)
    assert w == {"PLD": (4.0, 5.0), "LCD": (5.0, 6.0), "S_acc": (100.0, 300.0), "phi": (0.4, 0.5)}
    assert sc.performance_window(recs[:1]) == {"PLD": (4.0, 4.0), "LCD": (6.0, 6.0),
                                               "S_acc": (100.0, 100.0), "phi": (0.4, 0.4)}
    assert sc.performance_window(recs, threshold=1000) == {}


# ---------------------------------------------------------------- golden tables

def test_regenerated_fixture_reproduces_every_vsa_table():
    recs = regenerated_records("VSA")
    rows = table_rows("VSA")
    for w in sc.weight_grid(0.1):
        paper = sorted((r for r in rows if abs(r["w_R"] - w.w_R) < 1e-9), key=lambda r: r["rank"])
        got = sc.rank(recs, w, top=10)
        assert [e.name for e in got] == [r["name"] for r in paper]
        for e, r in zip(got, paper):
            assert abs(e.S_i - r["S_i"]) <= 5e-4
            assert abs(e.rate_R - r["rate_R"]) <= 5e-4 and abs(e.rate_A - r["rate_A"]) <= 5e-4
            assert (e.bond, e.net) == (r["bond"], r["net"])


def test_regenerated_fixture_psa_scores():
    fixture = regenerated_records("PSA")
    for w in sc.weight_grid(0.1):
        recs = {e.name: e for e in sc.rank(fixture, w)}
        for r in table_rows("PSA"):
            if abs(r["w_R"] - w.w_R) < 1e-9:
                assert abs(recs[r["name"]].S_i - r["S_i"]) <= 5e-4


# ---------------------------------------------------------------- outputs

def test_screen_outputs_byte_stable(tmp_path):
    recs = random_records(np.random.default_rng(2), 300)
    a = sc.screen(recs, tmp_path / "a")
    sc.screen(list(reversed(recs)), tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "overlap.csv" in files and "stats.json" in files and "ranking_0.5_0.5.csv" in files
    assert len([f for f in files if f.startswith("ranking_")]) == 11
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = list(csv.reader(io.StringIO((tmp_path / "a" / "ranking_0.5_0.5.csv").read_text())))
    assert rows[0] == ["name", "S_i", "rate_R", "rate_A", "bond", "net"] and len(rows) == 11
    assert (tmp_path / "a" / "overlap.csv").read_text().splitlines()[0] == "w_R,w_A,overlap"
    stats = json.loads((tmp_path / "a" / "stats.json").read_text())
    assert set(stats["0.5_0.5"]) == {"bond", "net", "linker"}
    assert a["n_candidates"] < 300


def test_screen_population_choice():
    recs = random_records(np.random.default_rng(4), 100)
    a = sc.screen(recs, population="prescreened")
    b = sc.screen(recs, population="all")
    assert a["normalization_population"] == "prescreened" and b["normalization_population"] == "all"
    kept, _ = sc.prescreen(recs)
    for res, pop in ((a, kept), (b, recs)):
        top = res["rankings"]["0.5_0.5"][0]
        r = next(x for x in kept if x.name == top.name)
        lo_r, hi_r = min(x.R_pct for x in pop), max(x.R_pct for x in pop)
        lo_a, hi_a = min(x.APS for x in pop), max(x.APS for x in pop)
        expect = 0.5 * (r.R_pct - lo_r) / (hi_r - lo_r) + 0.5 * (r.APS - lo_a) / (hi_a - lo_a)
        assert top.S_i == pytest.approx(expect, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_randomized_identities(seed):
    rng = np.random.default_rng(seed)
    recs = random_records(rng, 60)
    rn, an = sc.normalized_metrics(recs)
    w = WeightPair(*(lambda x: (x, 1 - x))(float(rng.uniform())))
    rr, ra = sc.contribution_rates(rn, an, w)
    assert np.max(np.abs(rr + ra - 1)) <= 1e-9
