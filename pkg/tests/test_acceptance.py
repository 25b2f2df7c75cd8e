"""Acceptance gate. Each test checks one criterion at its stated tolerance and
records a PASS/FAIL line; the lines are repeated in the terminal summary."""

import csv
import math
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.sparse.csgraph import minimum_spanning_tree

from cofbench import autodiff as ad
from cofbench import evalstats, screening as sc, synthetic
from cofbench.autodiff import ops
from cofbench.cli import main
from cofbench.homology import rips_persistence
from cofbench.models import (
    PHNN, BiGCAE, BiGCAEConfig, Dataset, FusionConfig, FusionHead, GraphBatch, PHNNConfig, SPcVAE,
    SPcVAEConfig, Standardizer, TrainConfig, bigcae_loss, blend, fusion_loss, phnn_loss, spcvae_loss,
)
from cofbench.models import pipeline as pl
from cofbench.supragraph import Supragraph

from gradutil import away_from_zero, check, jitter_biases, random_graph
from oracles import naive_rips_pairs
from screening_fixture import TABLES, regenerated_records

N_CONFIGS = 20
GRAD_TOL = 1e-4


# ---------------------------------------------------------------- screening

def test_screening_golden_values(acceptance):
    t0 = time.perf_counter()
    recs = regenerated_records("VSA")
    top = sc.rank(recs, (0.5, 0.5), top=1)[0]
    ok_top = (abs(top.S_i - 0.6165) <= 5e-4 and abs(top.rate_R - 0.1890) <= 5e-4
              and abs(top.rate_A - 0.8109) <= 5e-4)
    r_only = sc.rank(recs, (1.0, 0.0), top=10)
    ok_r = all(e.rate_R == 1.0 and e.rate_A == 0.0 for e in r_only)
    dt = time.perf_counter() - t0
    ok = acceptance("screening golden values", ok_top and ok_r,
                    f"w=(0.5,0.5) top {top.name} S_i={top.S_i:.4f} rates=({top.rate_R:.4f}, {top.rate_A:.4f}); "
                    f"w=(1,0) rates exact={ok_r}", dt)
    assert ok


def random_records(rng, n):
    out = []
    for i in range(n):
        nads = rng.uniform(0.1, 5.0)
        dn = nads * rng.uniform(0.05, 0.95)
        out.append(sc.ScreeningRecord.from_metrics(f"cof{i:05d}", rng.uniform(1, 500), dn, nads,
                                                   {"LCD": rng.uniform(4, 25), "phi": rng.uniform(0.2, 0.95)}))
    return out


def test_scoring_identities_1000(acceptance):
    rng = np.random.default_rng(11)
    recs = random_records(rng, 1000)
    # coarse values force ties in both metrics
    for r in recs[::7]:
        r.R_pct, r.APS = 50.0, 100.0
    t0 = time.perf_counter()
    r_n, a_n = sc.normalized_metrics(recs)
    worst = 0.0
    for w in sc.weight_grid(0.1):
        rr, ra = sc.contribution_rates(r_n, a_n, w)
        worst = max(worst, float(np.max(np.abs(rr + ra - 1.0))))
    scan = sc.weight_scan(recs, 0.1, 10)
    base = [o for a, b, o in scan if a == 0.5][0]
    names = np.array([r.name for r in recs])
    single_ok = True
    for w, key in (((1.0, 0.0), r_n), ((0.0, 1.0), a_n)):
        got = [e.name for e in sc.rank(recs, w, normalized=(r_n, a_n))]
        # oracle: sort by the single metric, descending, ties by name
        oracle = sorted(range(len(recs)), key=lambda i: (-key[i], names[i]))
        single_ok &= got == [names[i] for i in oracle]
    dt = time.perf_counter() - t0
    ok = acceptance("scoring identities (1,000 records)", worst <= 1e-9 and base == 1.0 and single_ok and dt < 1.0,
                    f"max |rate_R+rate_A-1|={worst:.1e}, baseline overlap={base}, "
                    f"degenerate weights match single-metric sort={single_ok}", dt)
    assert ok


# ---------------------------------------------------------------- persistence

def _tuples(pairs):
    return sorted((p.dim, round(p.birth, 9), round(p.death, 9)) for p in pairs)


def test_persistence_oracle(acceptance):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    mismatches = 0
    for trial in range(200):
        n = int(rng.integers(1, 9))
        pts = rng.uniform(0, 4, size=(n, 3))
        if trial % 4 == 0:
            pts = np.round(pts)          # repeated distances
        max_edge = 10.0 if trial % 2 else 3.0
        mismatches += _tuples(rips_persistence(pts, max_edge)) != naive_rips_pairs(pts, max_edge)
    h1 = [p for p in rips_persistence([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]) if p.dim == 1]
    square_ok = len(h1) == 1 and abs(h1[0].birth - 1) <= 1e-9 and abs(h1[0].death - math.sqrt(2)) <= 1e-9
    mst_ok = True
    for _ in range(50):
        pts = rng.uniform(0, 5, size=(10, 3))
        deaths = sorted(p.death for p in rips_persistence(pts) if p.dim == 0)[:-1]
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        mst_ok &= bool(np.array_equal(np.round(deaths, 12), np.round(np.sort(minimum_spanning_tree(d).data), 12)))
    dt = time.perf_counter() - t0
    ok = acceptance("persistence oracle", mismatches == 0 and square_ok and mst_ok and dt < 30,
                    f"200 clouds mismatches={mismatches}, unit-square H1={square_ok}, H0=MST on 50 clouds={mst_ok}", dt)
    assert ok


# ---------------------------------------------------------------- gradients

def _elementwise(rng):
    shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
    a, b = rng.normal(size=shape), rng.uniform(0.5, 2.0, size=shape)
    return max(check(lambda x, y: x * y + x / y - y, a, b),
               check(lambda x: ops.exp(x) + ops.tanh(x) + ops.sigmoid(x), a),
               check(lambda y: ops.log(y) + ops.sqrt(y) + y ** 1.5, b),
               check(lambda x: ops.relu(x) + ops.abs(x), away_from_zero(rng, shape)))


def _shape_ops(rng):
    n, m = rng.integers(1, 5, size=2)
    a, b = rng.normal(size=(n, m)), rng.normal(size=(m,))
    return max(check(lambda x, y: x + y, a, b),
               check(lambda x: ops.mean(x, axis=0), a),
               check(lambda x: ops.sum(x, axis=1, keepdims=True), a),
               check(lambda x: ops.transpose(x).reshape(m * n), a),
               check(lambda x, y: ops.concat([x, ops.reshape(y, (1, m))], axis=0), a, b),
               check(lambda x: x[np.arange(n), np.zeros(n, int)], a))


def _dense_matmul(rng):
    b, n, k, m = rng.integers(1, 5, size=4)
    return max(check(ops.dense, rng.normal(size=(n, k)), rng.normal(size=(k, m)), rng.normal(size=m)),
               check(ops.matmul, rng.normal(size=(b, n, k)), rng.normal(size=(b, k, m))))


def _conv2d(rng):
    n, c, o = rng.integers(1, 3, size=3)
    k = int(rng.choice([1, 2, 3]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    h, w = rng.integers(k, k + 5, size=2)
    return check(lambda a, b, c_: ops.conv2d(a, b, c_, stride, pad), rng.normal(size=(n, c, h, w)),
                 rng.normal(size=(o, c, k, k)), rng.normal(size=o))


def _conv_transpose2d(rng):
    n, c, o = rng.integers(1, 3, size=3)
    k, stride, pad = int(rng.choice([2, 3])), int(rng.integers(1, 3)), int(rng.integers(0, 2))
    outpad = int(rng.integers(0, stride))
    h, w = rng.integers(2, 5, size=2)
    return check(lambda a, b, c_: ops.conv_transpose2d(a, b, c_, stride, pad, outpad),
                 rng.normal(size=(n, c, h, w)), rng.normal(size=(c, o, k, k)), rng.normal(size=o))


def _conv1d(rng):
    n, c, o = rng.integers(1, 4, size=3)
    k, stride, pad = int(rng.choice([1, 2, 3])), int(rng.integers(1, 3)), int(rng.integers(0, 2))
    length = int(rng.integers(k, 10))
    return check(lambda a, b, c_: ops.conv1d(a, b, c_, stride, pad), rng.normal(size=(n, c, length)),
                 rng.normal(size=(o, c, k)), rng.normal(size=o))


def _batchnorm_dropout(rng):
    n, f = rng.integers(2, 6), rng.integers(1, 5)
    rm, rv = rng.normal(size=f), rng.uniform(0.5, 2, size=f)
    x, g, b = rng.normal(size=(n, f)), rng.uniform(0.5, 2, size=f), rng.normal(size=f)
    seed = int(rng.integers(1 << 30))
    return max(check(lambda a, g_, b_: ops.batchnorm(a, g_, b_, rm.copy(), rv.copy(), True), x, g, b),
               check(lambda a, g_, b_: ops.batchnorm(a, g_, b_, rm, rv, False), x, g, b),
               check(lambda a: ops.dropout(a, 0.3, True, np.random.default_rng(seed)), x))


def _softmax_family(rng):
    x = rng.normal(size=(int(rng.integers(1, 5)), int(rng.integers(2, 6))))
    return max(check(lambda a: ops.softmax(a, axis=-1), x), check(lambda a: ops.logsumexp(a, axis=1), x),
               check(lambda a: ops.l2_normalize(a, axis=1), x))


def _attention(rng):
    b, lq, lk = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    heads = int(rng.choice([1, 2, 4]))
    d = heads * int(rng.integers(1, 3))
    temp = None if rng.random() < 0.5 else float(rng.uniform(0.3, 2.0))
    ws = [rng.normal(size=(d, d)) / math.sqrt(d) for _ in range(4)]
    bs = [rng.normal(size=d) for _ in range(4)]

    def f(q, k, v, wq, wk, wv, wo, bq):
        return ops.multihead_attention(q, k, v, wq, wk, wv, wo, heads, bq, bs[1], bs[2], bs[3], temp)
    return check(f, rng.normal(size=(b, lq, d)), rng.normal(size=(b, lk, d)), rng.normal(size=(b, lk, d)),
                 *ws, bs[0])


def _losses(rng):
    n, d = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    mu, lv, eps, y = (rng.normal(size=(n, d)) for _ in range(4))
    delta = float(rng.uniform(0.3, 1.5))
    pred = y + rng.normal(size=y.shape) * 2
    pred = np.where(np.abs(np.abs(pred - y) - delta) < 0.02, pred + 0.05, pred)
    z = rng.normal(size=(2 * n, d + 1))
    tau = 0.1 + float(rng.random())
    return max(check(ops.kl_gaussian, mu, lv),
               check(lambda m, l: ops.reparameterize(m, l, eps), mu, lv),
               check(lambda p: ops.mse(p, y), mu),
               check(lambda p: ops.mae(p, y), y + away_from_zero(rng, y.shape, 0.1)),
               check(lambda p: ops.huber(p, y, delta), pred),
               check(lambda e: ops.contrastive_loss(e, np.arange(2 * n) ^ 1, tau), z))


def _spcvae(rng):
    cfg = SPcVAEConfig(channels=tuple(int(c) for c in rng.integers(1, 3, 4)), latent_dim=int(rng.integers(2, 5)),
                       desc_widths=tuple(int(c) for c in rng.integers(2, 5, 2)), head_hidden=int(rng.integers(2, 5)),
                       fuse_channels=int(rng.integers(1, 4)), dropout=0.0, n_targets=2,
                       seed=int(rng.integers(1000)))
    m = SPcVAE(cfg)
    jitter_biases(m, rng)
    b = int(rng.integers(1, 3))
    x, d, y = rng.random((b, 9, 2, 64, 64)), rng.normal(size=(b, 6)), rng.normal(size=(b, 2))
    eps = rng.normal(size=(b * 9, cfg.latent_dim))
    alpha, beta = rng.uniform(0.2, 2.0, 2)
    return ad.gradcheck_directional(lambda: spcvae_loss(m(x, d, eps=eps), x, y, alpha, beta), m.parameters(), rng)


def _phnn(rng):
    m = PHNN(PHNNConfig(hidden=int(rng.integers(2, 6)), layers=int(rng.integers(1, 3)), dropout=0.0,
                        n_targets=2, seed=int(rng.integers(1000))))
    jitter_biases(m, rng)
    n = int(rng.integers(3, 7))
    f, s, y = rng.normal(size=(n, 18)), rng.normal(size=(n, 5)), rng.normal(size=(n, 2))
    return ad.gradcheck(lambda: phnn_loss(m(f, s), y), m.parameters())


def _bigcae(rng):
    cfg = BiGCAEConfig(encoder_dim=int(rng.integers(3, 7)), latent_dim=int(rng.integers(2, 5)),
                       decoder_dim=int(rng.integers(3, 6)), proj_dim=int(rng.integers(2, 5)),
                       layers=int(rng.integers(1, 3)), tau=float(rng.uniform(0.2, 1.0)), seed=int(rng.integers(1000)))
    m = BiGCAE(cfg)
    jitter_biases(m, rng)
    n = int(rng.integers(2, 5))
    batch = GraphBatch([random_graph(rng) for _ in range(n)])
    v1, v2 = m.views(batch, np.random.default_rng(int(rng.integers(1000))))
    y = rng.normal(size=(n, 1))
    alpha, beta = rng.uniform(0.05, 1.0, 2)
    delta = float(rng.uniform(0.5, 1.5))
    return ad.gradcheck_directional(lambda: bigcae_loss(m(batch), [m(v1), m(v2)], y, alpha, beta, cfg.tau, delta),
                                    m.parameters(), rng)


def _fusion(rng):
    heads = int(rng.choice([1, 2, 4]))
    dims = [int(x) for x in rng.integers(2, 6, 3)]
    temp = None if rng.random() < 0.5 else float(rng.uniform(0.5, 2.0))
    head = FusionHead(FusionConfig(sp_dim=dims[0], ph_dim=dims[1], big_dim=dims[2],
                                   fusion_dim=heads * int(rng.integers(1, 3)), heads=heads, attn_dropout=0.0,
                                   temperature=temp, mlp_hidden=int(rng.integers(2, 5)),
                                   seed=int(rng.integers(1000))))
    n = int(rng.integers(2, 5))
    args = (rng.normal(size=(n, dims[0])), rng.normal(size=(n, 1)), rng.normal(size=(n, dims[1])),
            rng.normal(size=(n, dims[2])))
    y = rng.normal(size=(n, 1))
    w_main, w_fus = rng.uniform(0.1, 2.0, 2)
    return ad.gradcheck(lambda: fusion_loss(head(*args), y, w_main, w_fus), head.parameters())


GRAD_CASES = {
    "elementwise": _elementwise, "shape ops": _shape_ops, "dense/matmul": _dense_matmul, "conv2d": _conv2d,
    "conv_transpose2d": _conv_transpose2d, "conv1d": _conv1d, "batchnorm/dropout": _batchnorm_dropout,
    "softmax family": _softmax_family, "attention": _attention, "losses": _losses,
    "SP-cVAE loss": _spcvae, "PH-NN loss": _phnn, "BiG-CAE loss": _bigcae, "fusion loss": _fusion,
}


def test_gradient_checks(acceptance):
    rng = np.random.default_rng(2024)
    worst = {}
    t0 = time.perf_counter()
    with ad.dtype_scope(np.float64):
        for name, case in GRAD_CASES.items():
            worst[name] = max(case(rng) for _ in range(N_CONFIGS))
    dt = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v <= GRAD_TOL}
    top = max(worst, key=worst.get)
    ok = acceptance("gradient checks", not bad and dt < 120,
                    f"{len(GRAD_CASES)} families x {N_CONFIGS} configs, worst {top} {worst[top]:.1e}"
                    + (f", failing {bad}" if bad else ""), dt)
    assert ok


# ---------------------------------------------------------------- closed forms

def test_loss_closed_forms(acceptance):
    t0 = time.perf_counter()
    errs = {}
    with ad.dtype_scope(np.float64):
        for dim in (1, 3, 8):
            errs[f"KL dim {dim}"] = abs(ops.kl_gaussian(np.ones((1, dim)), np.zeros((1, dim))).item() - 0.5 * dim)
        for delta in (0.5, 1.0, 2.0):
            errs[f"Huber delta {delta}"] = abs(ops.huber(np.array([delta]), np.zeros(1), delta).item() - 0.5 * delta ** 2)
        for n in (2, 4, 16):
            z = np.tile([[0.3, -0.4, 1.2]], (n, 1))
            pos = [(i + 1) % n for i in range(n)]
            errs[f"contrastive N={n}"] = abs(ops.contrastive_loss(z, pos, 0.07).item() - math.log(n - 1))
        rng = np.random.default_rng(3)
        q, k, v = rng.normal(size=(2, 4, 6)), rng.normal(size=(2, 1, 6)), rng.normal(size=(2, 1, 6))
        out = ops.scaled_dot_attention(q, k, v).data
        errs["attention single key"] = float(np.max(np.abs(out - v)))
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = acceptance("loss closed forms", all(e <= 1e-9 for e in errs.values()),
                    f"{len(errs)} identities, worst {worst} {errs[worst]:.1e}", dt)
    assert ok


# ---------------------------------------------------------------- fusion contract

def _ablation_like(n, seed):
    rng = np.random.default_rng(seed)
    kinds = ("imine", "amide", "CC")
    graphs = [Supragraph([(kinds[i % 3], x) for x in a], [("linker", x) for x in b])
              for i, (a, b) in enumerate(random_graph(rng) for _ in range(n))]
    sections = rng.random((n, 9, 2, 64, 64)).astype(np.float32)
    desc = np.column_stack([rng.uniform(3, 10, n), rng.uniform(4, 12, n), rng.uniform(500, 5000, n),
                            rng.uniform(0.3, 1.2, n), rng.uniform(0.2, 0.9, n)])
    y = synthetic.ablation_targets(desc, sections, graphs, rng)
    return Dataset([f"s{i}" for i in range(n)], sections, rng.random((n, 6)), rng.random((n, 18)), desc,
                   graphs, y[:, None], ["ablation"])


def test_fusion_contract(acceptance, tmp_path):
    t0 = time.perf_counter()
    data = _ablation_like(24, 0)
    tr, va = np.arange(18), np.arange(18, 24)
    small = {"sp": dict(channels=(2, 2, 2, 2), latent_dim=4, desc_widths=(4, 4), head_hidden=4),
             "ph": dict(hidden=8), "big": dict(encoder_dim=8, latent_dim=4, decoder_dim=8, proj_dim=4)}
    models, before = {}, {}
    for b in pl.BRANCHES:
        m, s, _ = pl.train_branch(b, data, tr, va, small[b], TrainConfig(max_epochs=2, batch_size=8))
        models[b] = (m, s)
        before[b] = pl.model_checksum(m)
        pl.save_branch(tmp_path / b, b, m, s, None, data.target_names)
    feats = pl.branch_features(models, data)
    head, _ = pl.train_fusion(feats, data.targets, tr, va, {"fusion_dim": 8, "heads": 2},
                              TrainConfig(max_epochs=10, batch_size=6))
    frozen = all(pl.model_checksum(m) == before[b] for b, (m, _) in models.items())
    frozen &= all(pl.model_checksum(pl.load_branch(tmp_path / b)[0]) == before[b] for b in pl.BRANCHES)
    # gate limits on the trained head: alpha -> 1 gives the SP prediction, alpha -> 0 the fusion prediction
    dt_ = ad.default_dtype()
    args = (feats["sp"][0].astype(dt_), feats["sp"][1].astype(dt_), feats["ph"][0].astype(dt_),
            feats["big"][0].astype(dt_))
    head.eval()
    limits = True
    with ad.no_grad():
        for logits, want in (([800.0, -800.0], "sp"), ([-800.0, 800.0], "fusion")):
            head.gate_logits.data[...] = logits
            out = head(*args)
            ref = args[1] if want == "sp" else out["y_fusion"].data
            limits &= bool(np.array_equal(out["y_final"].data, ref))
        head.gate_logits.data[...] = 0.0
    _, _, alpha = pl.predict_fusion(head, feats)
    open_unit = all(0.0 < blend(0.0, 1.0, [g, -g])[1] < 1.0 for g in np.linspace(-15, 15, 61)) and 0 < alpha < 1
    dt = time.perf_counter() - t0
    ok = acceptance("fusion contract", frozen and limits and open_unit,
                    f"frozen checksums unchanged={frozen}, gate limits exact={limits}, "
                    f"alpha in (0,1)={open_unit} (trained alpha {alpha:.3f})", dt)
    assert ok


# ---------------------------------------------------------------- ablation

@pytest.mark.slow
def test_ablation_toy_scale(acceptance):
    t0 = time.perf_counter()
    data = synthetic.ablation_dataset(500, seed=0, noise=0.05)
    tr, va = evalstats.fold_indices(evalstats.kfold_split(data.names, 5, 42), 0)
    scores = pl.run_ablation(
        data, tr, va,
        model_cfgs={"sp": {"channels": (8, 16, 16, 16)}},
        train_cfgs={"sp": TrainConfig(max_epochs=30), "ph": TrainConfig(max_epochs=100),
                    "big": TrainConfig(max_epochs=100)},
        fusion_train=TrainConfig(max_epochs=200))
    dt = time.perf_counter() - t0
    best = max(scores[b] for b in pl.BRANCHES)
    ok = acceptance("ablation at toy scale",
                    scores["fused"] >= best and scores["fused"] >= 0.9 and scores["frozen_unchanged"] and dt < 600,
                    "validation R2 " + ", ".join(f"{b}={scores[b]:.4f}" for b in (*pl.BRANCHES, "fused"))
                    + f", alpha={scores['alpha']:.3f}", dt)
    assert ok


# ---------------------------------------------------------------- real data subset

@pytest.mark.dataset
def test_subset_realism(acceptance, tmp_path):
    """Needs COFBENCH_DATASET: a directory with structures/, descriptors.csv and labels.csv."""
    root = os.environ.get("COFBENCH_DATASET")
    if not root or not Path(root).is_dir():
        pytest.skip("COFBENCH_DATASET not set")
    from cofbench import io
    from cofbench.models.data import featurize
    from cofbench.structure import read_cif

    t0 = time.perf_counter()
    root = Path(root)
    labels = io.ingest_labels(root / "labels.csv")
    desc = io.ingest_descriptors(root / "descriptors.csv")
    have = {p.stem: p for p in (root / "structures").glob("*.cif")}
    names = io.join_names(have, desc, {"S_CH4_H2_VSA": labels["S_CH4_H2_VSA"]})[:1000]
    feats = [featurize(read_cif(have[n])) for n in names]
    data = Dataset.from_features(feats, [desc[n] for n in names],
                                 [labels["S_CH4_H2_VSA"][n] for n in names], ["S_CH4_H2_VSA"])
    tr, va = evalstats.fold_indices(evalstats.kfold_split(names, 5, 42), 0)
    models = {b: pl.train_branch(b, data, tr, va)[:2] for b in pl.BRANCHES}
    feats = pl.branch_features(models, data)
    y_sc = Standardizer().fit(data.targets[tr])
    head, _ = pl.train_fusion(feats, y_sc.transform(data.targets), tr, va)
    y, _, _ = pl.predict_fusion(head, {k: (v[0][va], v[1][va]) for k, v in feats.items()})
    rho = evalstats.spearman(data.targets[va, 0], y_sc.inverse(y)[:, 0])
    ok = acceptance("subset-scale realism", rho >= 0.8, f"unseen-split Spearman {rho:.4f} on {len(names)}",
                    time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------- determinism

def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_determinism(acceptance, tmp_path):
    t0 = time.perf_counter()
    a = tmp_path / "a"
    assert main(["make-demo", str(a), "--n", "20"]) == 0
    b = tmp_path / "b"
    shutil.copytree(a, b)
    stages = [["featurize"], ["pretrain", "sp"], ["pretrain", "ph"], ["pretrain", "big"], ["fuse-train"],
              ["predict"], ["screen"], ["stats"]]
    codes = []
    for root, jobs in ((a, "1"), (b, "2")):
        for st in stages:
            codes.append(main([*st, "--config", str(root / "config.yaml"), "--jobs", jobs]))
    ta, tb = _tree(a / "out"), _tree(b / "out")
    differing = sorted(k for k in set(ta) | set(tb) if ta.get(k) != tb.get(k))
    ok = acceptance("determinism", not any(codes) and not differing and len(ta) > 20,
                    f"{len(stages)} stages x 2 runs, {len(ta)} artifacts, differing={differing or 'none'}",
                    time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------- names

def test_name_parsing_golden_set(acceptance):
    with open(TABLES, newline="") as fh:
        rows = list(csv.DictReader(fh))
    printed = {}
    for r in rows:
        printed.setdefault(r["name"], (r["bond"], r["net"]))
    names = sorted(printed)
    pick = [names[i] for i in np.random.default_rng(30).choice(len(names), 30, replace=False)]
    # make sure every bond type present in the tables is represented
    slots = [i for i, n in enumerate(pick) if printed[n][0] == "CC"]
    for bond in sorted({v[0] for v in printed.values()}):
        if not any(printed[n][0] == bond for n in pick):
            pick[slots.pop()] = next(n for n in names if printed[n][0] == bond)
    t0 = time.perf_counter()
    wrong = [n for n in pick if tuple(sc.parse_cof_name(n)[4:]) != printed[n]]
    ok = acceptance("name-parsing golden set", not wrong and len(set(pick)) == 30,
                    f"30 names, bonds {sorted({printed[n][0] for n in pick})}, mismatches={wrong or 'none'}",
                    time.perf_counter() - t0)
    assert ok
