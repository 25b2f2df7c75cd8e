"""Command line entry point: featurize, pretrain, fuse-train, predict, screen, stats."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evalstats, io, screening
from .autodiff.checkpoint import atomic_write
from .config import ConfigError, load_config, parse_weights
from .models import pipeline
from .models.data import DESCRIPTORS, Dataset, Standardizer, featurize
from .structure import CifParseError, read_cif
from .supragraph import SupragraphError

log = logging.getLogger("cofbench")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class MissingArtifact(Exception):
    def __init__(self, path):
        super().__init__(f"missing prerequisite artifact: {path}")
        self.path = str(path)


def _need(*paths):
    for p in paths:
        if not Path(p).exists():
            raise MissingArtifact(p)


def _dirs(cfg):
    out = cfg.out
    return {"features": out / "features", "ckpt": out / "checkpoints", "screen": out / "screen",
            "stats": out / "stats", "predictions": out / "predictions.csv"}


def _ckpt(cfg, name):
    return _dirs(cfg)["ckpt"] / f"{name}.json"


# ---------------------------------------------------------------- featurize

def _featurize_one(job):
    path, params = job
    try:
        s = read_cif(path)
        return featurize(s, **params)
    except (CifParseError, SupragraphError, ValueError) as e:
        return f"{Path(path).name}: {e}"


def cmd_featurize(cfg, args):
    src = cfg.path("structures")
    _need(src)
    files = sorted(src.glob("*.cif"))
    if not files:
        raise MissingArtifact(src / "*.cif")
    f = cfg["featurize"]
    params = {"supercell": tuple(f["supercell"]), "thickness": f["thickness"], "max_edge": f["max_edge"],
              "min_persistence": f["min_persistence"]}
    jobs = [(str(p), params) for p in files]
    t0 = time.perf_counter()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_featurize_one, jobs, chunksize=4))
    else:
        results = [_featurize_one(j) for j in jobs]
    dt = time.perf_counter() - t0
    feats = [r for r in results if isinstance(r, dict)]
    skipped = sorted(r for r in results if isinstance(r, str))
    for msg in skipped:
        log.warning("skipped %s", msg)
    if not feats:
        raise ValueError("no structure could be featurized")
    log.info("featurized %d structures in %.1f s (%.2f structures/s)", len(feats), dt, len(feats) / max(dt, 1e-9))
    out = _dirs(cfg)["features"]
    paths = io.save_features(out, feats)
    io.write_manifest(out, "featurize", cfg.hash(), cfg.seed, pipeline.versions(), {"structures": src}, paths,
                      {"n_structures": len(feats), "skipped": skipped})
    print(f"features: {len(feats)} structures -> {out}")


# ---------------------------------------------------------------- training data

def _dataset(cfg, with_labels=True):
    """Join features, descriptors and (optionally) labels on structure name."""
    d = _dirs(cfg)
    _need(d["features"] / "names.json")
    cfg.require("descriptors")
    feats = io.load_features(d["features"])
    desc = io.ingest_descriptors(cfg.path("descriptors"))
    tables = [feats["names"], desc]
    targets = list(cfg["targets"])
    labels = {}
    if with_labels:
        cfg.require("labels")
        labels = io.ingest_labels(cfg.path("labels"))
        targets = [t for t in targets if t in labels]
        if not targets:
            raise ConfigError("targets", f"none of the configured targets appear in {cfg.path('labels')}")
        tables.append({t: labels[t] for t in targets})
    names = io.join_names(*tables)
    if not names:
        raise ValueError("no structure appears in every input table")
    pos = {n: i for i, n in enumerate(feats["names"])}
    idx = np.array([pos[n] for n in names])
    y = io.label_matrix(labels, names, targets)
    data = Dataset(names, feats["sections"][idx], feats["sp_desc"][idx], feats["topo"][idx],
                   np.stack([desc[n] for n in names]), [feats["graphs"][i] for i in idx], y, targets)
    inputs = {"features": d["features"] / "names.json", "descriptors": cfg.path("descriptors")}
    if with_labels:
        inputs["labels"] = cfg.path("labels")
    return data, inputs


def _split(cfg, data):
    assign = evalstats.kfold_split(data.names, cfg["split"]["folds"], cfg.seed)
    return evalstats.fold_indices(assign, cfg["split"]["val_fold"])


def cmd_pretrain(cfg, args):
    b = args.branch
    data, inputs = _dataset(cfg)
    tr, va = _split(cfg, data)
    t0 = time.perf_counter()
    model, sc, hist = pipeline.train_branch(b, data, tr, va, cfg.model_overrides(b), cfg.train_config(b))
    dt = time.perf_counter() - t0
    log.info("%s: %d epochs on %d structures in %.1f s (%.1f structures/s)", b, hist.stopped_epoch,
             len(tr), dt, hist.stopped_epoch * len(tr) / max(dt, 1e-9))
    path = _dirs(cfg)["ckpt"] / b
    pipeline.save_branch(path, b, model, sc, hist, data.target_names,
                         {"config_hash": cfg.hash(), "seed": cfg.seed})
    io.write_manifest(path.parent, f"pretrain_{b}", cfg.hash(), cfg.seed, pipeline.versions(), inputs,
                      [path.with_suffix(".json"), path.with_suffix(".bin")], {"n_train": len(tr), "n_val": len(va)})
    print(f"{b}: best epoch {hist.best_epoch}, val loss {hist.val_loss[hist.best_epoch - 1]:.6f} -> {path}.json")


def _load_branches(cfg):
    for b in pipeline.BRANCHES:
        _need(_ckpt(cfg, b))
    out = {}
    for b in pipeline.BRANCHES:
        model, sc, manifest = pipeline.load_branch(_dirs(cfg)["ckpt"] / b)
        out[b] = (model, sc, manifest)
    return out


def cmd_fuse_train(cfg, args):
    loaded = _load_branches(cfg)
    data, inputs = _dataset(cfg)
    for b, (_, _, m) in loaded.items():
        if m["meta"]["target_names"] != data.target_names:
            raise ValueError(f"{b} checkpoint targets {m['meta']['target_names']} differ from {data.target_names}")
    tr, va = _split(cfg, data)
    feats = pipeline.branch_features({b: (m, sc) for b, (m, sc, _) in loaded.items()}, data)
    y_sc = Standardizer().fit(data.targets[tr])
    head, hist = pipeline.train_fusion(feats, y_sc.transform(data.targets), tr, va,
                                       cfg.model_overrides("fusion"), cfg.train_config("fusion"))
    path = _dirs(cfg)["ckpt"] / "fusion"
    hashes = {b: m["sha256"] for b, (_, _, m) in loaded.items()}
    pipeline.save_fusion(path, head, hist, hashes, y_sc, data.target_names,
                         {"config_hash": cfg.hash(), "seed": cfg.seed})
    inputs.update({b: _ckpt(cfg, b) for b in pipeline.BRANCHES})
    io.write_manifest(path.parent, "fuse_train", cfg.hash(), cfg.seed, pipeline.versions(), inputs,
                      [path.with_suffix(".json"), path.with_suffix(".bin")])
    print(f"fusion: best epoch {hist.best_epoch} -> {path}.json")


def cmd_predict(cfg, args):
    loaded = _load_branches(cfg)
    _need(_ckpt(cfg, "fusion"))
    head, y_sc, fman = pipeline.load_fusion(_dirs(cfg)["ckpt"] / "fusion", _dirs(cfg)["ckpt"])
    data, inputs = _dataset(cfg, with_labels=False)
    t0 = time.perf_counter()
    feats = pipeline.branch_features({b: (m, sc) for b, (m, sc, _) in loaded.items()}, data)
    y_final, _, alpha = pipeline.predict_fusion(head, feats)
    dt = time.perf_counter() - t0
    log.info("predicted %d structures in %.2f s (%.1f structures/s)", len(data), dt, len(data) / max(dt, 1e-9))
    y = y_sc.inverse(y_final)
    targets = fman["meta"]["target_names"]
    rows = [[n, *map(float, y[i]), *map(float, data.desc[i])] for i, n in enumerate(data.names)]
    path = _dirs(cfg)["predictions"]
    atomic_write(path, io.table_csv(["name", *targets, *DESCRIPTORS], rows))
    inputs.update({b: _ckpt(cfg, b) for b in (*pipeline.BRANCHES, "fusion")})
    io.write_manifest(path.parent, "predict", cfg.hash(), cfg.seed, pipeline.versions(), inputs, [path],
                      {"alpha": alpha, "targets": targets})
    print(f"predictions: {len(rows)} structures, alpha {alpha:.4f} -> {path}")


# ---------------------------------------------------------------- screen

def read_records(path, mode="VSA", descriptors: dict | None = None):
    """Screening records from a CSV holding either the metric columns (S, delta_N, N_ads)
    or the predicted targets of ``mode``. Descriptor columns are used when present,
    otherwise looked up in ``descriptors``. Returns (records, n_skipped)."""
    header, rows = io.read_rows(path)
    if "name" not in header:
        raise io.IngestError(path, "missing column 'name'")
    if {"S", "delta_N", "N_ads"} <= set(header):
        keys = ("S", "delta_N", "N_ads")
    else:
        keys = screening.MODE_TARGETS[mode]
        missing = [k for k in keys if k not in header]
        if missing:
            raise io.IngestError(path, f"needs S, delta_N, N_ads or the {mode} targets; missing {missing}")
    records, skipped = [], 0
    for r in rows:
        vals = [io.to_float(r[k]) for k in keys]
        if not np.all(np.isfinite(vals)):
            skipped += 1
            continue
        if all(d in header for d in DESCRIPTORS):
            desc = {d: io.to_float(r[d]) for d in DESCRIPTORS}
        elif descriptors is not None and r["name"] in descriptors:
            desc = dict(zip(DESCRIPTORS, map(float, descriptors[r["name"]])))
        else:
            desc = {}
        try:
            records.append(screening.ScreeningRecord.from_metrics(r["name"], *vals, desc))
        except (screening.UndefinedMetricError, ValueError) as e:
            log.warning("skipped %s: %s", r["name"], e)
            skipped += 1
    return records, skipped


def cmd_screen(cfg, args):
    s = cfg["screen"]
    src = Path(args.input) if args.input else (cfg.base_dir / s["input"] if s["input"] else _dirs(cfg)["predictions"])
    _need(src)
    desc = io.ingest_descriptors(cfg.path("descriptors")) if cfg.path("descriptors").exists() else None
    records, skipped = read_records(src, s["mode"], desc)
    if not records:
        raise ValueError(f"{src}: no usable records")
    out = _dirs(cfg)["screen"]
    res = screening.screen(records, out, step=s["step"], top=s["top"], stats_k=s["stats_k"],
                           population=s["population"], lcd_max=s["lcd_max"], phi_max=s["phi_max"],
                           aps_threshold=s["aps_threshold"], apply_prescreen=s["prescreen"],
                           weights=s["weights"])
    outputs = sorted(p for p in out.iterdir() if p.suffix in (".csv", ".json") and not p.name.startswith("manifest"))
    io.write_manifest(out, "screen", cfg.hash(), cfg.seed, pipeline.versions(), {"records": src}, outputs,
                      {"n_skipped": skipped})
    print(f"screen: {res['n_candidates']} of {res['n_input']} records ranked -> {out}")


# ---------------------------------------------------------------- stats

def _prediction_table(path):
    header, rows = io.read_rows(path)
    cols = [h for h in header if h != "name" and h not in DESCRIPTORS]
    return {c: {r["name"]: io.to_float(r[c]) for r in rows} for c in cols}


def cmd_stats(cfg, args):
    pred_path = Path(args.predictions) if args.predictions else _dirs(cfg)["predictions"]
    _need(pred_path)
    cfg.require("labels")
    preds = _prediction_table(pred_path)
    labels = io.ingest_labels(cfg.path("labels"))
    base = _prediction_table(args.baseline) if args.baseline else None
    if args.baseline:
        _need(args.baseline)
    # rebuild the split the training stages used: same names, same seed
    trained = [t for t in cfg["targets"] if t in labels]
    label_names = set().union(*(labels[t] for t in trained)) if trained else set()
    data_names = sorted(set(next(iter(preds.values()))) & label_names) if preds else []
    assign = dict(zip(data_names, evalstats.kfold_split(data_names, cfg["split"]["folds"], cfg.seed))) \
        if len(data_names) >= cfg["split"]["folds"] else {}
    result = {}
    for t in sorted(set(preds) & set(labels)):
        names = sorted(n for n in labels[t] if n in preds[t] and np.isfinite(preds[t][n]))
        entry = {}
        for split, keep in (("all", lambda n: True),
                            ("validation", lambda n: assign.get(n) == cfg["split"]["val_fold"]),
                            ("train", lambda n: n in assign and assign[n] != cfg["split"]["val_fold"])):
            sel = [n for n in names if keep(n)]
            if len(sel) < 3:
                continue
            y = np.array([labels[t][n] for n in sel])
            try:
                entry[split] = {"n": len(sel), **evalstats.report(y, np.array([preds[t][n] for n in sel])).to_dict()}
            except evalstats.UndefinedMetricError as e:
                entry[split] = {"n": len(sel), "error": str(e)}
        if base is not None and t in base:
            common = [n for n in names if n in base[t] and np.isfinite(base[t][n])]
            if len(common) >= 2:
                err_a = [abs(preds[t][n] - labels[t][n]) for n in common]
                err_b = [abs(base[t][n] - labels[t][n]) for n in common]
                tstat, p = evalstats.paired_ttest(err_a, err_b)
                entry["paired_ttest_abs_error"] = {"n": len(common), "t": tstat, "p": p}
        result[t] = entry
    if not result:
        raise ValueError(f"{pred_path} shares no target with {cfg.path('labels')}")
    out = _dirs(cfg)["stats"]
    path = out / "metrics.json"
    atomic_write(path, io.dumps(result))
    inputs = {"predictions": pred_path, "labels": cfg.path("labels")}
    if args.baseline:
        inputs["baseline"] = args.baseline
    io.write_manifest(out, "stats", cfg.hash(), cfg.seed, pipeline.versions(), inputs, [path])
    for t, e in result.items():
        if "validation" in e and "r2" in e["validation"]:
            v = e["validation"]
            print(f"{t}: validation R2 {v['r2']:.4f} MAE {v['mae']:.4f} Spearman {v['spearman']:.4f} (n={v['n']})")
    print(f"stats -> {path}")


# ---------------------------------------------------------------- demo data

def cmd_make_demo(cfg, args):
    from .structure import write_cif
    from .synthetic import demo_labels, estimate_descriptors, random_framework

    out = Path(args.directory)
    rng = np.random.default_rng(args.seed if args.seed is not None else 42)
    structures, names = [], set()
    while len(structures) < args.n:
        s = random_framework(rng)
        if s.name not in names:
            names.add(s.name)
            structures.append(s)
    desc_rows, descs = [], []
    for s in structures:
        atomic_write(out / "structures" / f"{s.name}.cif", write_cif(s).encode())
        d = estimate_descriptors(s)
        descs.append([d[k] for k in DESCRIPTORS])
        desc_rows.append([s.name, *[float(d[k]) for k in DESCRIPTORS]])
    atomic_write(out / "descriptors.csv", io.table_csv(["name", *DESCRIPTORS], desc_rows))
    labels = demo_labels(np.array(descs), rng)
    keys = list(labels)
    atomic_write(out / "labels.csv", io.table_csv(["name", *keys], [[s.name, *(float(labels[k][i]) for k in keys)]
                                                                    for i, s in enumerate(structures)]))
    atomic_write(out / "config.yaml", DEMO_CONFIG.format(targets=", ".join(keys)).encode())
    print(f"demo inputs: {len(structures)} structures -> {out}")


DEMO_CONFIG = """\
# small models so the whole pipeline runs in a few minutes on one CPU
seed: 42
paths:
  structures: structures
  descriptors: descriptors.csv
  labels: labels.csv
  out: out
targets: [{targets}]
split: {{folds: 5, val_fold: 0}}
train:
  sp: {{max_epochs: 5, batch_size: 8, lr: 0.001}}
  ph: {{max_epochs: 40, batch_size: 8, lr: 0.001}}
  big: {{max_epochs: 40, batch_size: 8, lr: 0.001}}
  fusion: {{max_epochs: 60, batch_size: 8, lr: 0.001}}
models:
  sp: {{channels: [4, 8, 8, 8], latent_dim: 16, desc_widths: [16, 8], head_hidden: 16}}
  ph: {{hidden: 32}}
  big: {{encoder_dim: 16, latent_dim: 8, decoder_dim: 16, proj_dim: 8}}
  fusion: {{fusion_dim: 16, heads: 2, mlp_hidden: 16}}
screen: {{mode: VSA, step: 0.1, top: 10, stats_k: 10}}
"""


# ---------------------------------------------------------------- entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML pipeline configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for featurization")
    common.add_argument("--weights", help="screen only these weights, e.g. 0.5:0.5,1:0")
    common.add_argument("--aps-threshold", type=float, help="APS cutoff in mol/kg for the performance window")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cofbench", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("featurize", parents=[common], help="structures -> feature files")
    pt = sub.add_parser("pretrain", parents=[common], help="train one branch and freeze it")
    pt.add_argument("branch", choices=pipeline.BRANCHES)
    sub.add_parser("fuse-train", parents=[common], help="train the fusion head on frozen branches")
    sub.add_parser("predict", parents=[common], help="per-target predictions for every featurized structure")
    sc = sub.add_parser("screen", parents=[common], help="rank records over the weight grid")
    sc.add_argument("--input", help="records CSV (defaults to the predictions file)")
    st = sub.add_parser("stats", parents=[common], help="regression metrics against the labels")
    st.add_argument("--predictions", help="predictions CSV (defaults to the predict output)")
    st.add_argument("--baseline", help="second predictions CSV for a paired t-test on absolute errors")
    md = sub.add_parser("make-demo", parents=[common], help="write a small synthetic input set")
    md.add_argument("directory")
    md.add_argument("--n", type=int, default=40)
    return p


COMMANDS = {"featurize": cmd_featurize, "pretrain": cmd_pretrain, "fuse-train": cmd_fuse_train,
            "predict": cmd_predict, "screen": cmd_screen, "stats": cmd_stats, "make-demo": cmd_make_demo}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be >= 1")
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        screen_over = {}
        if args.weights:
            screen_over["weights"] = [list(w) for w in parse_weights(args.weights)]
        if args.aps_threshold is not None:
            screen_over["aps_threshold"] = args.aps_threshold
        if screen_over:
            overrides["screen"] = screen_over
        cfg = None if args.command == "make-demo" else load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"cofbench: invalid config: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifact, FileNotFoundError) as e:
        print(f"cofbench: {e if isinstance(e, MissingArtifact) else f'missing file: {e}'}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, io.IngestError) as e:
        print(f"cofbench: error: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
