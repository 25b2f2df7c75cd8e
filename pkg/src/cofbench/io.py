"""Tabular ingestion (descriptors, labels), feature stores and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from pathlib import Path

import numpy as np

from .autodiff.checkpoint import atomic_write
from .models.data import DESCRIPTORS, TARGETS
from .supragraph import Supragraph

log = logging.getLogger(__name__)

FEATURE_ARRAYS = ("sections", "sp_desc", "topo")


class IngestError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def read_rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        rows = [{(k or "").strip(): (v or "").strip() for k, v in r.items()} for r in reader]
    return header, rows


def to_float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


class DescriptorTable(dict):
    """name -> descriptor vector, plus the ingestion counts."""
    rejected = 0
    duplicates = 0


def ingest_descriptors(path) -> DescriptorTable:
    """name -> (PLD, LCD, S_acc, rho, phi). Units A, A, m2/g, g/cm3, dimensionless.

    Rows with a non-finite value or phi outside [0, 1] are rejected and counted;
    a repeated name overrides the earlier row (with a warning).
    """
    header, rows = read_rows(path)
    if not header:
        raise IngestError(path, "empty file")
    for col in ("name",) + DESCRIPTORS:
        if col not in header:
            raise IngestError(path, f"missing column {col!r}")
    table = DescriptorTable()
    for r in rows:
        v = np.array([to_float(r[c]) for c in DESCRIPTORS])
        if not r["name"] or not np.all(np.isfinite(v)) or not 0.0 <= v[4] <= 1.0:
            table.rejected += 1
            continue
        if r["name"] in table:
            table.duplicates += 1
            log.warning("%s: duplicate name %s, keeping the last row", path, r["name"])
        table[r["name"]] = v
    if table.rejected:
        log.warning("%s: rejected %d row(s) with non-finite or out-of-range values", path, table.rejected)
    return table


def ingest_labels(path) -> dict:
    """{target: {name: value}}; blank or non-finite cells are simply absent."""
    header, rows = read_rows(path)
    if not header:
        raise IngestError(path, "empty file")
    if "name" not in header:
        raise IngestError(path, "missing column 'name'")
    unknown = [h for h in header if h != "name" and h not in TARGETS]
    if unknown:
        raise IngestError(path, f"unknown target column(s) {unknown}; accepted: {', '.join(TARGETS)}")
    targets = [h for h in header if h != "name"]
    if not targets:
        raise IngestError(path, "no target columns")
    if not rows:
        raise IngestError(path, "no data rows")
    out = {t: {} for t in targets}
    for r in rows:
        for t in targets:
            v = to_float(r[t])
            if np.isfinite(v):
                out[t][r["name"]] = v
    return out


def join_names(*tables) -> list:
    """Sorted names present in every table (label tables contribute the union of their targets)."""
    sets = []
    for t in tables:
        if isinstance(t, dict) and t and all(isinstance(v, dict) for v in t.values()):
            sets.append(set().union(*t.values()))
        else:
            sets.append(set(t))
    return sorted(set.intersection(*sets)) if sets else []


def label_matrix(labels: dict, names, target_names) -> np.ndarray:
    y = np.full((len(names), len(target_names)), np.nan)
    for j, t in enumerate(target_names):
        col = labels.get(t, {})
        for i, n in enumerate(names):
            if n in col:
                y[i, j] = col[n]
    return y


# ---------------------------------------------------------------- hashing / manifests

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def path_hash(path) -> str:
    """sha256 of a file, or of the sorted (relative name, file hash) list of a directory."""
    path = Path(path)
    if path.is_dir():
        items = [f"{p.relative_to(path).as_posix()}:{file_hash(p)}"
                 for p in sorted(path.rglob("*")) if p.is_file()]
        return hashlib.sha256("\n".join(items).encode()).hexdigest()
    return file_hash(path)


def dumps(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode()


def write_manifest(out_dir, stage, config_hash, seed, versions, inputs: dict, outputs: list, extra=None):
    """manifest.json listing input and output hashes; no timestamps so reruns are byte-identical."""
    out_dir = Path(out_dir)
    doc = {
        "stage": stage,
        "config_hash": config_hash,
        "seed": seed,
        "versions": versions,
        "inputs": {k: path_hash(v) for k, v in sorted(inputs.items())},
        "outputs": {str(Path(p).relative_to(out_dir).as_posix()): file_hash(p) for p in sorted(map(str, outputs))},
    }
    doc.update(extra or {})
    atomic_write(out_dir / f"manifest_{stage}.json", dumps(doc))
    return doc


# ---------------------------------------------------------------- feature store

def _npy_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_features(out_dir, feats: list) -> list:
    """One .npy per array plus names/graphs JSON. Returns the written paths."""
    out_dir = Path(out_dir)
    paths = []
    for key in FEATURE_ARRAYS:
        p = out_dir / f"{key}.npy"
        atomic_write(p, _npy_bytes(np.stack([f[key] for f in feats])))
        paths.append(p)
    p = out_dir / "names.json"
    atomic_write(p, dumps([f["name"] for f in feats]))
    paths.append(p)
    p = out_dir / "graphs.jsonl"
    atomic_write(p, "".join(f["graph"].to_json() + "\n" for f in feats).encode())
    paths.append(p)
    return paths


def load_features(feat_dir) -> dict:
    feat_dir = Path(feat_dir)
    for name in (*[f"{k}.npy" for k in FEATURE_ARRAYS], "names.json", "graphs.jsonl"):
        if not (feat_dir / name).exists():
            raise FileNotFoundError(str(feat_dir / name))
    out = {k: np.load(feat_dir / f"{k}.npy", allow_pickle=False) for k in FEATURE_ARRAYS}
    out["names"] = json.loads((feat_dir / "names.json").read_text())
    out["graphs"] = [Supragraph.from_json(line) for line in (feat_dir / "graphs.jsonl").read_text().splitlines()]
    return out


# ---------------------------------------------------------------- csv writers

def table_csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{x:.6f}" if isinstance(x, float) else x for x in r])
    return buf.getvalue().encode()
