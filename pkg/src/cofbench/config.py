"""Declarative YAML pipeline configuration.

Every numeric setting lives in the file. Only paths may be overridden from the
environment (COFBENCH_STRUCTURES, COFBENCH_DESCRIPTORS, COFBENCH_LABELS, COFBENCH_OUT).
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from pathlib import Path

import yaml

from .models.bigcae import BiGCAEConfig
from .models.data import TARGETS
from .models.fusion import FusionConfig
from .models.phnn import PHNNConfig
from .models.spcvae import SPcVAEConfig
from .models.training import TrainConfig
from .screening import MODE_TARGETS

PATH_KEYS = ("structures", "descriptors", "labels", "out")
ENV_PREFIX = "COFBENCH_"
_MODEL_CLASSES = {"sp": SPcVAEConfig, "ph": PHNNConfig, "big": BiGCAEConfig, "fusion": FusionConfig}
# filled in from the data or the seed at run time
_DERIVED = {"n_targets", "seed", "sp_dim", "ph_dim", "big_dim"}

DEFAULTS = {
    "seed": 42,
    "paths": {"structures": "structures", "descriptors": "descriptors.csv", "labels": "labels.csv", "out": "out"},
    "targets": list(TARGETS),
    "featurize": {"supercell": [2, 2, 2], "thickness": 2.0, "max_edge": 10.0, "min_persistence": 0.01},
    "split": {"folds": 5, "val_fold": 0},
    "train": {b: {} for b in ("sp", "ph", "big", "fusion")},
    "models": {b: {} for b in ("sp", "ph", "big", "fusion")},
    "screen": {"mode": "VSA", "step": 0.1, "weights": None, "top": 10, "stats_k": 100,
               "population": "prescreened", "lcd_max": 20.0, "phi_max": 0.8,
               "aps_threshold": 100.0, "prescreen": True, "input": None},
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _merge(base, over, where=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        path = f"{where}.{k}" if where else str(k)
        if k not in base:
            raise ConfigError(path, "unknown field")
        if isinstance(base[k], dict) and not isinstance(v, dict):
            raise ConfigError(path, "expected a mapping")
        out[k] = _merge(base[k], v, path) if isinstance(base[k], dict) and base[k] else v
    return out


def _number(d, key, where, kind=float, lo=None, hi=None, lo_open=False):
    v = d[key]
    path = f"{where}.{key}" if where else key
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
        raise ConfigError(path, f"expected {kind.__name__}, got {v!r}")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}")


def parse_weights(text: str) -> list:
    """'0.5:0.5,1:0' -> [(0.5, 0.5), (1.0, 0.0)]"""
    out = []
    for tok in str(text).split(","):
        parts = tok.strip().split(":")
        if len(parts) != 2:
            raise ConfigError("screen.weights", f"expected w_R:w_A, got {tok!r}")
        try:
            a, b = float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError("screen.weights", f"not a number in {tok!r}") from None
        if a < 0 or b < 0 or abs(a + b - 1.0) > 1e-9:
            raise ConfigError("screen.weights", f"{tok!r} must be non-negative and sum to 1")
        out.append((a, b))
    return out


@dataclasses.dataclass
class PipelineConfig:
    data: dict
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def path(self, key) -> Path:
        p = Path(self.data["paths"][key])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out(self) -> Path:
        return self.path("out")

    def train_config(self, branch) -> TrainConfig:
        d = dict(self.data["train"][branch])
        d["seed"] = self.seed
        return TrainConfig(**d)

    def model_overrides(self, branch) -> dict:
        return dict(self.data["models"][branch])

    def hash(self) -> str:
        """sha256 of the canonical JSON of the resolved config."""
        return hashlib.sha256(json.dumps(self.data, sort_keys=True).encode()).hexdigest()

    def require(self, *keys):
        """Referenced input paths must exist."""
        for k in keys:
            if not self.path(k).exists():
                raise ConfigError(f"paths.{k}", f"{self.path(k)} does not exist")


def validate(d: dict) -> dict:
    _number(d, "seed", "", int, 0)
    for k in PATH_KEYS:
        if not isinstance(d["paths"][k], str) or not d["paths"][k]:
            raise ConfigError(f"paths.{k}", "expected a non-empty path string")
    if not isinstance(d["targets"], list) or not d["targets"]:
        raise ConfigError("targets", "expected a non-empty list")
    for t in d["targets"]:
        if t not in TARGETS:
            raise ConfigError("targets", f"unknown target {t!r}; accepted: {', '.join(TARGETS)}")
    f = d["featurize"]
    sc = f["supercell"]
    if not (isinstance(sc, list) and len(sc) == 3 and all(isinstance(x, int) and x >= 1 for x in sc)):
        raise ConfigError("featurize.supercell", "expected three positive integers")
    for k in ("thickness", "max_edge"):
        _number(f, k, "featurize", float, 0, lo_open=True)
    _number(f, "min_persistence", "featurize", float, 0)
    _number(d["split"], "folds", "split", int, 2)
    _number(d["split"], "val_fold", "split", int, 0, d["split"]["folds"] - 1)
    train_fields = {x.name for x in dataclasses.fields(TrainConfig)} - {"seed"}
    for b, over in d["train"].items():
        for k in over:
            if k not in train_fields:
                raise ConfigError(f"train.{b}.{k}", "unknown field")
    for b, cls in _MODEL_CLASSES.items():
        allowed = {x.name for x in dataclasses.fields(cls)} - _DERIVED
        for k in d["models"][b]:
            if k not in allowed:
                raise ConfigError(f"models.{b}.{k}", "unknown field")
    s = d["screen"]
    if s["mode"] not in MODE_TARGETS:
        raise ConfigError("screen.mode", f"expected one of {sorted(MODE_TARGETS)}")
    if s["population"] not in ("prescreened", "all"):
        raise ConfigError("screen.population", "expected 'prescreened' or 'all'")
    _number(s, "step", "screen", float, 0, 1, lo_open=True)
    n = round(1.0 / s["step"])
    if abs(n * s["step"] - 1.0) > 1e-9:
        raise ConfigError("screen.step", f"{s['step']} does not divide 1 evenly")
    for k in ("top", "stats_k"):
        _number(s, k, "screen", int, 1)
    for k in ("lcd_max", "aps_threshold"):
        _number(s, k, "screen", float)
    _number(s, "phi_max", "screen", float, 0, 1)
    if not isinstance(s["prescreen"], bool):
        raise ConfigError("screen.prescreen", "expected true or false")
    if s["input"] is not None and not isinstance(s["input"], str):
        raise ConfigError("screen.input", "expected a path string")
    if s["weights"] is not None:
        s["weights"] = [list(w) for w in parse_weights(s["weights"] if isinstance(s["weights"], str)
                                                       else ",".join(f"{a}:{b}" for a, b in s["weights"]))]
    return d


def load_config(path=None, overrides: dict | None = None, env=None) -> PipelineConfig:
    """Defaults <- YAML file <- ``overrides`` (CLI flags) <- environment (paths only)."""
    env = os.environ if env is None else env
    doc = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("--config", f"{path} does not exist")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError("--config", f"not valid YAML: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("--config", "top level must be a mapping")
        base = path.parent
    d = _merge(DEFAULTS, doc)
    d = _merge(d, overrides or {})
    for k in PATH_KEYS:
        v = env.get(ENV_PREFIX + k.upper())
        if v:
            d["paths"][k] = v
    return PipelineConfig(validate(d), base)
