"""Branch pretraining, frozen feature extraction, fusion training and prediction."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import __version__
from .. import autodiff as ad
from ..autodiff.checkpoint import load_checkpoint, read_manifest, save_checkpoint, state_checksum
from .bigcae import BiGCAE, BiGCAEConfig, GraphBatch, bigcae_loss
from .data import Dataset, Standardizer
from .fusion import FusionConfig, FusionHead, fusion_loss
from .phnn import PHNN, PHNNConfig, phnn_loss
from .spcvae import SPcVAE, SPcVAEConfig, spcvae_loss
from .training import TrainConfig, fit

BRANCHES = ("sp", "ph", "big")
_CONFIGS = {"sp": SPcVAEConfig, "ph": PHNNConfig, "big": BiGCAEConfig}
_MODELS = {"sp": SPcVAE, "ph": PHNN, "big": BiGCAE}
EVAL_CHUNK = 64


def versions() -> dict:
    return {"cofbench": __version__, "numpy": np.__version__}


def make_config(branch, overrides: dict | None, n_targets: int, seed: int):
    cls = _CONFIGS[branch]
    d = dict(overrides or {})
    d["n_targets"] = n_targets
    d["seed"] = seed
    for key in ("channels", "desc_widths"):
        if key in d:
            d[key] = tuple(d[key])
    return cls(**d)


def fit_scalers(branch, data: Dataset, idx) -> dict:
    sc = {"y": Standardizer().fit(data.targets[idx])}
    if branch == "sp":
        sc["sp_desc"] = Standardizer().fit(data.sp_desc[idx])
    elif branch == "ph":
        sc["topo"] = Standardizer().fit(np.log1p(data.topo[idx]))
        sc["desc"] = Standardizer().fit(data.desc[idx])
    return sc


def _forward(branch, model, data: Dataset, idx, sc, graphs=None):
    if branch == "sp":
        return model(data.sections[idx], sc["sp_desc"].transform(data.sp_desc[idx]))
    if branch == "ph":
        return model(sc["topo"].transform(np.log1p(data.topo[idx])), sc["desc"].transform(data.desc[idx]))
    batch = graphs if graphs is not None else GraphBatch([data.graphs[i] for i in idx])
    return model(batch)


def _loss(branch, model, data, idx, sc, y, view_rng=None):
    cfg = model.config
    if branch == "sp":
        out = _forward(branch, model, data, idx, sc)
        return spcvae_loss(out, data.sections[idx], y, cfg.alpha, cfg.beta)
    if branch == "ph":
        return phnn_loss(_forward(branch, model, data, idx, sc), y)
    batch = GraphBatch([data.graphs[i] for i in idx])
    out = model(batch)
    views = [model(v) for v in model.views(batch, view_rng)] if cfg.beta else None
    return bigcae_loss(out, views, y, cfg.alpha, cfg.beta, cfg.tau, cfg.huber_delta)


def _chunks(idx, size=EVAL_CHUNK):
    idx = np.asarray(idx)
    return [idx[i:i + size] for i in range(0, len(idx), size)]


def train_branch(branch, data: Dataset, train_idx, val_idx, model_cfg=None,
                 train_cfg: TrainConfig | None = None):
    """Pretrain one branch. Returns (model, scalers, history)."""
    if branch not in BRANCHES:
        raise ValueError(f"unknown branch {branch!r}; expected one of {BRANCHES}")
    train_idx, val_idx = np.asarray(train_idx, int), np.asarray(val_idx, int)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ValueError("train and validation splits must be non-empty")
    if set(train_idx.tolist()) & set(val_idx.tolist()):
        raise ValueError("train and validation splits overlap")
    tcfg = train_cfg or TrainConfig()
    cfg = model_cfg if not isinstance(model_cfg, (dict, type(None))) else \
        make_config(branch, model_cfg, data.targets.shape[1], tcfg.seed)
    model = _MODELS[branch](cfg)
    sc = fit_scalers(branch, data, train_idx)
    y = sc["y"].transform(data.targets)

    def step_loss(local):
        idx = train_idx[local]
        return _loss(branch, model, data, idx, sc, y[idx])

    def evaluate():
        total = 0.0
        for ch in _chunks(val_idx):
            rng = np.random.default_rng(tcfg.seed)
            total += float(_loss(branch, model, data, ch, sc, y[ch], rng).data) * len(ch)
        return total / len(val_idx)

    hist = fit(model, step_loss, evaluate, len(train_idx), tcfg)
    return model, sc, hist


def extract(branch, model, sc, data: Dataset, idx=None):
    """Frozen features and standardized predictions, eval mode, no grad."""
    idx = np.arange(len(data)) if idx is None else np.asarray(idx, int)
    model.eval()
    feats, preds = [], []
    with ad.no_grad():
        for ch in _chunks(idx):
            if branch == "sp":
                out = model(data.sections[ch], sc["sp_desc"].transform(data.sp_desc[ch]), reconstruct=False)
            else:
                out = _forward(branch, model, data, ch, sc)
            feats.append(out["feature"].data)
            preds.append(out["y_hat"].data)
    return np.concatenate(feats).astype(np.float64), np.concatenate(preds).astype(np.float64)


def branch_features(models: dict, data: Dataset, idx=None) -> dict:
    """{branch: (feature, y_hat_std)} for every trained branch in ``models``
    (a mapping branch -> (model, scalers))."""
    return {b: extract(b, m, sc, data, idx) for b, (m, sc) in models.items()}


def train_fusion(feats: dict, y_std, train_idx, val_idx, fusion_cfg=None,
                 train_cfg: TrainConfig | None = None):
    """Train the fusion head on frozen branch features (all rows of ``feats``)."""
    tcfg = train_cfg or TrainConfig()
    sp_f, sp_y = feats["sp"]
    ph_f, big_f = feats["ph"][0], feats["big"][0]
    if isinstance(fusion_cfg, FusionConfig):
        cfg = fusion_cfg
    else:
        d = dict(fusion_cfg or {})
        d.update(sp_dim=sp_f.shape[1], ph_dim=ph_f.shape[1], big_dim=big_f.shape[1],
                 n_targets=y_std.shape[1], seed=tcfg.seed)
        cfg = FusionConfig(**d)
    head = FusionHead(cfg)
    train_idx, val_idx = np.asarray(train_idx, int), np.asarray(val_idx, int)
    dt = ad.default_dtype()
    arrays = [a.astype(dt) for a in (sp_f, sp_y, ph_f, big_f)]

    def run(idx):
        return head(*(a[idx] for a in arrays))

    def step_loss(local):
        idx = train_idx[local]
        return fusion_loss(run(idx), y_std[idx], cfg.main_weight, cfg.fusion_weight)

    def evaluate():
        return float(fusion_loss(run(val_idx), y_std[val_idx], cfg.main_weight, cfg.fusion_weight).data)

    hist = fit(head, step_loss, evaluate, len(train_idx), tcfg)
    return head, hist


def predict_fusion(head: FusionHead, feats: dict):
    head.eval()
    dt = ad.default_dtype()
    with ad.no_grad():
        out = head(feats["sp"][0].astype(dt), feats["sp"][1].astype(dt),
                   feats["ph"][0].astype(dt), feats["big"][0].astype(dt))
    return out["y_final"].data.astype(np.float64), out["y_fusion"].data.astype(np.float64), float(out["alpha"].data)


# --------------------------------------------------------------------------
# persistence

def save_branch(path, branch, model, sc, history, target_names, extra=None) -> str:
    meta = {
        "kind": "branch",
        "branch": branch,
        "config": model.config.to_dict(),
        "scalers": {k: v.to_dict() for k, v in sc.items()},
        "target_names": list(target_names),
        "history": history.to_dict() if history is not None else None,
        "versions": versions(),
    }
    meta.update(extra or {})
    return save_checkpoint(path, model.state(), meta)


def load_branch(path):
    manifest = read_manifest(path)
    meta = manifest["meta"]
    branch = meta["branch"]
    cfg_dict = dict(meta["config"])
    for key in ("channels", "desc_widths"):
        if key in cfg_dict:
            cfg_dict[key] = tuple(cfg_dict[key])
    model = _MODELS[branch](_CONFIGS[branch](**cfg_dict))
    shapes = {k: v.shape for k, v in model.state().items()}
    state, manifest = load_checkpoint(path, shapes)
    model.load_state(state)
    model.eval()
    sc = {k: Standardizer.from_dict(v) for k, v in meta["scalers"].items()}
    return model, sc, manifest


def save_fusion(path, head, history, branch_hashes: dict, y_scaler, target_names, extra=None) -> str:
    meta = {
        "kind": "fusion",
        "config": head.config.to_dict(),
        "frozen": dict(sorted(branch_hashes.items())),
        "scalers": {"y": y_scaler.to_dict()},
        "target_names": list(target_names),
        "history": history.to_dict() if history is not None else None,
        "versions": versions(),
    }
    meta.update(extra or {})
    return save_checkpoint(path, head.state(), meta)


def load_fusion(path, branch_dir=None):
    manifest = read_manifest(path)
    meta = manifest["meta"]
    head = FusionHead(FusionConfig(**meta["config"]))
    state, manifest = load_checkpoint(path, {k: v.shape for k, v in head.state().items()})
    head.load_state(state)
    head.eval()
    if branch_dir is not None:
        for b, digest in meta["frozen"].items():
            got = read_manifest(Path(branch_dir) / b)["sha256"]
            if got != digest:
                raise ValueError(f"frozen {b} checkpoint changed since fusion training")
    return head, Standardizer.from_dict(meta["scalers"]["y"]), manifest


def model_checksum(model) -> str:
    return state_checksum(model.state())


def run_ablation(data: Dataset, train_idx, val_idx, model_cfgs=None, train_cfgs=None,
                 fusion_cfg=None, fusion_train=None):
    """Validation R^2 of each branch alone and of the fused predictor (first target)."""
    from ..evalstats import r2

    model_cfgs = model_cfgs or {}
    train_cfgs = train_cfgs or {}
    models, scores = {}, {}
    va = np.asarray(val_idx, int)
    for b in BRANCHES:
        m, sc, _ = train_branch(b, data, train_idx, val_idx, model_cfgs.get(b), train_cfgs.get(b))
        models[b] = (m, sc)
        _, y_hat = extract(b, m, sc, data, va)
        scores[b] = r2(data.targets[va, 0], sc["y"].inverse(y_hat)[:, 0])
    feats = branch_features(models, data)
    y_sc = Standardizer().fit(data.targets[np.asarray(train_idx, int)])
    before = {b: model_checksum(m) for b, (m, _) in models.items()}
    head, _ = train_fusion(feats, y_sc.transform(data.targets), train_idx, val_idx, fusion_cfg, fusion_train)
    y_final, _, alpha = predict_fusion(head, {k: (v[0][va], v[1][va]) for k, v in feats.items()})
    scores["fused"] = r2(data.targets[va, 0], y_sc.inverse(y_final)[:, 0])
    scores["alpha"] = alpha
    scores["frozen_unchanged"] = before == {b: model_checksum(m) for b, (m, _) in models.items()}
    return scores
