"""Warm-up, alternating label-enhancement / classifier training, model selection."""
from __future__ import annotations

import copy
import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import metrics, risk
from .data import (AdjacencyGraph, MultiLabelDataset, SinglePositiveDataset, Splits,
                   corrupt_single_positive, knn_adjacency, split, standardize_features, substream)
from .enhance import EnhancerConfig, LabelEnhancer, PriorConfig

log = logging.getLogger(__name__)

METHODS = ("smile", "smile-le-ablation", "an", "an-ls", "wan")
LR_GRID = (1e-4, 1e-3, 1e-2)
WD_GRID = (1e-4, 1e-3, 1e-2)
LAMBDA_GRID = (0.01, 0.1, 1.0)


@dataclass
class TrainConfig:
    method: str = "smile"
    batch_size: int = 16
    epochs: int = 25
    warmup_epochs: int = 5
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lam: float = 0.1
    k: int = 10
    seed: int = 0
    soft_label_mode: str = "posterior-mean"
    classifier_hidden: int = 512
    gcn_hidden: int = 128
    mlp_hidden: int = 128
    latent_dim: Optional[int] = None
    mc_samples: int = 1
    prior: float = 1.0
    ls_eps: float = 0.1
    wan_gamma: Optional[float] = None
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("batch_size must be positive and epoch counts nonnegative")


@dataclass
class TrainState:
    classifier: dict
    enhancer: Optional[LabelEnhancer] = None
    adam: dict = field(default_factory=dict)
    epoch: int = 0
    best: Optional[dict] = None
    best_ap: float = -np.inf
    best_epoch: int = -1
    soft_labels: Optional[np.ndarray] = None
    log: list = field(default_factory=list)


# classifier ----------------------------------------------------------------

def init_classifier(q, c, hidden, rng):
    """q -> hidden -> hidden -> c MLP with uniform(+-1/sqrt(fan_in)) init."""
    dims = [q, hidden, hidden, c]
    params = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        bound = 1.0 / np.sqrt(a)
        params[f"w{i}"] = ad.Tensor(rng.uniform(-bound, bound, (a, b)), requires_grad=True)
        params[f"b{i}"] = ad.Tensor(rng.uniform(-bound, bound, (b,)), requires_grad=True)
    return params


def classifier_forward(params, X):
    h = ad.as_tensor(X)
    n_layers = len(params) // 2
    for i in range(1, n_layers + 1):
        h = ad.broadcast_add_row(ad.matmul(h, params[f"w{i}"]), params[f"b{i}"])
        if i < n_layers:
            h = ad.relu(h)
    return h


def predict_proba(params, X, chunk=4096):
    out = []
    for s in range(0, len(X), chunk):
        logits = classifier_forward({k: ad.Tensor(v.data) for k, v in params.items()}, X[s:s + chunk])
        out.append(ad.sigmoid(logits).data)
    return np.concatenate(out, axis=0)


def snapshot(params):
    return {k: v.data.copy() for k, v in params.items()}


def restore(arrays):
    return {k: ad.Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}


# steps ---------------------------------------------------------------------

def _assert_finite(loss, grads, where):
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"{where}: non-finite loss")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"{where}: non-finite gradient for {name}")


def _step(params, loss, state_key, state: TrainState, config: TrainConfig, where):
    grads = ad.backward(loss)
    named = {name: grads[p] for name, p in params.items() if p in grads}
    _assert_finite(loss, named, where)
    named, _ = ad.clip_grad_norm(named, config.clip_norm)
    adam = state.adam.setdefault(state_key, ad.AdamState())
    ad.adam_step(params, named, adam, lr=config.lr, weight_decay=config.weight_decay)
    for p in params.values():
        p.grad = None
    return float(loss.data)


def baseline_loss(logits, L, config: TrainConfig):
    if config.method == "an":
        return risk.an_loss(logits, L)
    if config.method == "an-ls":
        return risk.an_ls_loss(logits, L, config.ls_eps)
    if config.method == "wan":
        return risk.wan_loss(logits, L, config.wan_gamma)
    raise ValueError(f"{config.method} has no plain baseline loss")


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[s:s + batch_size] for s in range(0, n, batch_size)]


def _evaluate(state, val_X, val_Y):
    if val_X is None:
        return {}
    probs = predict_proba(state.classifier, val_X)
    return metrics.evaluate(probs, val_Y)


def _record(state, phase, losses, val, d_change=np.nan):
    entry = {"epoch": state.epoch, "phase": phase, "clf_loss": float(np.mean(losses["clf"])),
             "le_loss": float(np.mean(losses["le"])) if losses["le"] else np.nan,
             "d_change": d_change}
    entry.update({m: val.get(m, np.nan) for m in metrics.METRICS})
    state.log.append(entry)
    ap = val.get("average_precision")
    if ap is not None and ap > state.best_ap:
        state.best_ap = ap
        state.best = snapshot(state.classifier)
        state.best_epoch = state.epoch


def warmup(state: TrainState, spd: SinglePositiveDataset, config: TrainConfig,
           val_X=None, val_Y=None, rng=None):
    """AN training of the classifier for ``warmup_epochs``; the enhancer is untouched."""
    rng = rng if rng is not None else substream(config.seed, "shuffle")
    for _ in range(config.warmup_epochs):
        losses = {"clf": [], "le": []}
        for idx in _batches(spd.n, config.batch_size, rng):
            logits = classifier_forward(state.classifier, spd.X[idx])
            loss = risk.an_loss(logits, spd.L[idx])
            losses["clf"].append(_step(state.classifier, loss, "classifier", state, config, "warmup"))
        state.epoch += 1
        _record(state, "warmup", losses, _evaluate(state, val_X, val_Y))
    return state


def train_epoch(state: TrainState, spd: SinglePositiveDataset, graph: Optional[AdjacencyGraph],
                config: TrainConfig, val_X=None, val_Y=None, rng=None, sample_rng=None):
    """One epoch of the main phase for ``config.method``."""
    rng = rng if rng is not None else substream(config.seed, "shuffle")
    sample_rng = sample_rng if sample_rng is not None else substream(config.seed, "sampling")
    losses = {"clf": [], "le": []}
    for idx in _batches(spd.n, config.batch_size, rng):
        L_b = spd.L[idx]
        if config.method == "smile":
            enh = state.enhancer
            terms = enh.terms(idx, sample_rng)
            losses["le"].append(_step(enh.params, terms.objective, "enhancer", state, config,
                                      f"label enhancement (epoch {state.epoch + 1})"))
            D = enh.soft_labels(idx, config.soft_label_mode, sample_rng)
            logits = classifier_forward(state.classifier, spd.X[idx])
            loss = risk.risk_consistent_loss(logits, L_b, D)
        elif config.method == "smile-le-ablation":
            logits = classifier_forward(state.classifier, spd.X[idx])
            D = ad.stop_gradient(risk.probs_of(logits)).data
            loss = risk.risk_consistent_loss(logits, L_b, D)
        else:
            logits = classifier_forward(state.classifier, spd.X[idx])
            loss = baseline_loss(logits, L_b, config)
        losses["clf"].append(_step(state.classifier, loss, "classifier", state, config,
                                   f"classifier (epoch {state.epoch + 1})"))
    state.epoch += 1
    d_change = np.nan
    if state.enhancer is not None:
        D_all = state.enhancer.soft_labels()
        if state.soft_labels is not None:
            d_change = float(np.mean(np.abs(D_all - state.soft_labels)))
        state.soft_labels = D_all
    _record(state, "train", losses, _evaluate(state, val_X, val_Y), d_change)
    return state


def new_state(spd: SinglePositiveDataset, graph, config: TrainConfig) -> TrainState:
    q, c = spd.X.shape[1], spd.L.shape[1]
    state = TrainState(init_classifier(q, c, config.classifier_hidden, substream(config.seed, "init")))
    if config.method == "smile":
        enh_cfg = EnhancerConfig(config.gcn_hidden, config.mlp_hidden, config.latent_dim,
                                 config.mc_samples, config.soft_label_mode)
        prior = PriorConfig.uniform(c, config.lam, config.prior)
        state.enhancer = LabelEnhancer(spd, graph, prior, enh_cfg, substream(config.seed, "init-enhancer"))
    return state


def fit(spd: SinglePositiveDataset, config: TrainConfig, val_X=None, val_Y=None, graph=None):
    """Warm-up then the main epochs; returns (best classifier arrays, state).

    Baselines skip the warm-up phase and train for warmup_epochs + epochs, so
    every method sees the same number of passes over the data.
    """
    if config.method == "smile" and graph is None:
        graph = knn_adjacency(spd.X, config.k)
    state = new_state(spd, graph, config)
    shuffle_rng = substream(config.seed, "shuffle")
    sample_rng = substream(config.seed, "sampling")
    if config.method in ("smile", "smile-le-ablation"):
        warmup(state, spd, config, val_X, val_Y, shuffle_rng)
        main_epochs = config.epochs
        if state.enhancer is not None:
            state.soft_labels = state.enhancer.soft_labels()
    else:
        main_epochs = config.warmup_epochs + config.epochs
    for _ in range(main_epochs):
        train_epoch(state, spd, graph, config, val_X, val_Y, shuffle_rng, sample_rng)
    if state.best is None:
        state.best = snapshot(state.classifier)
        state.best_epoch = state.epoch
    log.debug("best validation AP %.4f at epoch %d", state.best_ap, state.best_epoch)
    return state.best, state


def grid_search(spd, config: TrainConfig, val_X, val_Y, grids=None, graph=None):
    """Exhaustive lr x weight_decay x lambda search by validation average precision.

    Ties go to the smaller lr, then the smaller lambda. Returns (best config, results).
    """
    grids = grids or {}
    lrs = sorted(grids.get("lr", LR_GRID))
    wds = sorted(grids.get("weight_decay", WD_GRID))
    lams = sorted(grids.get("lam", LAMBDA_GRID)) if config.method == "smile" else [config.lam]
    if config.method == "smile" and graph is None:
        graph = knn_adjacency(spd.X, config.k)
    results = []
    for lr, wd, lam in itertools.product(lrs, wds, lams):
        cfg = replace(config, lr=lr, weight_decay=wd, lam=lam)
        try:
            _, state = fit(spd, cfg, val_X, val_Y, graph)
            ap = state.best_ap
        except FloatingPointError as exc:
            log.warning("grid cell lr=%g wd=%g lam=%g diverged: %s", lr, wd, lam, exc)
            ap = -np.inf
        results.append((cfg, ap))
    best = min(results, key=lambda r: (-r[1], r[0].lr, r[0].lam, r[0].weight_decay))
    return best[0], results


# end-to-end ------------------------------------------------------------------

@dataclass
class PreparedRun:
    train: SinglePositiveDataset
    val_X: np.ndarray
    val_Y: np.ndarray
    test_X: np.ndarray
    test_Y: np.ndarray
    splits: Splits
    graph: Optional[AdjacencyGraph] = None


def prepare_run(ds: MultiLabelDataset, seed: int, k: int = 10, build_graph=True) -> PreparedRun:
    """Split, corrupt the training rows, standardise on training statistics, build the graph."""
    sp = split(ds.n, int(substream(seed, "split").integers(2**31)))
    tr, va, te = ds.subset(sp.train), ds.subset(sp.val), ds.subset(sp.test)
    Xtr, Xva, Xte = standardize_features(tr.X, va.X, te.X)
    spd = corrupt_single_positive(MultiLabelDataset(Xtr, tr.Y, ds.name),
                                  int(substream(seed, "corrupt").integers(2**31)))
    graph = knn_adjacency(Xtr, k) if build_graph else None
    return PreparedRun(spd, Xva, va.Y, Xte, te.Y, sp, graph)


def run_method(ds: MultiLabelDataset, config: TrainConfig, grid=False, grids=None):
    """Full protocol for one seed; returns (test metrics, state, chosen config)."""
    prep = prepare_run(ds, config.seed, config.k, build_graph=config.method == "smile")
    if grid:
        config, _ = grid_search(prep.train, config, prep.val_X, prep.val_Y, grids, prep.graph)
    best, state = fit(prep.train, config, prep.val_X, prep.val_Y, prep.graph)
    probs = predict_proba(restore(best), prep.test_X)
    return metrics.evaluate(probs, prep.test_Y), state, config


def copy_state(state: TrainState) -> TrainState:
    return copy.deepcopy(state)
