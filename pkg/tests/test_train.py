"""Training loop: warm-up, alternating epochs, selection and grid search."""
from dataclasses import replace

import numpy as np
import pytest

from spmll import autodiff as ad
from spmll import data, risk, synthetic, train
from spmll.train import TrainConfig

SMALL = dict(classifier_hidden=32, gcn_hidden=16, mlp_hidden=16, latent_dim=4, batch_size=16)


def toy_spd(n=200, seed=0):
    ds = synthetic.separable_toy(n, seed)
    spd = data.corrupt_single_positive(ds, seed)
    (X,) = data.standardize_features(spd.X)
    return data.SinglePositiveDataset(X, spd.L, spd.hiddenY)


@pytest.fixture(scope="module")
def clustered():
    ds = synthetic.clustered_multilabel(n=300, q=8, c=4, n_clusters=5, seed=2, noise=0.8)
    return train.prepare_run(ds, seed=0, k=5)


def an_value(params, spd):
    p = np.clip(train.predict_proba(params, spd.X), 1e-7, 1 - 1e-7)
    return risk.an_loss(ad.tensor(np.log(p) - np.log1p(-p)), spd.L).item()


class TestWarmup:
    def test_separable_toy_low_loss(self):
        spd = toy_spd()
        cfg = TrainConfig(seed=0)
        state = train.new_state(spd, None, replace(cfg, method="an"))
        train.warmup(state, spd, cfg)
        assert an_value(state.classifier, spd) < 0.1

    def test_zero_epochs(self):
        spd = toy_spd()
        cfg = TrainConfig(method="an", warmup_epochs=0, **SMALL)
        state = train.new_state(spd, None, cfg)
        before = train.snapshot(state.classifier)
        train.warmup(state, spd, cfg)
        assert state.epoch == 0 and not state.log
        for k, v in before.items():
            np.testing.assert_array_equal(state.classifier[k].data, v)

    def test_deterministic(self):
        spd = toy_spd()
        cfg = TrainConfig(method="an", warmup_epochs=2, **SMALL)
        runs = []
        for _ in range(2):
            s = train.new_state(spd, None, cfg)
            train.warmup(s, spd, cfg)
            runs.append(train.snapshot(s.classifier))
        for k in runs[0]:
            np.testing.assert_array_equal(runs[0][k], runs[1][k])


class TestEpoch:
    def test_reduces_validation_risk(self):
        ds = synthetic.separable_toy(240, seed=4)
        prep = train.prepare_run(ds, seed=0, k=10)
        cfg = TrainConfig(method="smile", warmup_epochs=1, seed=0, **SMALL)
        state = train.new_state(prep.train, prep.graph, cfg)
        train.warmup(state, prep.train, cfg)

        def val_risk():
            p = np.clip(train.predict_proba(state.classifier, prep.val_X), 1e-7, 1 - 1e-7)
            return risk.expected_bce_closed_form(p, prep.val_Y) / len(p)

        before = val_risk()
        train.train_epoch(state, prep.train, prep.graph, cfg)
        assert val_risk() < before

    def test_lambda_zero_D_equals_L_is_weighted_an(self, rng):
        logits = rng.normal(size=(5, 3))
        L = np.eye(3)[rng.integers(0, 3, 5)]
        p = np.clip(1 / (1 + np.exp(-logits)), 1e-7, 1 - 1e-7)
        w = 1 / (np.maximum(p[np.arange(5), L.argmax(1)], 1e-3) * 3)
        per_an = -(L * np.log(p) + (1 - L) * np.log(1 - p)).sum(axis=1)
        got = risk.risk_consistent_loss(ad.tensor(logits), L, L).item()
        assert got == pytest.approx(np.mean(w * per_an), rel=1e-12)

    def test_nan_guard_names_tensor(self):
        spd = toy_spd(40)
        cfg = TrainConfig(method="an", warmup_epochs=0, **SMALL)
        state = train.new_state(spd, None, cfg)
        state.classifier["b3"].data[0] = np.nan
        with pytest.raises(FloatingPointError, match="non-finite"):
            train.train_epoch(state, spd, None, cfg)

    def test_ablation_uses_model_confidence(self, clustered):
        cfg = TrainConfig(method="smile-le-ablation", warmup_epochs=1, epochs=1, seed=0, **SMALL)
        _, state = train.fit(clustered.train, cfg, clustered.val_X, clustered.val_Y)
        assert state.enhancer is None and len(state.log) == 2


@pytest.fixture(scope="module")
def fitted(clustered):
    cfg = TrainConfig(method="smile", warmup_epochs=2, epochs=3, seed=1, **SMALL)
    return cfg, train.fit(clustered.train, cfg, clustered.val_X, clustered.val_Y, clustered.graph)


def same_log(a, b):
    return len(a) == len(b) and all(
        x.keys() == y.keys() and all(x[k] == y[k] or (x[k] != x[k] and y[k] != y[k]) for k in x)
        for x, y in zip(a, b))


class TestFit:
    def test_log_length(self, fitted):
        cfg, (_, state) = fitted
        assert len(state.log) == cfg.warmup_epochs + cfg.epochs
        assert [e["phase"] for e in state.log] == ["warmup"] * 2 + ["train"] * 3

    def test_best_snapshot_dominates(self, fitted):
        _, (best, state) = fitted
        assert state.best_ap >= max(e["average_precision"] for e in state.log)
        assert best is state.best

    def test_d_change_logged(self, fitted):
        _, (_, state) = fitted
        assert all(np.isfinite(e["d_change"]) and e["d_change"] >= 0 for e in state.log if e["phase"] == "train")

    def test_deterministic_logs(self, clustered, fitted):
        cfg, (_, state) = fitted
        _, again = train.fit(clustered.train, cfg, clustered.val_X, clustered.val_Y, clustered.graph)
        assert same_log(again.log, state.log)

    @pytest.mark.parametrize("method", ["an", "an-ls", "wan"])
    def test_baselines_same_epoch_budget(self, clustered, method):
        cfg = TrainConfig(method=method, warmup_epochs=1, epochs=2, seed=0, **SMALL)
        _, state = train.fit(clustered.train, cfg, clustered.val_X, clustered.val_Y)
        assert len(state.log) == 3 and all(e["phase"] == "train" for e in state.log)

    def test_bad_method(self):
        with pytest.raises(ValueError):
            TrainConfig(method="role")


class TestGrid:
    def base(self, **kw):
        return TrainConfig(method="an", warmup_epochs=0, epochs=2, seed=0, **SMALL, **kw)

    def test_singleton(self, clustered):
        cfg, results = train.grid_search(clustered.train, self.base(), clustered.val_X, clustered.val_Y,
                                          {"lr": [1e-3], "weight_decay": [1e-4]})
        assert (cfg.lr, cfg.weight_decay) == (1e-3, 1e-4) and len(results) == 1

    def test_rigged_grid(self, clustered):
        grids = {"lr": [10.0, 1e-2, 50.0], "weight_decay": [1e-4]}
        cfg, results = train.grid_search(clustered.train, self.base(), clustered.val_X, clustered.val_Y, grids)
        assert cfg.lr == 1e-2

    def test_order_independent(self, clustered):
        a, _ = train.grid_search(clustered.train, self.base(), clustered.val_X, clustered.val_Y,
                                 {"lr": [1e-3, 1e-2], "weight_decay": [1e-4]})
        b, _ = train.grid_search(clustered.train, self.base(), clustered.val_X, clustered.val_Y,
                                 {"lr": [1e-2, 1e-3], "weight_decay": [1e-4]})
        assert (a.lr, a.weight_decay) == (b.lr, b.weight_decay)


def test_prepare_run_graph_is_training_only(clustered):
    assert clustered.graph.A.shape[0] == clustered.train.n
    assert clustered.train.n + len(clustered.val_X) + len(clustered.test_X) == 300


def test_run_method_returns_all_metrics():
    ds = synthetic.clustered_multilabel(n=150, q=6, c=4, seed=3)
    cfg = TrainConfig(method="smile", warmup_epochs=1, epochs=1, seed=0, **SMALL)
    result, state, chosen = train.run_method(ds, cfg)
    assert set(result) >= {"average_precision", "one_error", "ranking_loss", "hamming_loss", "coverage"}
    assert chosen is cfg
