"""Offline demo on generated data: method comparison plus soft-label convergence.

    python scripts/synthetic_demo.py            # about a minute
    python scripts/synthetic_demo.py --quick    # smaller nets, fewer epochs
"""
import argparse

import numpy as np

from spmll import metrics, synthetic, train
from spmll.train import METHODS, TrainConfig


def compare(quick):
    ds = synthetic.clustered_multilabel(n=1200, q=24, c=8, n_clusters=10, seed=0, noise=1.5)
    extra = dict(classifier_hidden=64, gcn_hidden=32, mlp_hidden=32, epochs=6, warmup_epochs=2) if quick else {}
    rows = []
    for method in METHODS:
        scores = [train.run_method(ds, TrainConfig(method=method, seed=s, **extra))[0] for s in (0, 1)]
        rows.append((method, {m: np.mean([r[m] for r in scores]) for m in metrics.METRICS}))
    print(f"clustered data: n={ds.n}, q={ds.n_features}, c={ds.n_labels}, mean of 2 seeds")
    print(f"{'method':<20}" + "".join(f"{m:>19}" for m in metrics.METRICS))
    for method, vals in rows:
        print(f"{method:<20}" + "".join(f"{vals[m]:>19.4f}" for m in metrics.METRICS))


def convergence():
    ds = synthetic.separable_toy(n=200, seed=10)
    prep = train.prepare_run(ds, seed=0)
    _, state = train.fit(prep.train, TrainConfig(method="smile", seed=0), prep.val_X, prep.val_Y, prep.graph)
    print("\nseparable toy: mean |D_t - D_{t-1}| per epoch")
    for e in state.log:
        if e["phase"] == "train":
            print(f"  epoch {e['epoch']:>2}  {e['d_change']:.4f}  val AP {e['average_precision']:.3f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    compare(args.quick)
    convergence()
