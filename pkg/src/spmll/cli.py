"""Command line: corrupt, train, evaluate, report, gradcheck.

    python -m spmll corrupt --input scene.csv --seed 0 --output scene_sp.csv
    python -m spmll train --manifest experiments/scene.manifest
    python -m spmll evaluate --predictions probs.csv --truth truth.csv
    python -m spmll report results/
    python -m spmll gradcheck
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint, gradcheck, metrics
from .data import corrupt_single_positive, load_dataset, save_dense_csv
from .train import METHODS, TrainConfig, run_method

log = logging.getLogger("spmll")


class CLIError(Exception):
    pass


# manifest --------------------------------------------------------------------

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
# every TrainConfig field except method and seed doubles as a train flag
_FLAG_FIELDS = tuple(k for k in _TRAIN_FIELDS if k not in ("method", "seed"))


@dataclass
class ExperimentManifest:
    dataset: str = ""
    format: str = "dense-csv"
    n_labels: Optional[int] = None
    name: Optional[str] = None
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    method: str = "smile"
    output: str = "results"
    grid: bool = False
    overrides: dict = field(default_factory=dict)

    def validate(self):
        if self.method not in METHODS:
            raise CLIError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if len(set(self.seeds)) != len(self.seeds):
            raise CLIError(f"seeds must be distinct, got {self.seeds}")
        if not self.dataset:
            raise CLIError("no dataset given")

    def train_config(self, seed):
        return TrainConfig(method=self.method, seed=seed, **self.overrides)


def _coerce(key, raw):
    raw = raw.strip()
    if key == "seeds":
        return [int(s) for s in raw.replace(",", " ").split()]
    if key == "grid":
        return raw.lower() in ("1", "true", "yes", "on")
    if key == "n_labels":
        return int(raw)
    if key in _TRAIN_FIELDS:
        default = _TRAIN_FIELDS[key].default
        if raw.lower() in ("none", ""):
            return None
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int) or key == "latent_dim":
            return int(raw)
        if isinstance(default, float) or key == "wan_gamma":
            return float(raw)
        return raw
    return raw


def apply_setting(manifest: ExperimentManifest, key, value, where="manifest"):
    key = key.strip().replace("-", "_")
    if key == "lambda":
        key = "lam"
    try:
        value = _coerce(key, value) if isinstance(value, str) else value
    except ValueError as exc:
        raise CLIError(f"{where}: bad value for {key}: {exc}") from None
    if key in ("dataset", "format", "n_labels", "name", "seeds", "method", "output", "grid"):
        setattr(manifest, key, value)
    elif key in _TRAIN_FIELDS and key not in ("method", "seed"):
        manifest.overrides[key] = value
    else:
        raise CLIError(f"{where}: unknown key {key!r}")


def parse_manifest(path) -> ExperimentManifest:
    """``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise CLIError(f"manifest not found: {path}")
    manifest = ExperimentManifest()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        apply_setting(manifest, key, value, f"{path}:{lineno}")
    return manifest


# commands --------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_corrupt(args):
    ds = load_dataset(args.input, args.format, n_labels=args.n_labels)
    spd = corrupt_single_positive(ds, args.seed)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dense_csv(out, spd.X, spd.L)
    meta = {"seed": args.seed, "source": str(args.input), "source_sha256": _sha256(args.input),
            "dropped": ds.dropped, "n": spd.n, "q": spd.X.shape[1], "c": spd.L.shape[1]}
    meta_path = out.with_name(out.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} and {meta_path} (dropped {ds.dropped} rows)")
    return 0


def _fmt(v):
    return "nan" if v is None or not np.isfinite(v) else f"{v:.6f}"


def write_train_log(path, entries):
    cols = ["epoch", "phase", "clf_loss", "le_loss", "d_change", *metrics.METRICS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for e in entries:
            w.writerow([e["epoch"], e["phase"]] + [_fmt(e[c]) for c in cols[2:]])


def aggregate_rows(per_seed):
    """mean and population std per metric over seeds."""
    out = {}
    for m in metrics.METRICS:
        vals = np.array([r[m] for r in per_seed])
        out[m] = (float(vals.mean()), float(vals.std()))
    return out


def cmd_train(args):
    manifest = parse_manifest(args.manifest) if args.manifest else ExperimentManifest()
    for key in ("dataset", "format", "n_labels", "name", "seeds", "method", "output", *_FLAG_FIELDS):
        value = getattr(args, key, None)
        if value is not None:
            apply_setting(manifest, key, str(value), "command line")
    if args.grid:
        manifest.grid = True
    manifest.validate()
    ds = load_dataset(manifest.dataset, manifest.format, name=manifest.name, n_labels=manifest.n_labels)
    out = Path(manifest.output) / ds.name / manifest.method
    out.mkdir(parents=True, exist_ok=True)
    per_seed = []
    for seed in manifest.seeds:
        t0 = time.time()
        try:
            cfg = manifest.train_config(seed)
            result, state, cfg = run_method(ds, cfg, grid=manifest.grid)
        except Exception as exc:
            raise CLIError(f"{ds.name}/{manifest.method} seed {seed}: {exc}") from exc
        per_seed.append(result)
        write_train_log(out / f"train_log_seed{seed}.csv", state.log)
        checkpoint.save(out / f"classifier_seed{seed}.ckpt", state.best)
        if state.enhancer is not None:
            checkpoint.save_enhancer(out / f"enhancer_seed{seed}.ckpt", state.enhancer)
        log.info("seed %d done in %.1fs: AP %.4f", seed, time.time() - t0, result["average_precision"])
        print(f"{ds.name} {manifest.method} seed {seed}: " +
              " ".join(f"{m}={result[m]:.4f}" for m in metrics.METRICS))
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", *metrics.METRICS])
        for seed, r in zip(manifest.seeds, per_seed):
            w.writerow([seed] + [_fmt(r[m]) for m in metrics.METRICS])
    agg = aggregate_rows(per_seed)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "method", "metric", "mean", "std", "n_seeds"])
        for m in metrics.METRICS:
            w.writerow([ds.name, manifest.method, m, _fmt(agg[m][0]), _fmt(agg[m][1]), len(per_seed)])
    print(f"{ds.name} {manifest.method} mean±std: " +
          " ".join(f"{m}={agg[m][0]:.3f}±{agg[m][1]:.3f}" for m in metrics.METRICS))
    return 0


def _read_matrix(path):
    path = Path(path)
    if not path.exists():
        raise CLIError(f"file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and any(not _is_number(v) for v in rows[0]):
        rows = rows[1:]
    try:
        return np.array([[float(v) for v in r] for r in rows if r])
    except ValueError as exc:
        raise CLIError(f"{path}: {exc}") from None


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def evaluate_files(predictions, truth, threshold=0.5):
    P = _read_matrix(predictions)
    Y = _read_matrix(truth)
    if P.shape != Y.shape:
        raise CLIError(f"shape mismatch: predictions {P.shape} vs truth {Y.shape}")
    return metrics.evaluate(P, Y.astype(int), threshold)


def cmd_evaluate(args):
    record = evaluate_files(args.predictions, args.truth, args.threshold)
    text = json.dumps(record, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0


def collect_aggregates(results_dir):
    results_dir = Path(results_dir)
    files = sorted(results_dir.rglob("aggregate.csv"))
    if not files:
        raise CLIError(f"no aggregate.csv files under {results_dir}")
    table = {}
    for f in files:
        with open(f, newline="") as fh:
            for row in csv.DictReader(fh):
                table[(row["metric"], row["method"], row["dataset"])] = (float(row["mean"]), float(row["std"]))
    return table


def build_report(table):
    """One table per metric: rows are methods, columns datasets; best per column in **bold**."""
    reports = {}
    for metric in metrics.METRICS:
        cells = {k[1:]: v for k, v in table.items() if k[0] == metric}
        if not cells:
            continue
        methods = sorted({m for m, _ in cells}, key=lambda m: (METHODS.index(m) if m in METHODS else 99, m))
        datasets = sorted({d for _, d in cells})
        best = {}
        for d in datasets:
            vals = [(cells[(m, d)][0], m) for m in methods if (m, d) in cells]
            pick = max(vals) if metrics.HIGHER_IS_BETTER[metric] else min(vals)
            best[d] = pick[0]
        rows = []
        for m in methods:
            row = [m]
            for d in datasets:
                if (m, d) not in cells:
                    row.append("-")
                    continue
                mean, std = cells[(m, d)]
                s = f"{mean:.3f}±{std:.3f}"
                row.append(f"**{s}**" if mean == best[d] else s)
            rows.append(row)
        reports[metric] = (["method", *datasets], rows)
    return reports


def _aligned(header, rows):
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(header), fmt(["-" * w for w in widths]), *map(fmt, rows)]) + "\n"


def cmd_report(args):
    reports = build_report(collect_aggregates(args.results))
    out = Path(args.out) if args.out else Path(args.results) / "report"
    out.mkdir(parents=True, exist_ok=True)
    for metric, (header, rows) in reports.items():
        arrow = "↑" if metrics.HIGHER_IS_BETTER[metric] else "↓"
        with open(out / f"{metric}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        text = f"{metric} {arrow}\n" + _aligned(header, rows)
        (out / f"{metric}.txt").write_text(text)
        print(text)
    return 0


def cmd_gradcheck(args):
    results = gradcheck.run_gradchecks(seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# entry point -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="spmll", description="Single-positive multi-label learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("corrupt", help="keep one random positive label per row")
    c.add_argument("--input", required=True)
    c.add_argument("--format", default="dense-csv", choices=["dense-csv", "sparse-mll", "arff"])
    c.add_argument("--n-labels", type=int)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--output", required=True)
    c.set_defaults(func=cmd_corrupt)

    t = sub.add_parser("train", help="run the protocol for one method over several seeds")
    t.add_argument("--manifest")
    t.add_argument("--dataset")
    t.add_argument("--format", choices=["dense-csv", "sparse-mll", "arff"])
    t.add_argument("--n-labels", type=int)
    t.add_argument("--seeds")
    t.add_argument("--method", choices=METHODS)
    t.add_argument("--output")
    t.add_argument("--grid", action="store_true", help="search lr x weight_decay x lambda on validation")
    t.add_argument("--name")
    for key in _FLAG_FIELDS:
        t.add_argument("--" + key.replace("_", "-"), dest=key, metavar="VALUE",
                       help="lambda" if key == "lam" else None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a predictions CSV against a truth CSV")
    e.add_argument("--predictions", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--output")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="merge aggregate.csv files into per-metric tables")
    r.add_argument("results")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    g = sub.add_parser("gradcheck", help="run the finite-difference suite")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "format", None) == "arff" and getattr(args, "n_labels", None) is None and args.command == "corrupt":
        print("error: arff input needs --n-labels", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CLIError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
