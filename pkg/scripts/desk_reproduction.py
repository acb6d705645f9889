"""Five-seed comparison of every method on scene and yeast, then the report tables.

    python scripts/desk_reproduction.py --data-dir data --out results
    python scripts/desk_reproduction.py --data-dir data --datasets yeast --methods smile an --grid

The data directory must hold scene/yeast as Mulan ``.arff`` or dense ``.csv``
(header f1..fq,l1..lc). Each (dataset, method) pair goes through ``spmll train``,
so the outputs match the CLI layout exactly.
"""
import argparse
import sys
from pathlib import Path

from spmll import cli
from spmll.train import METHODS

N_LABELS = {"scene": 6, "yeast": 14}


def locate(data_dir, name):
    for suffix, fmt in ((".arff", "arff"), (".csv", "dense-csv")):
        path = Path(data_dir) / f"{name}{suffix}"
        if path.exists():
            return path, fmt
    raise SystemExit(f"{name}: neither {name}.arff nor {name}.csv in {data_dir}")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", default="data")
    p.add_argument("--out", default="results")
    p.add_argument("--datasets", nargs="+", default=list(N_LABELS))
    p.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--epochs", default=None)
    p.add_argument("--grid", action="store_true")
    args = p.parse_args(argv)

    for name in args.datasets:
        path, fmt = locate(args.data_dir, name)
        for method in args.methods:
            cmd = ["train", "--dataset", str(path), "--format", fmt, "--n-labels", str(N_LABELS[name]),
                   "--name", name, "--method", method, "--seeds", args.seeds, "--output", args.out]
            if args.epochs:
                cmd += ["--epochs", args.epochs]
            if args.grid:
                cmd.append("--grid")
            code = cli.main(cmd)
            if code:
                return code
    return cli.main(["report", args.out])


if __name__ == "__main__":
    sys.exit(main())
