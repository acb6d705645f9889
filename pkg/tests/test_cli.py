"""End-to-end checks of the command line."""
import csv
import json

import numpy as np
import pytest

from spmll import cli, gradcheck, metrics, synthetic
from spmll import autodiff as ad
from spmll.data import load_dataset, save_dense_csv

from oracles import (naive_average_precision, naive_coverage, naive_hamming, naive_one_error,
                     naive_ranking_loss)


@pytest.fixture
def dataset_csv(tmp_path):
    ds = synthetic.clustered_multilabel(n=120, q=5, c=4, seed=1)
    Y = ds.Y.copy()
    Y[3] = 0  # one empty row to be dropped
    p = tmp_path / "toy.csv"
    save_dense_csv(p, ds.X, Y)
    return p


def write_csv(path, M):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"c{j}" for j in range(M.shape[1])])
        w.writerows(M.tolist())


class TestCorrupt:
    def test_round_trip_and_sidecar(self, tmp_path, dataset_csv):
        out = tmp_path / "sp.csv"
        assert cli.main(["corrupt", "--input", str(dataset_csv), "--seed", "3", "--output", str(out)]) == 0
        meta = json.loads((tmp_path / "sp.csv.meta.json").read_text())
        assert meta["dropped"] == 1 and meta["seed"] == 3 and len(meta["source_sha256"]) == 64
        sp = load_dataset(out)
        assert np.all(sp.Y.sum(axis=1) == 1)
        src = load_dataset(dataset_csv)
        np.testing.assert_array_equal(sp.X, src.X)
        assert np.all(src.Y[sp.Y.astype(bool)] == 1)

    def test_byte_identical(self, tmp_path, dataset_csv):
        for name in ("a.csv", "b.csv"):
            cli.main(["corrupt", "--input", str(dataset_csv), "--seed", "5", "--output", str(tmp_path / name)])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.csv.meta.json").read_bytes() == (tmp_path / "b.csv.meta.json").read_bytes()

    def test_missing_input(self, tmp_path, capsys):
        assert cli.main(["corrupt", "--input", str(tmp_path / "no.csv"), "--output", str(tmp_path / "o")]) != 0
        assert "no.csv" in capsys.readouterr().err


class TestManifest:
    def test_parse(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("# comment\ndataset = d.csv\nseeds = 1, 2 ,3\nmethod = wan  # inline\nepochs = 7\nlambda = 0.5\n")
        m = cli.parse_manifest(p)
        assert m.seeds == [1, 2, 3] and m.method == "wan"
        assert m.overrides == {"epochs": 7, "lam": 0.5}

    def test_errors(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("dataset = x\nbogus = 1\n")
        with pytest.raises(cli.CLIError, match=":2: unknown key"):
            cli.parse_manifest(p)
        m = cli.ExperimentManifest(dataset="x", seeds=[1, 1])
        with pytest.raises(cli.CLIError, match="distinct"):
            m.validate()
        with pytest.raises(cli.CLIError, match="unknown method"):
            cli.ExperimentManifest(dataset="x", method="role").validate()


class TestTrain:
    def run(self, tmp_path, dataset_csv, *extra):
        manifest = tmp_path / "exp.manifest"
        manifest.write_text(f"dataset = {dataset_csv}\nmethod = smile\nseeds = 0\noutput = {tmp_path / 'res'}\n"
                            "epochs = 2\nwarmup_epochs = 1\nclassifier_hidden = 16\ngcn_hidden = 8\n"
                            "mlp_hidden = 8\nk = 4\n")
        return cli.main(["train", "--manifest", str(manifest), *extra])

    def test_outputs(self, tmp_path, dataset_csv):
        assert self.run(tmp_path, dataset_csv) == 0
        out = tmp_path / "res" / "toy" / "smile"
        rows = list(csv.DictReader(open(out / "aggregate.csv")))
        assert [r["metric"] for r in rows] == list(metrics.METRICS)
        assert all(float(r["std"]) == 0.0 for r in rows)  # single seed
        log = list(csv.DictReader(open(out / "train_log_seed0.csv")))
        assert len(log) == 3
        assert (out / "classifier_seed0.ckpt").exists() and (out / "enhancer_seed0.ckpt").exists()

    def test_flags_override_manifest_and_rerun_identical(self, tmp_path, dataset_csv):
        self.run(tmp_path, dataset_csv, "--method", "an", "--seeds", "0,1", "--epochs", "1")
        out = tmp_path / "res" / "toy" / "an"
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert len(list(csv.DictReader(open(out / "metrics.csv")))) == 2
        assert len(list(csv.DictReader(open(out / "train_log_seed1.csv")))) == 2
        self.run(tmp_path, dataset_csv, "--method", "an", "--seeds", "0,1", "--epochs", "1")
        assert first == {p.name: p.read_bytes() for p in out.iterdir()}

    def test_error_carries_seed(self, tmp_path, dataset_csv, capsys):
        assert self.run(tmp_path, dataset_csv, "--batch-size", "0") == 1
        assert "seed 0" in capsys.readouterr().err


class TestEvaluate:
    def test_perfect(self, tmp_path, capsys):
        Y = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]])
        write_csv(tmp_path / "p.csv", Y.astype(float))
        write_csv(tmp_path / "t.csv", Y)
        assert cli.main(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--truth", str(tmp_path / "t.csv")]) == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["average_precision"] == 1.0 and rec["one_error"] == 0.0
        assert rec["ranking_loss"] == 0.0 and rec["hamming_loss"] == 0.0
        assert rec["coverage"] == pytest.approx(np.mean((Y.sum(1) - 1) / 3))

    def test_matches_oracle_pipeline(self, tmp_path, rng):
        Y = (rng.random((40, 6)) < 0.4).astype(int)
        Y[0] = [1, 0, 0, 0, 0, 0]
        P = rng.permutation(rng.random((40, 6)).ravel()).reshape(40, 6)
        write_csv(tmp_path / "p.csv", P)
        write_csv(tmp_path / "t.csv", Y)
        rec = cli.evaluate_files(tmp_path / "p.csv", tmp_path / "t.csv")
        Pl, Yl = P.tolist(), Y.tolist()
        oracle = {"average_precision": naive_average_precision(Pl, Yl), "one_error": naive_one_error(Pl, Yl),
                  "ranking_loss": naive_ranking_loss(Pl, Yl), "coverage": naive_coverage(Pl, Yl),
                  "hamming_loss": naive_hamming(Pl, Yl)}
        for k, v in oracle.items():
            assert rec[k] == pytest.approx(v, rel=1e-12)

    def test_missing_file(self, tmp_path, capsys):
        write_csv(tmp_path / "t.csv", np.eye(2))
        code = cli.main(["evaluate", "--predictions", str(tmp_path / "nope.csv"), "--truth", str(tmp_path / "t.csv")])
        assert code != 0 and "nope.csv" in capsys.readouterr().err

    def test_shape_mismatch(self, tmp_path, capsys):
        write_csv(tmp_path / "p.csv", np.ones((2, 3)))
        write_csv(tmp_path / "t.csv", np.eye(2))
        assert cli.main(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--truth", str(tmp_path / "t.csv")]) == 1
        assert "shape mismatch" in capsys.readouterr().err


def write_aggregate(path, dataset, method, values):
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "method", "metric", "mean", "std", "n_seeds"])
        for m, (mu, sd) in values.items():
            w.writerow([dataset, method, m, mu, sd, 5])


class TestReport:
    def setup_results(self, root):
        write_aggregate(root / "scene" / "smile", "scene", "smile",
                        {"average_precision": (0.84, 0.07), "hamming_loss": (0.12, 0.01)})
        write_aggregate(root / "scene" / "an", "scene", "an",
                        {"average_precision": (0.74, 0.12), "hamming_loss": (0.10, 0.02)})

    def test_best_marking_by_direction(self, tmp_path):
        self.setup_results(tmp_path)
        assert cli.main(["report", str(tmp_path)]) == 0
        ap = list(csv.reader(open(tmp_path / "report" / "average_precision.csv")))
        assert ap[0] == ["method", "scene"]
        assert ap[1] == ["smile", "**0.840±0.070**"] and ap[2] == ["an", "0.740±0.120"]
        hl = list(csv.reader(open(tmp_path / "report" / "hamming_loss.csv")))
        assert hl[2] == ["an", "**0.100±0.020**"] and hl[1][1] == "0.120±0.010"
        assert (tmp_path / "report" / "hamming_loss.txt").read_text().startswith("hamming_loss ↓")

    def test_idempotent(self, tmp_path):
        self.setup_results(tmp_path)
        cli.main(["report", str(tmp_path), "--out", str(tmp_path / "r1")])
        cli.main(["report", str(tmp_path), "--out", str(tmp_path / "r2")])
        for f in (tmp_path / "r1").iterdir():
            assert f.read_bytes() == (tmp_path / "r2" / f.name).read_bytes()

    def test_empty_dir(self, tmp_path, capsys):
        assert cli.main(["report", str(tmp_path)]) == 1
        assert "no aggregate.csv" in capsys.readouterr().err


class TestGradcheck:
    def test_fresh_build_passes(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") >= 30

    def test_sabotaged_backward_reported(self):
        def bad_square(x):
            x = ad.as_tensor(x)
            return ad._make(x.data ** 2, (x,), lambda g: ad._accumulate(x, g * 3.0 * x.data), "bad_square")

        chk = gradcheck.GradCheck("sabotaged square", lambda t: ad.sum(bad_square(t[0])),
                                  [np.random.default_rng(0).normal(size=(3, 2))])
        results = gradcheck.run_gradchecks(extra=[chk], mc_samples=2000)
        bad = [r for r in results if not r.passed]
        assert [r.name for r in bad] == ["sabotaged square"]
        assert bad[0].line().startswith("FAIL")

    def test_cli_exit_on_failure(self, monkeypatch, capsys):
        real = gradcheck.run_gradchecks
        bad = gradcheck.CheckResult("broken", 1.0, 1e-4)
        monkeypatch.setattr(gradcheck, "run_gradchecks", lambda seed=0: real(seed, mc_samples=2000) + [bad])
        assert cli.main(["gradcheck"]) == 1
        assert "FAIL  broken" in capsys.readouterr().out

    def test_deterministic(self):
        a = [r.line() for r in gradcheck.run_gradchecks(seed=3, mc_samples=2000)]
        b = [r.line() for r in gradcheck.run_gradchecks(seed=3, mc_samples=2000)]
        assert a == b
