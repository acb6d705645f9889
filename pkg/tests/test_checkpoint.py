import numpy as np
import pytest

from spmll import checkpoint, enhance
from spmll.data import SinglePositiveDataset, knn_adjacency


def test_round_trip(tmp_path, rng):
    arrays = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4), "s": np.array(2.5), "e": np.zeros((0, 2))}
    p = tmp_path / "x.ckpt"
    checkpoint.save(p, arrays)
    back = checkpoint.load(p)
    assert set(back) == set(arrays)
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
        assert back[k].shape == arrays[k].shape


def test_byte_stable(tmp_path, rng):
    arrays = {"b": rng.normal(size=3), "a": rng.normal(size=(2, 2))}
    checkpoint.save(tmp_path / "1", arrays)
    checkpoint.save(tmp_path / "2", dict(reversed(list(arrays.items()))))
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_header_layout(tmp_path):
    checkpoint.save(tmp_path / "h", {"v": np.array([1.0, 2.0])})
    raw = (tmp_path / "h").read_bytes()
    assert raw[:8] == b"SPMLCKPT"
    assert len(raw) == 8 + 8 + 4 + 1 + 4 + 8 + 16
    assert np.frombuffer(raw[-16:], "<f8").tolist() == [1.0, 2.0]


@pytest.mark.parametrize("blob", [b"garbage!", b"SPMLCKPT" + b"\x02\x00\x00\x00\x00\x00\x00\x00"])
def test_rejects_bad_files(tmp_path, blob):
    (tmp_path / "bad").write_bytes(blob)
    with pytest.raises(ValueError):
        checkpoint.load(tmp_path / "bad")


def test_enhancer_and_soft_label_export(tmp_path, rng):
    X = rng.normal(size=(8, 3))
    L = np.eye(2, dtype=np.int8)[rng.integers(0, 2, 8)]
    enh = enhance.LabelEnhancer(SinglePositiveDataset(X, L), knn_adjacency(X, 2), enhance.PriorConfig.uniform(2),
                                enhance.EnhancerConfig(4, 4, 2), rng)
    checkpoint.save_enhancer(tmp_path / "e.ckpt", enh)
    back = checkpoint.load(tmp_path / "e.ckpt")
    np.testing.assert_array_equal(back["enhancer.gcn.w1"], enh.params["gcn.w1"].data)
    assert back["posterior.alpha"].shape == (8, 2)
    D = enh.soft_labels()
    checkpoint.export_soft_labels_csv(tmp_path / "d.csv", D)
    loaded = np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(loaded, D)
