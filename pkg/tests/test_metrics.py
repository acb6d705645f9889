"""Metrics against naive rational-arithmetic oracles and hand-worked cases."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spmll import metrics as M

from oracles import (naive_average_precision, naive_coverage, naive_hamming, naive_one_error,
                     naive_ranking_loss)

PAIRS = [
    (M.average_precision, naive_average_precision),
    (M.one_error, naive_one_error),
    (M.ranking_loss, naive_ranking_loss),
    (M.coverage, naive_coverage),
    (M.hamming_loss, naive_hamming),
]


def random_instance(rng, n=None, c=None, ties=False):
    n = n or int(rng.integers(1, 101))
    c = c or int(rng.integers(2, 21))
    truth = (rng.random((n, c)) < rng.uniform(0.1, 0.6)).astype(int)
    truth[0, 0], truth[0, -1] = 1, 0  # guarantee one evaluable row
    scores = rng.integers(0, 4, (n, c)) / 4.0 if ties else rng.random((n, c))
    return scores, truth


class TestHandCases:
    def test_perfect_ranking(self):
        s = np.array([[0.9, 0.8, 0.1, 0.2]])
        t = np.array([[1, 1, 0, 0]])
        assert M.average_precision(s, t) == 1.0
        assert M.one_error(s, t) == 0.0
        assert M.ranking_loss(s, t) == 0.0
        assert M.coverage(s, t) == pytest.approx(1 / 4)

    def test_ap_second_rank(self):
        assert M.average_precision([[0.5, 0.9, 0.1]], [[1, 0, 0]]) == 0.5

    def test_one_error_inverted(self):
        assert M.one_error([[0.1, 0.5, 0.9]], [[1, 0, 0]]) == 1.0

    def test_all_equal_ranking_loss(self):
        assert M.ranking_loss(np.zeros((3, 4)), np.array([[1, 0, 0, 1], [0, 1, 0, 0], [1, 1, 1, 0]])) == 1.0

    def test_hamming_truth_and_complement(self):
        t = np.array([[1, 0, 1], [0, 1, 0]])
        assert M.hamming_loss(t.astype(float), t) == 0.0
        assert M.hamming_loss(1.0 - t, t) == 1.0

    def test_coverage_positive_last(self):
        assert M.coverage([[0.9, 0.5, 0.1]], [[0, 0, 1]]) == pytest.approx(2 / 3)

    def test_tie_breaks_to_lower_index(self):
        np.testing.assert_array_equal(M.label_ranks(np.array([[0.5, 0.5, 0.9]])), [[2, 3, 1]])

    def test_skips_degenerate_rows(self):
        s = np.array([[0.9, 0.1], [0.3, 0.2], [0.1, 0.1]])
        t = np.array([[1, 0], [1, 1], [0, 0]])
        assert M.evaluate(s, t)["skipped"] == 2
        assert M.average_precision(s, t) == 1.0

    def test_no_evaluable_rows(self):
        with pytest.raises(ValueError):
            M.average_precision([[0.1, 0.2]], [[1, 1]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            M.evaluate(np.zeros((2, 3)), np.zeros((3, 2)))


@pytest.mark.parametrize("ties", [False, True])
@pytest.mark.parametrize("metric,oracle", PAIRS, ids=[m.__name__ for m, _ in PAIRS])
def test_against_naive_oracle(metric, oracle, ties):
    rng = np.random.default_rng(7 if ties else 3)
    for _ in range(100):
        s, t = random_instance(rng, ties=ties)
        assert metric(s, t) == pytest.approx(oracle(s.tolist(), t.tolist()), rel=1e-12, abs=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    s, t = random_instance(rng, n=20, c=6)
    for name in ("average_precision", "one_error", "ranking_loss", "coverage"):
        fn = getattr(M, name)
        base = fn(s, t)
        assert fn(np.exp(s), t) == base
        assert fn(3.0 * s + 1.0, t) == base


@given(st.integers(0, 2**32 - 1))
def test_weighted_mean_over_row_partition(seed):
    rng = np.random.default_rng(seed)
    s, t = random_instance(rng, n=30, c=5)
    t[:, 0], t[:, 1] = 1, 0  # every row evaluable
    cut = int(rng.integers(1, 29))
    for fn in (M.average_precision, M.one_error, M.ranking_loss, M.coverage, M.hamming_loss):
        whole = fn(s, t)
        parts = (cut * fn(s[:cut], t[:cut]) + (30 - cut) * fn(s[cut:], t[cut:])) / 30
        assert whole == pytest.approx(parts, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_ranges(seed):
    s, t = random_instance(np.random.default_rng(seed), n=15, c=7)
    rec = M.evaluate(s, t)
    for m in M.METRICS:
        assert 0.0 <= rec[m] <= 1.0
