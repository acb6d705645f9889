"""Multi-label evaluation metrics.

Ranks are 1-based, descending by score, ties broken by the lower label index.
Ranking metrics skip rows whose truth is all-positive or all-negative.
"""
from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

HIGHER_IS_BETTER = {
    "average_precision": True,
    "one_error": False,
    "ranking_loss": False,
    "hamming_loss": False,
    "coverage": False,
}
METRICS = tuple(HIGHER_IS_BETTER)


def _check(scores, truth):
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} and truth {truth.shape} must be equal 2-d shapes")
    return scores, truth


def evaluable_rows(truth):
    """Mask of rows with at least one positive and one negative label."""
    truth = np.asarray(truth).astype(bool)
    return truth.any(axis=1) & ~truth.all(axis=1)


def _ranking_view(scores, truth):
    scores, truth = _check(scores, truth)
    keep = evaluable_rows(truth)
    skipped = int((~keep).sum())
    if skipped:
        log.debug("skipping %d rows without both positive and negative labels", skipped)
    if not keep.any():
        raise ValueError("no evaluable rows")
    return scores[keep], truth[keep]


def label_ranks(scores):
    """1-based rank of every label in its row."""
    n, c = scores.shape
    order = np.lexsort((np.broadcast_to(np.arange(c), scores.shape), -scores), axis=-1)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, c + 1)[None, :].repeat(n, 0), axis=1)
    return ranks


def average_precision(scores, truth):
    scores, truth = _ranking_view(scores, truth)
    ranks = label_ranks(scores)
    # for each relevant j: #relevant with rank <= rank(j), divided by rank(j)
    rel_ranks = np.where(truth, ranks, np.iinfo(np.int64).max)
    sorted_rel = np.sort(rel_ranks, axis=1)
    n_rel = truth.sum(axis=1)
    precision = np.arange(1, truth.shape[1] + 1)[None, :] / np.where(
        np.arange(truth.shape[1])[None, :] < n_rel[:, None], sorted_rel, 1)
    precision = np.where(np.arange(truth.shape[1])[None, :] < n_rel[:, None], precision, 0.0)
    return float(np.mean(precision.sum(axis=1) / n_rel))


def one_error(scores, truth):
    scores, truth = _ranking_view(scores, truth)
    top = np.argmax(scores, axis=1)  # first maximum = lowest index among ties
    return float(np.mean(~truth[np.arange(len(top)), top]))


def ranking_loss(scores, truth):
    scores, truth = _ranking_view(scores, truth)
    n_pos = truth.sum(axis=1)
    n_neg = truth.shape[1] - n_pos
    bad = np.empty(len(scores))
    step = max(1, 2_000_000 // truth.shape[1] ** 2)
    for s in range(0, len(scores), step):
        sc, tr = scores[s:s + step], truth[s:s + step]
        # pairs (u relevant, v irrelevant) with score(u) <= score(v)
        pairs = (sc[:, :, None] <= sc[:, None, :]) & tr[:, :, None] & ~tr[:, None, :]
        bad[s:s + step] = pairs.sum(axis=(1, 2))
    return float(np.mean(bad / (n_pos * n_neg)))


def coverage(scores, truth):
    scores, truth = _ranking_view(scores, truth)
    ranks = label_ranks(scores)
    worst = np.max(np.where(truth, ranks, 0), axis=1)
    return float(np.mean((worst - 1) / truth.shape[1]))


def hamming_loss(probs, truth, threshold=0.5):
    probs, truth = _check(probs, truth)
    return float(np.mean((probs >= threshold) != truth))


def evaluate(scores, truth, threshold=0.5):
    """All five metrics plus the number of rows skipped by the ranking ones."""
    scores, truth = _check(scores, truth)
    return {
        "average_precision": average_precision(scores, truth),
        "one_error": one_error(scores, truth),
        "ranking_loss": ranking_loss(scores, truth),
        "hamming_loss": hamming_loss(scores, truth, threshold),
        "coverage": coverage(scores, truth),
        "skipped": int((~evaluable_rows(truth)).sum()),
    }
