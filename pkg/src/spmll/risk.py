"""Classifier losses for single-positive training.

All losses take logits as an autodiff ``Tensor`` and targets as arrays, and
return a scalar ``Tensor``. Probabilities are clamped to [1e-7, 1 - 1e-7].
"""
from __future__ import annotations

import itertools

import numpy as np

from . import autodiff as ad

PROB_EPS = 1e-7
WEIGHT_FLOOR = 1e-3
MAX_ENUM_LABELS = 14


def probs_of(logits):
    return ad.clip(ad.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)


def _check(probs, target, name):
    if probs.shape != np.shape(target):
        raise ad.ShapeError(f"{name}: logits {probs.shape} and targets {np.shape(target)} differ")


def _bce_terms(p):
    """(-log p, -log(1 - p)) as tensors."""
    return ad.neg(ad.log(p)), ad.neg(ad.log(ad.sub(1.0, p)))


def importance_weights(probs, L):
    """1 / (p(observed positive) * c), detached; p floored at 1e-3."""
    p = np.asarray(probs.data if isinstance(probs, ad.Tensor) else probs)
    L = np.asarray(L)
    p_obs = np.maximum(p[np.arange(len(p)), L.argmax(axis=1)], WEIGHT_FLOOR)
    return 1.0 / (p_obs * L.shape[1])


def risk_consistent_loss(logits, L, D, weights=None):
    """Importance-weighted soft-label BCE: mean_i w_i sum_j [d l + (1-d) lbar].

    ``weights`` defaults to ``importance_weights`` of the current probabilities
    and never receives gradient.
    """
    p = probs_of(logits)
    _check(p, L, "risk_consistent_loss")
    _check(p, D, "risk_consistent_loss")
    D = np.asarray(D.data if isinstance(D, ad.Tensor) else D, dtype=np.float64)
    w = importance_weights(p, L) if weights is None else np.asarray(weights, dtype=np.float64)
    pos, negl = _bce_terms(p)
    per = ad.add(ad.mul(pos, D), ad.mul(negl, 1.0 - D))
    weighted = ad.mul(per, np.repeat(w[:, None], p.shape[1], axis=1))
    return ad.mul(ad.sum(weighted), 1.0 / p.shape[0])


def soft_bce(logits, targets, neg_weight=1.0):
    """mean over rows of sum_j [t(-log p) + neg_weight (1-t)(-log(1-p))]."""
    p = probs_of(logits)
    _check(p, targets, "bce")
    t = np.asarray(targets, dtype=np.float64)
    pos, negl = _bce_terms(p)
    per = ad.add(ad.mul(pos, t), ad.mul(negl, neg_weight * (1.0 - t)))
    return ad.mul(ad.sum(per), 1.0 / p.shape[0])


def an_loss(logits, L):
    """Assume-negative: full BCE with L as the complete label vector."""
    return soft_bce(logits, L)


def an_ls_loss(logits, L, eps=0.1):
    """Assume-negative with label smoothing: targets 1-eps / eps."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing eps must lie in [0, 1), got {eps}")
    L = np.asarray(L, dtype=np.float64)
    return soft_bce(logits, L * (1.0 - eps) + (1.0 - L) * eps)


def wan_loss(logits, L, gamma=None):
    """Weak assume-negative: negative terms scaled by gamma (default 1/(c-1))."""
    c = np.shape(L)[1]
    if gamma is None:
        gamma = 1.0 / (c - 1)
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"WAN gamma must lie in (0, 1], got {gamma}")
    return soft_bce(logits, L, neg_weight=gamma)


# numpy reference computations ---------------------------------------------

def expected_bce_closed_form(probs, d):
    """sum_j d_j (-log p_j) + (1 - d_j)(-log(1 - p_j))."""
    probs = np.asarray(probs, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return float(np.sum(-d * np.log(probs) - (1.0 - d) * np.log1p(-probs)))


def expected_loss_bruteforce(probs, d):
    """E_Y[BCE(probs, Y)] with Y drawn from independent Bernoulli(d), by full enumeration."""
    probs = np.asarray(probs, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    c = len(probs)
    if c > MAX_ENUM_LABELS:
        raise ValueError(f"enumeration over 2^{c} subsets refused (c > {MAX_ENUM_LABELS})")
    subsets = np.array(list(itertools.product((0, 1), repeat=c)), dtype=bool)  # (2^c, c)
    mass = np.prod(np.where(subsets, d, 1.0 - d), axis=1)
    losses = np.where(subsets, -np.log(probs), -np.log1p(-probs)).sum(axis=1)
    return float(np.sum(mass * losses))


def risk_identity_check(probs, d):
    """Residual of sum_g p_g * [1 / (p_g c)] * E_Y[L] - E_Y[L]; zero by cancellation."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("risk_identity_check needs strictly positive marginals")
    c = len(d)
    expected = expected_bce_closed_form(probs, d)
    weighted = 0.0
    for g in range(c):
        weighted += d[g] * (1.0 / (d[g] * c)) * expected
    return weighted - expected


def risk_consistent_numpy(probs, L, D, weights=None):
    """Plain-numpy value of the risk estimator (no clamping beyond probs)."""
    probs = np.asarray(probs, dtype=np.float64)
    if weights is None:
        weights = importance_weights(probs, L)
    per = -D * np.log(probs) - (1.0 - D) * np.log1p(-probs)
    return float(np.mean(weights * per.sum(axis=1)))
