"""Synthetic generators used by tests, the acceptance suite and the demo script."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MultiLabelDataset


def separable_toy(n=200, seed=0, margin=0.5):
    """Two features, two mutually exclusive labels split by the sign of x1.

    Every row has exactly one positive, so single-positive L equals Y.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(margin, 3.0, n) * rng.choice([-1.0, 1.0], n)
    x2 = rng.uniform(-3.0, 3.0, n)
    X = np.column_stack([x1, x2])
    Y = np.column_stack([x1 > 0, x1 < 0]).astype(np.int8)
    return MultiLabelDataset(X, Y, "separable-toy")


def clustered_multilabel(n=600, q=20, c=6, n_clusters=8, seed=0, noise=0.6):
    """Gaussian clusters, each carrying a label profile; rows sample labels from it.

    Nearby instances share label sets, which is the structure the kNN graph exploits.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 2.0, (n_clusters, q))
    profiles = np.where(rng.random((n_clusters, c)) < 0.35, 0.9, 0.05)
    profiles[np.arange(n_clusters), rng.integers(0, c, n_clusters)] = 0.95
    z = rng.integers(0, n_clusters, n)
    X = centers[z] + noise * rng.normal(size=(n, q)) * 2.0
    Y = (rng.random((n, c)) < profiles[z]).astype(np.int8)
    empty = Y.sum(axis=1) == 0
    Y[empty, rng.integers(0, c, empty.sum())] = 1
    return MultiLabelDataset(X, Y, "clustered")


@dataclass
class MarginalWorld:
    """Finite-support world with known label marginals d(x) that sum to one per x.

    With gamma ~ Categorical(d(x)), the importance weight 1/(d_gamma c)
    averages to one given x, so the single-positive risk is unbiased.
    """
    atoms: np.ndarray  # (K, q) support points, uniform mass
    marginals: np.ndarray  # (K, c)
    probs: np.ndarray  # (K, c) fixed classifier outputs f(x)

    @classmethod
    def make(cls, K=64, q=3, c=5, seed=0):
        rng = np.random.default_rng(seed)
        atoms = rng.normal(size=(K, q))
        logits = atoms @ rng.normal(size=(q, c))
        d = np.exp(logits - logits.max(axis=1, keepdims=True))
        d /= d.sum(axis=1, keepdims=True)
        d = 0.9 * d + 0.1 / c  # keep marginals away from zero
        f = 1.0 / (1.0 + np.exp(-(atoms @ rng.normal(size=(q, c)))))
        return cls(atoms, d, f)

    def true_risk(self):
        per = -self.marginals * np.log(self.probs) - (1 - self.marginals) * np.log1p(-self.probs)
        return float(per.sum(axis=1).mean())

    def empirical_risk(self, n, rng):
        """Risk estimator on n draws (x, gamma) using the true marginals and weights."""
        K, c = self.marginals.shape
        k = rng.integers(0, K, n)
        d = self.marginals[k]
        u = rng.random(n)
        gamma = np.minimum((np.cumsum(d, axis=1) < u[:, None]).sum(axis=1), c - 1)
        w = 1.0 / (d[np.arange(n), gamma] * c)
        p = self.probs[k]
        per = (-d * np.log(p) - (1 - d) * np.log1p(-p)).sum(axis=1)
        return float(np.mean(w * per))
