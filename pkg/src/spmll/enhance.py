"""Variational label enhancement.

A two-layer GCN over the kNN graph maps [X | L] to Beta posteriors over the
soft labels D; an MLP maps [X | D] to a Gaussian latent Z; three decoders
reconstruct L (from D), A (from D D^T) and X (from [D | Z]). The objective is

    T_LE = -lam * ELBO + T_C

with T_C the binary cross-entropy between L and D.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import special
from .data import AdjacencyGraph, SinglePositiveDataset

POS_EPS = 1e-4
D_EPS = special.SAMPLE_EPS


@dataclass
class PriorConfig:
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        self.alpha_hat = np.asarray(self.alpha_hat, dtype=np.float64)
        self.beta_hat = np.asarray(self.beta_hat, dtype=np.float64)
        if np.any(self.alpha_hat <= 0) or np.any(self.beta_hat <= 0):
            raise ValueError("Beta prior parameters must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    @classmethod
    def uniform(cls, c, lam=1.0, value=1.0):
        return cls(np.full(c, value), np.full(c, value), lam)


@dataclass
class EnhancerConfig:
    gcn_hidden: int = 128
    mlp_hidden: int = 128
    latent_dim: Optional[int] = None  # defaults to min(64, q)
    mc_samples: int = 1
    mode: str = "posterior-mean"  # or "mc-sample"


@dataclass
class BetaPosterior:
    Delta: ad.Tensor
    Phi: ad.Tensor


@dataclass
class GaussianPosterior:
    Mu: ad.Tensor
    Sigma: ad.Tensor
    Z: ad.Tensor


def _uniform(rng, fan_in, shape, bound=None):
    if bound is None:
        bound = 1.0 / np.sqrt(fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _mlp_params(rng, prefix, d_in, d_hidden, d_out):
    return {
        f"{prefix}.w1": _uniform(rng, d_in, (d_in, d_hidden)),
        f"{prefix}.b1": _uniform(rng, d_in, (d_hidden,)),
        f"{prefix}.w2": _uniform(rng, d_hidden, (d_hidden, d_out)),
        f"{prefix}.b2": _uniform(rng, d_hidden, (d_out,)),
    }


def mlp2(x, params, prefix):
    h = ad.relu(ad.broadcast_add_row(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.broadcast_add_row(ad.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


PARAM_GROUPS = {"w1": "gcn.", "w2": "enc.", "eta1": "dec_l.", "eta2": "dec_x."}


def init_enhancer(q, c, config: EnhancerConfig, rng):
    """Parameter dict for all four networks, keyed ``group.name``."""
    J = config.latent_dim or min(64, q)
    params = {
        "gcn.w1": _glorot(rng, q + c, config.gcn_hidden),
        "gcn.w2": _glorot(rng, config.gcn_hidden, 2 * c),
    }
    params.update(_mlp_params(rng, "enc", q + c, config.mlp_hidden, 2 * J))
    params.update(_mlp_params(rng, "dec_l", c, config.mlp_hidden, c))
    params.update(_mlp_params(rng, "dec_x", c + J, config.mlp_hidden, q))
    return params


def latent_dim(params):
    return params["enc.w2"].shape[1] // 2


# inference networks --------------------------------------------------------

def gcn_forward(features, norm_adj, params, propagated=None):
    """Two propagation layers: out = A_hat relu(A_hat H0 W1) W2, split into (alpha_raw, beta_raw).

    ``propagated`` may carry a precomputed A_hat @ H0 (H0 is constant during training).
    """
    if propagated is None:
        h1 = ad.spmm(norm_adj, ad.matmul(features, params["gcn.w1"]))
    else:
        h1 = ad.matmul(propagated, params["gcn.w1"])
    out = ad.spmm(norm_adj, ad.matmul(ad.relu(h1), params["gcn.w2"]))
    c = out.shape[1] // 2
    return ad.slice_cols(out, 0, c), ad.slice_cols(out, c, 2 * c)


def positive_link(raw):
    return ad.add(ad.softplus(raw), POS_EPS)


def infer_beta_posterior(features, norm_adj, params, propagated=None) -> BetaPosterior:
    a_raw, b_raw = gcn_forward(features, norm_adj, params, propagated)
    return BetaPosterior(positive_link(a_raw), positive_link(b_raw))


def posterior_mean(alpha, beta):
    return ad.clip(ad.div(alpha, ad.add(alpha, beta)), D_EPS, 1.0 - D_EPS)


def sample_soft_labels(alpha, beta, mode="posterior-mean", rng=None):
    """Soft labels D in [1e-6, 1-1e-6]: the Beta mean, or one implicit-reparameterised draw."""
    if mode == "posterior-mean":
        return posterior_mean(alpha, beta)
    if mode == "mc-sample":
        return ad.beta_sample_node(alpha, beta, rng)
    raise ValueError(f"unknown soft-label mode {mode!r}")


def infer_gaussian(X, D, params, eps) -> GaussianPosterior:
    """mu, sigma = MLP([X | D]); z = mu + sigma * eps."""
    out = mlp2(ad.concat_cols(X, D), params, "enc")
    J = out.shape[1] // 2
    mu = ad.slice_cols(out, 0, J)
    sigma = positive_link(ad.slice_cols(out, J, 2 * J))
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise ad.ShapeError(f"infer_gaussian: noise {eps.shape} does not match latent {mu.shape}")
    return GaussianPosterior(mu, sigma, ad.add(mu, ad.mul(sigma, eps)))


# ELBO pieces ---------------------------------------------------------------

def label_loglik(L, T):
    """tr(L^T log T) + tr((1-L)^T log(1-T))."""
    L = np.asarray(L, dtype=np.float64)
    T = ad.clip(T, 1e-7, 1.0 - 1e-7)
    return ad.add(ad.sum(ad.mul(ad.log(T), L)), ad.sum(ad.mul(ad.log(ad.sub(1.0, T)), 1.0 - L)))


def adjacency_loglik(A_block, S):
    """-||A - S||_F^2 where S = sigmoid(D D^T)."""
    return ad.neg(ad.sum(ad.square(ad.sub(S, np.asarray(A_block, dtype=np.float64)))))


def feature_loglik(X, Xi):
    """-||Xi - X||_F^2."""
    return ad.neg(ad.sum(ad.square(ad.sub(Xi, np.asarray(X, dtype=np.float64)))))


def reconstruction_terms(L, A_block, X, D, Z, params):
    T = ad.sigmoid(mlp2(D, params, "dec_l"))
    S = ad.sigmoid(ad.matmul(D, ad.transpose(D)))
    Xi = mlp2(ad.concat_cols(D, Z), params, "dec_x")
    return label_loglik(L, T), adjacency_loglik(A_block, S), feature_loglik(X, Xi)


def beta_kl_sum(alpha, beta, prior: PriorConfig):
    """sum_{i,j} KL(Beta(alpha_ij, beta_ij) || Beta(alpha_hat_j, beta_hat_j)) as a tensor."""
    n, c = alpha.shape
    ah = np.broadcast_to(prior.alpha_hat, (n, c))
    bh = np.broadcast_to(prior.beta_hat, (n, c))
    const = special.log_gamma(ah) + special.log_gamma(bh) - special.log_gamma(ah + bh)
    ab = ad.add(alpha, beta)
    kl = ad.sub(ad.sub(ad.lgamma(ab), ad.lgamma(alpha)), ad.lgamma(beta))
    kl = ad.add(kl, const)
    kl = ad.add(kl, ad.mul(ad.sub(alpha, ah), ad.digamma(alpha)))
    kl = ad.sub(kl, ad.mul(ad.sub(ab, ah + bh), ad.digamma(ab)))
    kl = ad.add(kl, ad.mul(ad.sub(beta, bh), ad.digamma(beta)))
    return ad.sum(kl)


def gauss_kl_sum(mu, sigma):
    """sum_i KL(N(mu_i, sigma_i^2) || N(0, I)) as a tensor."""
    var = ad.square(sigma)
    inner = ad.sub(ad.sub(ad.add(ad.square(mu), var), 1.0), ad.log(var))
    return ad.mul(ad.sum(inner), 0.5)


def beta_log_density(d, alpha, beta):
    """log Beta(d | alpha, beta), differentiable in all three."""
    out = ad.add(ad.mul(ad.sub(alpha, 1.0), ad.log(d)), ad.mul(ad.sub(beta, 1.0), ad.log(ad.sub(1.0, d))))
    return ad.sub(ad.add(out, ad.lgamma(ad.add(alpha, beta))), ad.add(ad.lgamma(alpha), ad.lgamma(beta)))


def elbo_from_terms(ll_L, ll_A, ll_X, kl_beta, kl_gauss):
    return ad.sub(ad.sub(ad.add(ad.add(ll_L, ll_A), ll_X), kl_beta), kl_gauss)


def consistency_loss(L, D):
    """T_C = -(1/n) sum_ij [l log d + (1-l) log(1-d)]."""
    L = np.asarray(L, dtype=np.float64)
    if L.shape != D.shape:
        raise ad.ShapeError(f"consistency_loss: L {L.shape} and D {D.shape} differ")
    ll = ad.add(ad.mul(ad.log(D), L), ad.mul(ad.log(ad.sub(1.0, D)), 1.0 - L))
    return ad.mul(ad.sum(ll), -1.0 / L.shape[0])


def le_objective(elbo_value, tc, lam):
    return ad.add(ad.mul(elbo_value, -float(lam)), tc)


# model ---------------------------------------------------------------------

@dataclass
class EnhancerTerms:
    objective: ad.Tensor
    elbo: ad.Tensor
    consistency: ad.Tensor
    parts: dict = field(default_factory=dict)


class LabelEnhancer:
    """Transductive label enhancement over one training set."""

    def __init__(self, spd: SinglePositiveDataset, graph: AdjacencyGraph, prior: PriorConfig,
                 config: EnhancerConfig = None, rng=None, params=None):
        self.config = config or EnhancerConfig()
        self.X = np.asarray(spd.X, dtype=np.float64)
        self.L = np.asarray(spd.L, dtype=np.float64)
        self.graph = graph
        self.prior = prior
        self.features = np.concatenate([self.X, self.L], axis=1)
        self.propagated = np.asarray(graph.normA @ self.features)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = params if params is not None else init_enhancer(
            self.X.shape[1], self.L.shape[1], self.config, rng)

    @property
    def n(self):
        return self.X.shape[0]

    def posterior(self) -> BetaPosterior:
        return infer_beta_posterior(self.features, self.graph.normA, self.params, self.propagated)

    def soft_labels(self, idx=None, mode="posterior-mean", rng=None):
        """Detached soft labels as a numpy array."""
        bp = self.posterior()
        alpha, beta = bp.Delta.data, bp.Phi.data
        if idx is not None:
            alpha, beta = alpha[idx], beta[idx]
        D = sample_soft_labels(ad.Tensor(alpha), ad.Tensor(beta), mode, rng)
        return D.data

    def terms(self, idx, rng=None, noise=None) -> EnhancerTerms:
        """T_LE on the rows ``idx`` with a full-graph GCN forward."""
        idx = np.asarray(idx, dtype=np.intp)
        rng = rng if rng is not None else np.random.default_rng(0)
        bp = self.posterior()
        alpha = ad.gather_rows(bp.Delta, idx)
        beta = ad.gather_rows(bp.Phi, idx)
        L_b, X_b = self.L[idx], self.X[idx]
        A_b = self.graph.A[idx][:, idx].toarray()
        J = latent_dim(self.params)
        M = self.config.mc_samples
        lls = [None, None, None]
        D_mean = posterior_mean(alpha, beta)
        kl_g = None
        for m in range(M):
            if self.config.mode == "mc-sample":
                D = sample_soft_labels(alpha, beta, "mc-sample", rng)
            else:
                D = D_mean
            eps = noise[m] if noise is not None else rng.standard_normal((len(idx), J))
            gp = infer_gaussian(X_b, D, self.params, eps)
            terms = reconstruction_terms(L_b, A_b, X_b, D, gp.Z, self.params)
            lls = [t if acc is None else ad.add(acc, t) for acc, t in zip(lls, terms)]
            kg = gauss_kl_sum(gp.Mu, gp.Sigma)
            kl_g = kg if kl_g is None else ad.add(kl_g, kg)
        lls = [ad.mul(t, 1.0 / M) for t in lls]
        kl_g = ad.mul(kl_g, 1.0 / M)
        kl_b = beta_kl_sum(alpha, beta, self.prior)
        elbo_value = elbo_from_terms(*lls, kl_b, kl_g)
        tc = consistency_loss(L_b, D_mean)
        obj = le_objective(elbo_value, tc, self.prior.lam)
        parts = {"ll_L": lls[0].item(), "ll_A": lls[1].item(), "ll_X": lls[2].item(),
                 "kl_beta": kl_b.item(), "kl_gauss": kl_g.item()}
        return EnhancerTerms(obj, elbo_value, tc, parts)
