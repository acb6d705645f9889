"""Finite-difference and moment checks for every differentiable path.

Relative error is ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, 1e-12)``
(Euclidean norms over all inputs of a check). Monte-Carlo checks report
``|estimate - exact| / standard_error`` instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sps

from . import autodiff as ad
from . import enhance, risk, special
from .data import SinglePositiveDataset, knn_adjacency

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3
MC_Z_TOL = 3.0


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    kind: str = "rel"

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)

    def line(self):
        unit = "max rel err" if self.kind == "rel" else "z-score"
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<38s} {unit} {self.error:.3e} (tol {self.tolerance:g})"


@dataclass
class GradCheck:
    name: str
    build: Callable  # list of Tensors -> scalar Tensor
    inputs: Sequence[np.ndarray]
    tolerance: float = PRIMITIVE_TOL
    h: float = 1e-5


def rel_error(a, b):
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def autodiff_grads(build, inputs):
    leaves = [ad.Tensor(x.copy(), requires_grad=True) for x in inputs]
    loss = build(leaves)
    grads = ad.backward(loss)
    return [grads.get(t, np.zeros_like(t.data)) for t in leaves]


def numeric_grads(build, inputs, h=1e-5):
    def value(arrs):
        return float(build([ad.Tensor(a) for a in arrs]).data)

    out = []
    for k, x in enumerate(inputs):
        g = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            plus = [a.copy() for a in inputs]
            minus = [a.copy() for a in inputs]
            plus[k][i] += h
            minus[k][i] -= h
            g[i] = (value(plus) - value(minus)) / (2 * h)
        out.append(g)
    return out


def run_check(check: GradCheck) -> CheckResult:
    auto = autodiff_grads(check.build, check.inputs)
    num = numeric_grads(check.build, check.inputs, check.h)
    return CheckResult(check.name, rel_error(auto, num), check.tolerance)


def _away_from_zero(rng, shape, lo=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < lo, np.sign(x + 1e-12) * lo, x)


def primitive_checks(rng) -> list:
    """One randomized check per primitive."""
    n, m, k = 4, 3, 5
    sp_mat = sps.random(n, n, density=0.5, random_state=int(rng.integers(2**31)), format="csr")
    idx = rng.integers(0, n, 6)
    W = {}

    def proj(name):
        def wrap(out):
            if name not in W:
                W[name] = rng.normal(size=out.shape)
            return ad.sum(ad.mul(out, W[name]))
        return wrap

    pos = lambda shape: rng.uniform(0.3, 3.0, shape)  # noqa: E731
    cases = [
        ("matmul", lambda t: ad.matmul(t[0], t[1]), [rng.normal(size=(n, m)), rng.normal(size=(m, k))]),
        ("add", lambda t: ad.add(t[0], t[1]), [rng.normal(size=(n, m)), rng.normal(size=(n, m))]),
        ("sub", lambda t: ad.sub(t[0], t[1]), [rng.normal(size=(n, m)), rng.normal(size=(n, m))]),
        ("mul", lambda t: ad.mul(t[0], t[1]), [rng.normal(size=(n, m)), rng.normal(size=(n, m))]),
        ("div", lambda t: ad.div(t[0], t[1]), [rng.normal(size=(n, m)), pos((n, m))]),
        ("neg", lambda t: ad.neg(t[0]), [rng.normal(size=(n, m))]),
        ("broadcast_add_row", lambda t: ad.broadcast_add_row(t[0], t[1]), [rng.normal(size=(n, m)), rng.normal(size=(m,))]),
        ("sigmoid", lambda t: ad.sigmoid(t[0]), [3 * rng.normal(size=(n, m))]),
        ("softplus", lambda t: ad.softplus(t[0]), [3 * rng.normal(size=(n, m))]),
        ("log", lambda t: ad.log(t[0]), [pos((n, m))]),
        ("exp", lambda t: ad.exp(t[0]), [rng.normal(size=(n, m))]),
        ("square", lambda t: ad.square(t[0]), [rng.normal(size=(n, m))]),
        ("relu", lambda t: ad.relu(t[0]), [_away_from_zero(rng, (n, m))]),
        ("clip", lambda t: ad.clip(t[0], -0.5, 0.5), [_away_from_zero(rng, (n, m)) * 0.7]),
        ("sum", lambda t: ad.sum(t[0], axis=0), [rng.normal(size=(n, m))]),
        ("mean", lambda t: ad.mean(t[0], axis=1), [rng.normal(size=(n, m))]),
        ("transpose", lambda t: ad.transpose(t[0]), [rng.normal(size=(n, m))]),
        ("concat_cols", lambda t: ad.concat_cols(t[0], t[1]), [rng.normal(size=(n, m)), rng.normal(size=(n, 2))]),
        ("slice_cols", lambda t: ad.slice_cols(t[0], 1, 3), [rng.normal(size=(n, m))]),
        ("gather_rows", lambda t: ad.gather_rows(t[0], idx), [rng.normal(size=(n, m))]),
        ("spmm", lambda t: ad.spmm(sp_mat, t[0]), [rng.normal(size=(n, m))]),
        ("lgamma", lambda t: ad.lgamma(t[0]), [pos((n, m))]),
        ("digamma", lambda t: ad.digamma(t[0]), [pos((n, m))]),
    ]
    # a projected scalar per primitive, with projection weights fixed on first use
    return [GradCheck(name, (lambda f, p: lambda t: p(f(t)))(f, proj(name)), inputs)
            for name, f, inputs in cases]


def beta_quantile_check(rng) -> GradCheck:
    """Implicit-reparameterisation derivative at fixed uniforms vs. finite differences of
    a high-precision (60-step) bisection quantile."""
    u = rng.uniform(0.05, 0.95, 5)
    a0 = rng.uniform(0.8, 4.0, 5)
    b0 = rng.uniform(0.8, 4.0, 5)

    def quantile(a, b):
        return special.beta_quantile(u, a, b, iters=60)

    d = np.clip(quantile(a0, b0), special.SAMPLE_EPS, 1 - special.SAMPLE_EPS)
    dI_da, dI_db = special.beta_cdf_param_grads(d, a0, b0)
    pdf = np.exp(special.beta_log_pdf(d, a0, b0))
    auto = [-dI_da / pdf, -dI_db / pdf]
    h = 1e-5
    num = [(quantile(a0 + h * a0, b0) - quantile(a0 - h * a0, b0)) / (2 * h * a0),
           (quantile(a0, b0 + h * b0) - quantile(a0, b0 - h * b0)) / (2 * h * b0)]
    return CheckResult("beta implicit reparam (per sample)", rel_error(auto, num), PRIMITIVE_TOL)


def beta_moment_checks(seed=0, n_samples=100_000):
    """MC gradients of E[d] and E[d^2] through beta_sample_node vs analytic moments."""
    results = []
    # d/dalpha E[d] at (2, 3) = beta / (alpha + beta)^2
    a = ad.Tensor(np.full(n_samples, 2.0), requires_grad=True)
    b = ad.Tensor(np.full(n_samples, 3.0), requires_grad=True)
    d = ad.beta_sample_node(a, b, np.random.default_rng(seed))
    ad.backward(ad.sum(d))
    per = a.grad
    z = abs(per.mean() - 3.0 / 25.0) / (per.std(ddof=1) / np.sqrt(n_samples))
    results.append(CheckResult("beta E[d] d/dalpha (2,3)", float(z), MC_Z_TOL, "z"))

    # d/dbeta E[d^2] at (2, 2), exact via central difference of the closed-form moment
    def second_moment(al, be):
        return al * (al + 1) / ((al + be) * (al + be + 1))

    exact = (second_moment(2.0, 2.0 + 1e-6) - second_moment(2.0, 2.0 - 1e-6)) / 2e-6
    a = ad.Tensor(np.full(n_samples, 2.0), requires_grad=True)
    b = ad.Tensor(np.full(n_samples, 2.0), requires_grad=True)
    d = ad.beta_sample_node(a, b, np.random.default_rng(seed + 1))
    ad.backward(ad.sum(ad.square(d)))
    per = b.grad
    z = abs(per.mean() - exact) / (per.std(ddof=1) / np.sqrt(n_samples))
    results.append(CheckResult("beta E[d^2] d/dbeta (2,2)", float(z), MC_Z_TOL, "z"))
    return results


def toy_problem(seed=0, n=6, q=4, c=3, J=2, hidden=5):
    """The 6-node toy used for composite checks: data, graph, enhancer, fixed noise."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, q))
    L = np.zeros((n, c), dtype=np.int8)
    L[np.arange(n), rng.integers(0, c, n)] = 1
    spd = SinglePositiveDataset(X, L)
    graph = knn_adjacency(X, 2)
    prior = enhance.PriorConfig(rng.uniform(0.5, 2.0, c), rng.uniform(0.5, 2.0, c), lam=1.0)
    cfg = enhance.EnhancerConfig(gcn_hidden=hidden, mlp_hidden=hidden, latent_dim=J)
    enh = enhance.LabelEnhancer(spd, graph, prior, cfg, rng)
    noise = rng.standard_normal((1, n, J))
    return enh, noise


def enhancer_check(which="objective", seed=0) -> GradCheck:
    """Gradient of the ELBO (or T_LE) on the toy graph w.r.t. every enhancer parameter."""
    enh, noise = toy_problem(seed)
    names = sorted(enh.params)
    idx = np.arange(enh.n)

    def build(tensors):
        enh.params = dict(zip(names, tensors))
        terms = enh.terms(idx, noise=noise)
        return terms.elbo if which == "elbo" else terms.objective

    return GradCheck(f"enhancer {which} (toy graph)", build,
                     [enh.params[k].data.copy() for k in names], COMPOSITE_TOL, h=1e-6)


def loss_checks(rng) -> list:
    b, c = 5, 4
    logits = rng.normal(size=(b, c))
    L = np.zeros((b, c))
    L[np.arange(b), rng.integers(0, c, b)] = 1
    D = rng.uniform(0.05, 0.95, (b, c))
    # the importance weight is detached, so the oracle holds it at the base point
    w = risk.importance_weights(1.0 / (1.0 + np.exp(-logits)), L)
    return [
        GradCheck("risk_consistent_loss", lambda t: risk.risk_consistent_loss(t[0], L, D, w), [logits], COMPOSITE_TOL),
        GradCheck("an_loss", lambda t: risk.an_loss(t[0], L), [logits], COMPOSITE_TOL),
        GradCheck("an_ls_loss", lambda t: risk.an_ls_loss(t[0], L, 0.1), [logits], COMPOSITE_TOL),
        GradCheck("wan_loss", lambda t: risk.wan_loss(t[0], L), [logits], COMPOSITE_TOL),
        GradCheck("consistency_loss", lambda t: enhance.consistency_loss(L, t[0]), [D], COMPOSITE_TOL),
    ]


def run_gradchecks(seed=0, extra=(), mc_samples=100_000):
    """The full suite; ``extra`` GradChecks are appended (used to test failure reporting)."""
    rng = np.random.default_rng(seed)
    results = [run_check(c) for c in primitive_checks(rng)]
    results.append(beta_quantile_check(rng))
    results.extend(beta_moment_checks(seed, mc_samples))
    results.append(run_check(enhancer_check("elbo", seed)))
    results.append(run_check(enhancer_check("objective", seed)))
    results.extend(run_check(c) for c in loss_checks(rng))
    results.extend(run_check(c) for c in extra)
    return results
