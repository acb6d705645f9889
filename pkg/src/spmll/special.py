"""Special functions and closed-form divergences for the Beta/Gaussian posteriors.

Every function accepts a scalar or a numpy array and returns the same kind.
Nothing here depends on scipy; the test suite uses scipy/mpmath as oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SAMPLE_EPS = 1e-6

_LANCZOS_G = 7.0
_LANCZOS = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")


def _as_array(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def _out(arr, scalar):
    return float(arr) if scalar else arr


def _require_positive(x, name):
    if np.any(~(x > 0)):
        raise ValueError(f"{name} requires positive arguments")


def _lanczos_lgamma(x):
    # valid for x >= 0.5
    x = x - 1.0
    acc = np.full_like(x, _LANCZOS[0])
    for i in range(1, len(_LANCZOS)):
        acc = acc + _LANCZOS[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (x + 0.5) * np.log(t) - t + np.log(acc)


def log_gamma(x):
    """ln Gamma(x) for x > 0 (Lanczos, reflection below 1/2)."""
    x, scalar = _as_array(x)
    _require_positive(x, "log_gamma")
    small = x < 0.5
    out = np.empty_like(x)
    big = ~small
    out[big] = _lanczos_lgamma(x[big])
    if np.any(small):
        xs = x[small]
        out[small] = np.log(np.pi / np.sin(np.pi * xs)) - _lanczos_lgamma(1.0 - xs)
    return _out(out, scalar)


def _shift_up(x, threshold, term):
    """Apply a recurrence until every entry reaches ``threshold``.

    Returns the shifted argument and the accumulated correction.
    """
    x = x.copy()
    acc = np.zeros_like(x)
    low = x < threshold
    while np.any(low):
        acc[low] += term(x[low])
        x[low] += 1.0
        low = x < threshold
    return x, acc


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    x, scalar = _as_array(x)
    _require_positive(x, "digamma")
    x, acc = _shift_up(x, 10.0, lambda v: 1.0 / v)
    inv2 = 1.0 / (x * x)
    series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (
        1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12))))))
    out = np.log(x) - 0.5 / x - series - acc
    return _out(out, scalar)


def trigamma(x):
    """psi'(x) for x > 0; used by the backward rule of digamma."""
    x, scalar = _as_array(x)
    _require_positive(x, "trigamma")
    x, acc = _shift_up(x, 10.0, lambda v: 1.0 / (v * v))
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * inv2 * (1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (
        1.0 / 30 - inv2 * (5.0 / 66 - inv2 * (691.0 / 2730 - inv2 * 7.0 / 6))))))
    out = inv + 0.5 * inv2 + series + acc
    return _out(out, scalar)


def log_beta_fn(a, b):
    return log_gamma(a) + log_gamma(b) - log_gamma(np.add(a, b))


def beta_log_pdf(x, a, b):
    x = np.asarray(x, dtype=np.float64)
    return (np.subtract(a, 1.0) * np.log(x) + np.subtract(b, 1.0) * np.log1p(-x)
            - log_beta_fn(a, b))


def _betacf(x, a, b, max_iter=2000, tol=1e-15):
    """Continued fraction for I_x(a,b) (modified Lentz), vectorised."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) >= tol
        if not active.any():
            break
    return h


def reg_inc_beta(x, alpha, beta):
    """Regularised incomplete beta I_x(alpha, beta), i.e. the Beta CDF."""
    x, scalar = _as_array(x)
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), x.shape).copy()
    b = np.broadcast_to(np.asarray(beta, dtype=np.float64), x.shape).copy()
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("reg_inc_beta requires 0 <= x <= 1")
    _require_positive(a, "reg_inc_beta")
    _require_positive(b, "reg_inc_beta")
    out = np.where(x >= 1.0, 1.0, 0.0)
    inner = (x > 0) & (x < 1)
    if np.any(inner):
        xi, ai, bi = x[inner], a[inner], b[inner]
        flip = xi > (ai + 1.0) / (ai + bi + 2.0)
        xs = np.where(flip, 1.0 - xi, xi)
        as_ = np.where(flip, bi, ai)
        bs = np.where(flip, ai, bi)
        log_front = (as_ * np.log(xs) + bs * np.log1p(-xs) - log_beta_fn(as_, bs))
        val = np.exp(log_front) * _betacf(xs, as_, bs) / as_
        out[inner] = np.clip(np.where(flip, 1.0 - val, val), 0.0, 1.0)
    return _out(out, scalar)


def beta_cdf_param_grads(x, alpha, beta, rel_step=1e-3):
    """(dI/dalpha, dI/dbeta) of I_x(alpha, beta) by Richardson-extrapolated central differences.

    Zero at x in {0, 1}.
    """
    x, scalar = _as_array(x)
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), x.shape).copy()
    b = np.broadcast_to(np.asarray(beta, dtype=np.float64), x.shape).copy()
    _require_positive(a, "beta_cdf_param_grads")
    _require_positive(b, "beta_cdf_param_grads")
    inner = (x > 0) & (x < 1)
    da = np.zeros_like(x)
    db = np.zeros_like(x)
    if np.any(inner):
        xi, ai, bi = x[inner], a[inner], b[inner]

        def central(fn, p, h):
            return (fn(p + h) - fn(p - h)) / (2.0 * h)

        def richardson(fn, p):
            h = rel_step * p
            coarse = central(fn, p, h)
            fine = central(fn, p, 0.5 * h)
            return (4.0 * fine - coarse) / 3.0

        da[inner] = richardson(lambda p: reg_inc_beta(xi, p, bi), ai)
        db[inner] = richardson(lambda p: reg_inc_beta(xi, ai, p), bi)
    if scalar:
        return float(da), float(db)
    return da, db


def beta_quantile(u, alpha, beta, iters=30):
    """Inverse Beta CDF by bisection on reg_inc_beta."""
    u, scalar = _as_array(u)
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), u.shape)
    b = np.broadcast_to(np.asarray(beta, dtype=np.float64), u.shape)
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = reg_inc_beta(mid, a, b) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return _out(0.5 * (lo + hi), scalar)


def beta_kl(q_alpha, q_beta, p_alpha, p_beta):
    """KL(Beta(q_alpha, q_beta) || Beta(p_alpha, p_beta)), elementwise."""
    qa, scalar = _as_array(q_alpha)
    qb = np.asarray(q_beta, dtype=np.float64)
    pa = np.asarray(p_alpha, dtype=np.float64)
    pb = np.asarray(p_beta, dtype=np.float64)
    for v in (qa, qb, pa, pb):
        _require_positive(v, "beta_kl")
    out = (log_gamma(qa + qb) + log_gamma(pa) + log_gamma(pb)
           - log_gamma(pa + pb) - log_gamma(qa) - log_gamma(qb)
           + (qa - pa) * digamma(qa)
           - (qa - pa + qb - pb) * digamma(qa + qb)
           + (qb - pb) * digamma(qb))
    return _out(np.asarray(out), scalar and np.ndim(out) == 0)


def gauss_kl(mu, sigma):
    """KL(N(mu, diag sigma^2) || N(0, I)) summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _require_positive(sigma, "gauss_kl")
    var = sigma * sigma
    out = 0.5 * np.sum(mu * mu + var - 1.0 - np.log(var), axis=-1)
    return _out(np.asarray(out), np.ndim(out) == 0)
