"""A small dense reverse-mode autodiff engine on top of numpy (float64).

Each op builds an output ``Tensor`` that remembers its parents and a closure
that pushes the output gradient back to them. ``backward`` sorts the graph
topologically and runs each closure once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import special


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: neg(self)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    """Wrap an op result; only record it when some parent needs a gradient."""
    if any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, _parents=parents, op=op)
        out._backward = backward
        return out
    return Tensor(data, op=op)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _check_same(a, b, opname):
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


# elementwise binary ------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "div")
    out = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward, "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: _accumulate(a, -g), "neg")


def broadcast_add_row(x, row):
    """x (n, m) + row (m,) added to every row."""
    x, row = as_tensor(x), as_tensor(row)
    if x.data.ndim != 2 or row.shape != (x.shape[1],):
        raise ShapeError(f"broadcast_add_row: incompatible shapes {x.shape} and {row.shape}")

    def backward(g):
        _accumulate(x, g)
        _accumulate(row, g.sum(axis=0))

    return _make(x.data + row.data, (x, row), backward, "broadcast_add_row")


# linear algebra ----------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def spmm(sparse, x):
    """Constant (scipy) sparse matrix times a dense tensor."""
    x = as_tensor(x)
    if sparse.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {sparse.shape} and {x.shape}")
    return _make(np.asarray(sparse @ x.data), (x,),
                 lambda g: _accumulate(x, np.asarray(sparse.T @ g)), "spmm")


def transpose(x):
    x = as_tensor(x)
    return _make(x.data.T, (x,), lambda g: _accumulate(x, g.T), "transpose")


def concat_cols(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: incompatible shapes {a.shape} and {b.shape}")
    k = a.shape[1]

    def backward(g):
        _accumulate(a, g[:, :k])
        _accumulate(b, g[:, k:])

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), backward, "concat_cols")


def slice_cols(x, start, stop):
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full)

    return _make(x.data[:, start:stop], (x,), backward, "slice_cols")


def gather_rows(x, idx):
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _accumulate(x, full)

    return _make(x.data[idx], (x,), backward, "gather_rows")


# elementwise unary -------------------------------------------------------

def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: _accumulate(x, g * out * (1.0 - out)), "sigmoid")


def softplus(x):
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def backward(g):
        s = np.exp(x.data - out)  # sigmoid(x)
        _accumulate(x, g * s)

    return _make(out, (x,), backward, "softplus")


def log(x):
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: _accumulate(x, g / x.data), "log")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: _accumulate(x, g * out), "exp")


def square(x):
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: _accumulate(x, 2.0 * g * x.data), "square")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: _accumulate(x, g * mask), "relu")


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only strictly inside."""
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: _accumulate(x, g * inside), "clip")


def lgamma(x):
    x = as_tensor(x)
    return _make(special.log_gamma(x.data), (x,),
                 lambda g: _accumulate(x, g * special.digamma(x.data)), "lgamma")


def digamma(x):
    x = as_tensor(x)
    return _make(special.digamma(x.data), (x,),
                 lambda g: _accumulate(x, g * special.trigamma(x.data)), "digamma")


def stop_gradient(x):
    x = as_tensor(x)
    return Tensor(x.data.copy(), op="stop_gradient")


# reductions --------------------------------------------------------------

def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis)

    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _make(out, (x,), backward, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


# stochastic nodes --------------------------------------------------------

def beta_sample_node(alpha, beta, rng_seed):
    """Elementwise Beta(alpha, beta) draw with implicit-reparameterisation gradients.

    Sampling inverts the CDF by bisection. The backward rule is
    dd/dalpha = -(dI_d/dalpha) / pdf(d), and likewise for beta.
    """
    alpha, beta = as_tensor(alpha), as_tensor(beta)
    if alpha.shape != beta.shape:
        raise ShapeError(f"beta_sample_node: incompatible shapes {alpha.shape} and {beta.shape}")
    if np.any(alpha.data <= 0) or np.any(beta.data <= 0):
        raise ValueError("beta_sample_node requires positive parameters")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    u = rng.random(alpha.shape)
    d = special.beta_quantile(u, alpha.data, beta.data)
    d = np.clip(d, special.SAMPLE_EPS, 1.0 - special.SAMPLE_EPS)

    def backward(g):
        dI_da, dI_db = special.beta_cdf_param_grads(d, alpha.data, beta.data)
        pdf = np.exp(special.beta_log_pdf(d, alpha.data, beta.data))
        _accumulate(alpha, -g * dI_da / pdf)
        _accumulate(beta, -g * dI_db / pdf)

    return _make(d, (alpha, beta), backward, "beta_sample")


# backward pass -----------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every tensor feeding ``loss``.

    Returns a dict mapping each leaf that requires grad to its gradient.
    Interior nodes are released afterwards, so a graph can only be
    differentiated once.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    leaves = {}
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
            node._backward = None
            node._parents = ()
            node.grad = None if node is not loss else node.grad
        elif node.grad is not None:
            leaves[node] = node.grad
    return leaves


def zero_grad(params):
    for p in params:
        p.grad = None


# optimiser ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One Adam update of ``params`` (name -> Tensor) in place.

    ``grads`` maps the same names to arrays; missing entries count as zero.
    Weight decay is the classic L2 term added to the gradient.
    """
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else g
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.shape:
            raise ShapeError(f"adam_step: state shape {m.shape} does not match parameter {name} {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def clip_grad_norm(grads, max_norm):
    """Scale a gradient dict so its global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(g * g) for g in grads.values()]))) if grads else 0.0
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total
