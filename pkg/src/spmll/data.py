"""Dataset ingestion, single-positive corruption, splits and the kNN graph."""
from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sps

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stage (split/corrupt/init/sampling...)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class MultiLabelDataset:
    X: np.ndarray
    Y: np.ndarray
    name: str = ""
    dropped: int = 0

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def n_labels(self):
        return self.Y.shape[1]

    def subset(self, idx):
        return MultiLabelDataset(self.X[idx], self.Y[idx], self.name, self.dropped)


@dataclass
class SinglePositiveDataset:
    X: np.ndarray
    L: np.ndarray
    hiddenY: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if not np.all(self.L.sum(axis=1) == 1):
            raise DatasetError("every row of L must contain exactly one positive")
        if self.hiddenY is not None:
            pos = self.L.argmax(axis=1)
            if not np.all(self.hiddenY[np.arange(len(pos)), pos] == 1):
                raise DatasetError("observed positive is not a true positive")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def observed(self):
        return self.L.argmax(axis=1)


@dataclass
class AdjacencyGraph:
    A: sps.csr_matrix
    k: int
    normA: sps.csr_matrix


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int = 0


def _drop_empty(X, Y, name):
    keep = Y.sum(axis=1) > 0
    dropped = int((~keep).sum())
    if dropped:
        log.info("%s: dropped %d rows with no positive label", name or "dataset", dropped)
    return MultiLabelDataset(X[keep], Y[keep].astype(np.int8), name, dropped)


def _load_dense_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        fcols = [i for i, h in enumerate(header) if h.strip().startswith("f")]
        lcols = [i for i, h in enumerate(header) if h.strip().startswith("l")]
        if not lcols or len(fcols) + len(lcols) != len(header):
            raise DatasetError(f"{path}:1: header must be f1..fq,l1..lc")
        rows_x, rows_y = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows_x.append([float(row[i]) for i in fcols])
                y = [int(float(row[i])) for i in lcols]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if any(v not in (0, 1) for v in y):
                raise DatasetError(f"{path}:{lineno}: labels must be 0/1")
            rows_y.append(y)
    X = np.array(rows_x, dtype=np.float64).reshape(len(rows_x), len(fcols))
    Y = np.array(rows_y, dtype=np.int8).reshape(len(rows_y), len(lcols))
    return X, Y


def _load_sparse_mll(path, n_features=None, n_labels=None):
    labels, feats = [], []
    max_f, max_l = 0, -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DatasetError(f"{path}:{lineno}: missing tab between labels and features")
            lab_part, feat_part = line.split("\t", 1)
            try:
                labs = [int(t) for t in lab_part.split(",") if t.strip()]
                fv = {}
                for tok in feat_part.split():
                    idx, val = tok.split(":")
                    idx = int(idx)
                    if idx < 1:
                        raise ValueError(f"feature index {idx} is not 1-based")
                    fv[idx] = float(val)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if any(v < 0 for v in labs):
                raise DatasetError(f"{path}:{lineno}: negative label index")
            labels.append(labs)
            feats.append(fv)
            max_l = max([max_l] + labs)
            max_f = max([max_f] + list(fv))
    q = n_features if n_features is not None else max_f
    c = n_labels if n_labels is not None else max_l + 1
    if max_f > q or max_l >= c:
        raise DatasetError(f"{path}: indices exceed declared dimensions (q={q}, c={c})")
    X = np.zeros((len(feats), q))
    Y = np.zeros((len(labels), c), dtype=np.int8)
    for i, (labs, fv) in enumerate(zip(labels, feats)):
        for j, v in fv.items():
            X[i, j - 1] = v
        Y[i, labs] = 1
    return X, Y


def _load_arff(path, n_labels):
    # Mulan layout: the last n_labels attributes are the labels.
    from scipy.io import arff

    if not n_labels:
        raise DatasetError(f"{path}: arff input needs n_labels")
    data, _meta = arff.loadarff(path)
    cols = [np.asarray(data[name]) for name in data.dtype.names]

    def to_float(col):
        if col.dtype.kind in "SO":
            return np.array([float(v.decode() if isinstance(v, bytes) else v) for v in col])
        return col.astype(np.float64)

    mat = np.column_stack([to_float(c) for c in cols])
    return mat[:, :-n_labels], mat[:, -n_labels:].astype(np.int8)


def load_dataset(path, fmt="dense-csv", name=None, n_features=None, n_labels=None):
    """Load a multi-label table; rows without any positive label are dropped."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if fmt == "dense-csv":
        X, Y = _load_dense_csv(path)
    elif fmt == "sparse-mll":
        X, Y = _load_sparse_mll(path, n_features, n_labels)
    elif fmt == "arff":
        X, Y = _load_arff(path, n_labels)
    else:
        raise DatasetError(f"unknown format {fmt!r}")
    return _drop_empty(X, Y, name or path.stem)


def save_dense_csv(path, X, Y):
    q, c = X.shape[1], Y.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i + 1}" for i in range(q)] + [f"l{j + 1}" for j in range(c)])
        for x, y in zip(X, Y):
            w.writerow([repr(float(v)) for v in x] + [str(int(v)) for v in y])


def save_sparse_mll(path, X, Y):
    with open(path, "w") as fh:
        for x, y in zip(X, Y):
            labs = ",".join(str(j) for j in np.flatnonzero(y))
            feats = " ".join(f"{j + 1}:{float(x[j])!r}" for j in np.flatnonzero(x))
            fh.write(f"{labs}\t{feats}\n")


def corrupt_single_positive(ds: MultiLabelDataset, seed: int) -> SinglePositiveDataset:
    """Keep one uniformly chosen positive label per row."""
    rng = np.random.default_rng(seed)
    Y = np.asarray(ds.Y)
    counts = Y.sum(axis=1)
    if np.any(counts < 1):
        raise DatasetError("corrupt_single_positive needs at least one positive per row")
    # the r-th positive of each row, r uniform on {0..count-1}
    r = np.floor(rng.random(len(Y)) * counts).astype(int)
    cum = np.cumsum(Y, axis=1)
    gamma = np.argmax(cum > r[:, None], axis=1)
    L = np.zeros_like(Y, dtype=np.int8)
    L[np.arange(len(Y)), gamma] = 1
    return SinglePositiveDataset(ds.X, L, Y.astype(np.int8), seed)


def split(n: int, seed: int) -> Splits:
    """80/10/10 shuffle; floor for train and validation, remainder to test."""
    if n < 10:
        raise DatasetError("split needs at least 10 rows")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = (8 * n) // 10
    n_val = n // 10
    return Splits(perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:], seed)


class Standardizer:
    """Per-column z-scoring fitted on one block of rows."""

    def __init__(self, X_train):
        self.mean = X_train.mean(axis=0)
        std = X_train.std(axis=0)
        self.scale = np.where(std > 0, std, 1.0)

    def transform(self, X):
        return (X - self.mean) / self.scale


def standardize_features(X_train, *others):
    st = Standardizer(X_train)
    return (st.transform(X_train),) + tuple(st.transform(o) for o in others)


def _pairwise_sq_dists(X, rows):
    sq = np.einsum("ij,ij->i", X, X)
    d = sq[rows, None] + sq[None, :] - 2.0 * X[rows] @ X.T
    return np.maximum(d, 0.0)


def knn_indices(X, k, chunk=1024):
    """Indices of the k nearest (Euclidean) other points of every row.

    Ties are broken by the lower index.
    """
    n = X.shape[0]
    if not 0 < k < n:
        raise DatasetError(f"need 0 < k < n, got k={k}, n={n}")
    out = np.empty((n, k), dtype=np.intp)
    cols = np.arange(n)
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        d = _pairwise_sq_dists(X, rows)
        d[np.arange(len(rows)), rows] = np.inf
        order = np.lexsort((np.broadcast_to(cols, d.shape), d), axis=-1)
        out[rows] = order[:, :k]
    return out


def normalize_adjacency(A):
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    n = A.shape[0]
    At = (A + sps.identity(n, format="csr")).tocsr()
    deg = np.asarray(At.sum(axis=1)).ravel()
    inv = sps.diags(1.0 / np.sqrt(deg))
    return (inv @ At @ inv).tocsr()


def knn_adjacency(X, k=10) -> AdjacencyGraph:
    """a_ij = 1 iff x_i is among the k nearest neighbours of x_j, then max-symmetrised."""
    n = X.shape[0]
    nbrs = knn_indices(np.asarray(X, dtype=np.float64), k)
    rows = nbrs.ravel()
    cols = np.repeat(np.arange(n), k)
    A = sps.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    A = A.maximum(A.T).tocsr()
    A.setdiag(0)
    A.eliminate_zeros()
    A.data[:] = 1.0
    return AdjacencyGraph(A, k, normalize_adjacency(A))
