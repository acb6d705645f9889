"""Flat binary checkpoints: a header with dims, then row-major little-endian doubles.

Layout::

    b"SPMLCKPT" | u32 version | u32 n_arrays
    per array: u32 name_len | name (utf-8) | u32 ndim | u64 dims[ndim] | f64 data[prod(dims)]
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPMLCKPT"
VERSION = 1


def save(path, arrays):
    """Write a name -> array mapping; names are stored sorted for byte-stable output."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f8", order="C")
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load(path):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after {count} arrays")
    return out


def save_enhancer(path, enhancer):
    """Enhancer weights plus the current Beta posterior snapshot."""
    arrays = {f"enhancer.{k}": v.data for k, v in enhancer.params.items()}
    bp = enhancer.posterior()
    arrays["posterior.alpha"] = bp.Delta.data
    arrays["posterior.beta"] = bp.Phi.data
    save(path, arrays)


def export_soft_labels_csv(path, D):
    D = np.asarray(D)
    with open(path, "w") as fh:
        fh.write(",".join(f"d{j + 1}" for j in range(D.shape[1])) + "\n")
        for row in D:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
