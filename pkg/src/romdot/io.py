"""File formats: header+binary matrices, CSV reports and PGM images.

A matrix file starts with one ASCII line ``rows cols complex [key=value ...]``
followed by little-endian float64 data in row-major order; complex entries
are stored as interleaved (real, imag) pairs.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


def write_matrix(path, X, **meta) -> None:
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ConfigurationError("only 2-D arrays can be written as matrix files")
    cplx = int(np.iscomplexobj(X))
    extra = "".join(f" {k}={meta[k]!r}" for k in sorted(meta))
    header = f"{X.shape[0]} {X.shape[1]} {cplx}{extra}\n"
    data = np.ascontiguousarray(X, dtype="<c16" if cplx else "<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.view("<f8").tobytes(order="C"))


def read_matrix(path):
    """Return ``(X, meta)``; ``meta`` values are strings."""
    raw = Path(path).read_bytes()
    try:
        nl = raw.index(b"\n")
        tokens = raw[:nl].decode("ascii").split()
        rows, cols, cplx = int(tokens[0]), int(tokens[1]), int(tokens[2])
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"{path}: malformed matrix header") from exc
    meta = dict(t.split("=", 1) for t in tokens[3:])
    data = np.frombuffer(raw[nl + 1:], dtype="<f8")
    expected = rows * cols * (2 if cplx else 1)
    if data.size != expected:
        raise ConfigurationError(f"{path}: expected {expected} values, found {data.size}")
    X = data.view("<c16") if cplx else data
    return X.reshape(rows, cols).copy(), meta


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def write_pgm(path, image: np.ndarray, lo: float, hi: float) -> None:
    """8-bit binary PGM; values are mapped linearly from ``[lo, hi]`` and clipped."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ConfigurationError("PGM images must be 2-D")
    span = hi - lo if hi > lo else 1.0
    g = np.clip(np.rint(255.0 * (img - lo) / span), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii"))
        fh.write(g.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ConfigurationError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def field_slices(grid, field: np.ndarray, fill: float = 0.0) -> list:
    """Node-grid images of a state-ordered field; one image (2D) or one per depth slice (3D).

    Eliminated lateral nodes get ``fill``.  Rows follow the second axis, columns the first.
    """
    idx = grid.unknown_index()
    full = np.where(idx >= 0, np.asarray(field)[np.maximum(idx, 0)], fill)
    if grid.dim == 2:
        return [full.T]
    return [full[:, :, k].T for k in range(grid.shape[2])]
