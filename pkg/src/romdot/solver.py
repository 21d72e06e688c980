"""Multi right-hand-side solvers and the solve ledger.

Every right-hand side counts as one solve, whatever the backend does
internally; the ledger is the cost measure used throughout the package.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, FactorizationError, SolverError
from .grid import ShiftedSystem


@dataclass(frozen=True)
class SolveConfig:
    backend: str = "direct"
    tol: float = 1e-10
    maxit: int = 2000

    def __post_init__(self):
        if self.backend not in ("direct", "iterative"):
            raise ConfigurationError(f"unknown solver backend {self.backend!r}")
        if not 0 < self.tol < 1:
            raise ConfigurationError(f"tol must lie in (0, 1), got {self.tol}")
        if self.maxit < 1:
            raise ConfigurationError("maxit must be >= 1")


@dataclass
class SolveLedger:
    large_solves: int = 0
    small_solves: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add_large(self, count: int) -> None:
        with self._lock:
            self.large_solves += int(count)

    def add_small(self, count: int) -> None:
        with self._lock:
            self.small_solves += int(count)

    def snapshot(self) -> dict:
        with self._lock:
            return {"large": self.large_solves, "small": self.small_solves}

    def merge(self, other: "SolveLedger") -> None:
        snap = other.snapshot()
        with self._lock:
            self.large_solves += snap["large"]
            self.small_solves += snap["small"]


def _as_block(rhs):
    if sp.issparse(rhs):
        rhs = rhs.toarray()
    rhs = np.asarray(rhs)
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]
    if rhs.shape[1] < 1:
        raise ConfigurationError("right-hand side block has no columns")
    return rhs, squeeze


def _factor(op: ShiftedSystem):
    if op._lu is None:
        try:
            op._lu = spla.splu(op.matrix.tocsc())
        except RuntimeError as exc:
            raise FactorizationError(f"factorization failed: {exc}") from exc
    return op._lu


def _check(M, X, Bm, tol):
    res = np.linalg.norm(M @ X - Bm, axis=0)
    ref = np.linalg.norm(Bm, axis=0)
    rel = np.where(ref > 0, res / np.where(ref > 0, ref, 1.0), res)
    return rel


def _lu_apply(lu, Bm, trans):
    if np.iscomplexobj(Bm) and not np.iscomplexobj(lu.L.data):
        return lu.solve(np.ascontiguousarray(Bm.real), trans=trans) + 1j * lu.solve(np.ascontiguousarray(Bm.imag), trans=trans)
    return lu.solve(np.ascontiguousarray(Bm), trans=trans)


def _solve_direct(op, M, Bm, transpose, tol):
    lu = _factor(op)
    dtype = np.result_type(M.dtype, Bm.dtype)
    Bc = Bm.astype(dtype, copy=False)
    trans = "T" if transpose else "N"
    X = _lu_apply(lu, Bc, trans)
    rel = _check(M, X, Bc, tol)
    if np.any(rel > tol):
        # one step of iterative refinement before giving up
        X = X + _lu_apply(lu, Bc - M @ X, trans)
        rel = _check(M, X, Bc, tol)
    if not np.all(np.isfinite(X)):
        raise FactorizationError("direct solve produced non-finite values (singular operator?)")
    if np.any(rel > tol):
        raise SolverError(f"direct solve residual {rel.max():.3e} exceeds tol {tol:.1e}", residual=float(rel.max()))
    return X


def _solve_iterative(M, Bm, tol, maxit):
    dtype = np.result_type(M.dtype, Bm.dtype)
    diag = M.diagonal()
    if np.any(diag == 0):
        raise FactorizationError("zero diagonal entry; Jacobi preconditioner undefined")
    P = sp.diags(1.0 / diag)
    symmetric_real = not np.iscomplexobj(M.data) and abs(M - M.T).max() == 0 if M.shape[0] < 200_000 else False
    X = np.zeros(Bm.shape, dtype=dtype)
    for k in range(Bm.shape[1]):
        b = Bm[:, k].astype(dtype)
        if not np.any(b):
            continue
        if symmetric_real:
            x, info = spla.cg(M, b, rtol=tol, atol=0.0, maxiter=maxit, M=P)
        else:
            x, info = spla.bicgstab(M, b, rtol=tol, atol=0.0, maxiter=maxit, M=P)
        rel = np.linalg.norm(M @ x - b) / np.linalg.norm(b)
        if info != 0 or rel > tol:
            raise SolverError(f"iterative solve stopped at relative residual {rel:.3e} (info={info})", residual=float(rel))
        X[:, k] = x
    return X


def _solve(op: ShiftedSystem, rhs, config: SolveConfig, ledger: SolveLedger | None, transpose: bool):
    Bm, squeeze = _as_block(rhs)
    M = op.matrix.T.tocsc() if transpose else op.matrix
    if config.backend == "direct":
        X = _solve_direct(op, M, Bm, transpose, config.tol)
    else:
        X = _solve_iterative(M.tocsr(), Bm, config.tol, config.maxit)
    if ledger is not None:
        ledger.add_large(Bm.shape[1])
    return X[:, 0] if squeeze else X


def solve_multi(op: ShiftedSystem, rhs, config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None):
    """Solve ``op @ X = rhs`` column by column; one ledger entry per column."""
    return _solve(op, rhs, config, ledger, transpose=False)


def solve_adjoint_multi(op: ShiftedSystem, rhs, config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None):
    """Solve ``op.T @ Z = rhs`` (plain transpose, not conjugate transpose)."""
    return _solve(op, rhs, config, ledger, transpose=True)
