"""Interpolatory reduced-order models.

Candidate bases come either from full source/detector solves or from
sketched (randomized) right-hand sides.  Both are truncated by SVD, merged
into one orthonormal global basis and used for a one-sided (Galerkin)
projection, which keeps ``A_r(p)`` symmetric whenever ``A(p)`` is.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sl

from .errors import DegenerateInputError, SolverError
from .grid import SystemMatrices, shifted_operator
from .io import read_matrix, write_matrix
from .sketch import SketchConfig, draw_sketch
from .solver import SolveConfig, SolveLedger, solve_adjoint_multi, solve_multi
from .transfer import costate_jacobian


@dataclass
class CandidateBasis:
    V_blocks: dict
    W_blocks: dict
    provenance: str
    omegas: tuple
    sketches: dict = field(default_factory=dict)
    realified: bool = False

    @property
    def keys(self):
        return sorted(self.V_blocks)

    def V(self) -> np.ndarray:
        return np.hstack([self.V_blocks[k] for k in self.keys])

    def W(self) -> np.ndarray:
        return np.hstack([self.W_blocks[k] for k in self.keys])

    @property
    def n_columns(self) -> int:
        return sum(b.shape[1] for b in self.V_blocks.values()) + sum(b.shape[1] for b in self.W_blocks.values())


def _solve_pair(sys, mu, omega, rhs_v, rhs_w, config, ledger, key):
    op = shifted_operator(sys, omega, sys.p_diag(mu))
    try:
        V = solve_multi(op, rhs_v, config, ledger)
        W = solve_adjoint_multi(op, rhs_w, config, ledger)
    except SolverError as exc:
        raise type(exc)(f"candidate solve failed at sample point {key[0]}, frequency index {key[1]}: {exc}",
                        residual=exc.residual) from exc
    return V, W


def _build(sys, sample_fields, omegas, rhs_fn, config, ledger, threads, provenance, sketches):
    keys = [(i, j) for i in range(len(sample_fields)) for j in range(len(omegas))]

    def work(key):
        i, j = key
        rhs_v, rhs_w = rhs_fn(key)
        return _solve_pair(sys, sample_fields[i], omegas[j], rhs_v, rhs_w, config, ledger, key)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, keys))
    else:
        results = [work(k) for k in keys]
    V = {k: r[0] for k, r in zip(keys, results)}
    W = {k: r[1] for k, r in zip(keys, results)}
    return CandidateBasis(V, W, provenance, tuple(float(w) for w in omegas), sketches)


def build_candidate_full(sys: SystemMatrices, sample_fields, omegas, config: SolveConfig = SolveConfig(),
                         ledger: SolveLedger | None = None, threads: int = 1) -> CandidateBasis:
    """Solve with every source and every detector at each (sample, frequency) pair.

    ``sample_fields`` holds the absorption field of each parameter sample.
    Costs ``n_k * n_omega * (n_s + n_d)`` large solves.
    """
    B = sys.B.toarray()
    Ct = sys.C.T.toarray()
    return _build(sys, sample_fields, omegas, lambda key: (B, Ct), config, ledger, threads, "full", {})


def build_candidate_randomized(sys: SystemMatrices, sample_fields, omegas, sketch_config: SketchConfig,
                               config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None,
                               threads: int = 1) -> CandidateBasis:
    """Solve only against sketched sources ``B S`` and detectors ``C^T T``.

    Costs ``n_k * n_omega * (l_s + l_d)`` large solves.
    """
    sketch_config.validate(sys.n_s, sys.n_d)
    B = sys.B.toarray()
    Ct = sys.C.T.toarray()
    sketches = {}
    for i in range(len(sample_fields)):
        for j in range(len(omegas)):
            S = draw_sketch(sys.n_s, sketch_config.l_s, sketch_config, (i, j), "source")
            T = draw_sketch(sys.n_d, sketch_config.l_d, sketch_config, (i, j), "detector")
            sketches[(i, j)] = (S, T)
    return _build(sys, sample_fields, omegas, lambda key: (B @ sketches[key][0], Ct @ sketches[key][1]),
                  config, ledger, threads, "randomized", sketches)


def _realify_block(X):
    if not np.iscomplexobj(X):
        return X
    if not np.any(X.imag):
        return np.ascontiguousarray(X.real)
    return np.hstack([X.real, X.imag])


def realify(candidate: CandidateBasis) -> CandidateBasis:
    """Replace each complex block by ``[Re | Im]``; real blocks pass through."""
    return replace(candidate,
                   V_blocks={k: _realify_block(v) for k, v in candidate.V_blocks.items()},
                   W_blocks={k: _realify_block(v) for k, v in candidate.W_blocks.items()},
                   realified=True)


def _rank_floor(shape, trunc_tol):
    return max(trunc_tol, max(shape) * np.finfo(float).eps)


def orth(X: np.ndarray, trunc_tol: float = 0.0):
    """Left singular vectors with ``sigma >= max(trunc_tol, max(m, n) eps) * sigma_max``."""
    if X.size == 0 or not np.any(X):
        raise DegenerateInputError("cannot orthonormalize an all-zero matrix")
    U, s, _ = sl.svd(X, full_matrices=False, lapack_driver="gesdd")
    keep = s >= _rank_floor(X.shape, trunc_tol) * s[0]
    return U[:, keep], s


def rank_reveal(candidate: CandidateBasis, trunc_tol: float = 1e-8):
    """Truncated orthonormal bases for the concatenated V and W candidates.

    Returns ``(Q_V, Q_W, sing_values)`` with all singular values kept for
    diagnostics.
    """
    if not 0 <= trunc_tol < 1:
        raise ValueError(f"trunc_tol must lie in [0, 1), got {trunc_tol}")
    Q_V, s_V = orth(candidate.V(), trunc_tol)
    Q_W, s_W = orth(candidate.W(), trunc_tol)
    return Q_V, Q_W, {"V": s_V, "W": s_W}


@dataclass(frozen=True)
class GlobalBasis:
    V_r: np.ndarray
    trunc_tol: float
    sing_values: dict
    r_concat: int

    @property
    def r(self) -> int:
        return self.V_r.shape[1]


def assemble_global(Q_V: np.ndarray, Q_W: np.ndarray | None = None, trunc_tol: float = 0.0,
                    sing_values: dict | None = None) -> GlobalBasis:
    """Concatenate ``[Q_V, Q_W]`` and re-orthonormalize; duplicate directions collapse."""
    parts = [Q_V] if Q_W is None or Q_W.shape[1] == 0 else [Q_V, Q_W]
    X = np.hstack(parts)
    V_r, _ = orth(X, 0.0)
    return GlobalBasis(V_r, trunc_tol, sing_values or {}, X.shape[1])


def build_global_basis(candidate: CandidateBasis, trunc_tol: float = 1e-8, realified: bool = True) -> GlobalBasis:
    """Realify (optionally), truncate and merge a candidate basis."""
    if realified and not candidate.realified:
        candidate = realify(candidate)
    Q_V, Q_W, sv = rank_reveal(candidate, trunc_tol)
    return assemble_global(Q_V, Q_W, trunc_tol, sv)


@dataclass(frozen=True, eq=False)
class ReducedModel:
    V_r: np.ndarray
    E_r: np.ndarray
    A0_r: np.ndarray
    B_r: np.ndarray
    C_r: np.ndarray
    a1_scale: np.ndarray
    nu: float

    @property
    def r(self) -> int:
        return self.V_r.shape[1]

    @property
    def n_s(self) -> int:
        return self.B_r.shape[1]

    @property
    def n_d(self) -> int:
        return self.C_r.shape[0]

    def parametric_part(self, mu: np.ndarray) -> np.ndarray:
        """``V_r^T diag(a1_scale * mu) V_r`` in O(n r^2)."""
        d = self.a1_scale * mu
        nz = np.flatnonzero(d)
        Vn = self.V_r[nz]
        return (Vn * d[nz, None]).T @ Vn

    def operator(self, omega: float, mu: np.ndarray) -> np.ndarray:
        K = self.A0_r + self.parametric_part(mu)
        if omega != 0.0:
            K = K + (1j * omega / self.nu) * self.E_r
        return K


def reduce_operators(sys: SystemMatrices, V_r) -> ReducedModel:
    V_r = V_r.V_r if isinstance(V_r, GlobalBasis) else np.asarray(V_r)
    E_r = V_r.T @ (sys.E @ V_r)
    A0_r = V_r.T @ (sys.A0 @ V_r)
    B_r = np.asarray(sys.B.T @ V_r).T
    C_r = np.asarray(sys.C @ V_r)
    return ReducedModel(V_r, E_r, A0_r, B_r, C_r, sys.a1_scale, sys.nu)


def _lu(rm, omega, mu):
    K = rm.operator(omega, mu)
    lu = sl.lu_factor(K, check_finite=False)
    if np.any(np.abs(np.diag(lu[0])) <= np.finfo(float).eps * np.abs(K).max()):
        raise SolverError(f"reduced operator is singular at omega={omega}")
    return lu


def rom_transfer(rm: ReducedModel, omega: float, mu: np.ndarray, ledger: SolveLedger | None = None) -> np.ndarray:
    lu = _lu(rm, omega, mu)
    X = sl.lu_solve(lu, rm.B_r)
    if ledger is not None:
        ledger.add_small(rm.n_s)
    Psi = rm.C_r @ X
    return Psi.real if omega == 0 else Psi


def rom_transfer_domega(rm: ReducedModel, omega: float, mu: np.ndarray, ledger: SolveLedger | None = None) -> np.ndarray:
    lu = _lu(rm, omega, mu)
    X = sl.lu_solve(lu, rm.B_r.astype(complex))
    Y = sl.lu_solve(lu, (1j / rm.nu) * (rm.E_r @ X))
    if ledger is not None:
        ledger.add_small(2 * rm.n_s)
    return -(rm.C_r @ Y)


def rom_measurement_matrix(rm: ReducedModel, omegas, mu: np.ndarray, ledger: SolveLedger | None = None) -> np.ndarray:
    return np.hstack([rom_transfer(rm, w, mu, ledger).astype(complex) for w in omegas])


def rom_states(rm: ReducedModel, omega: float, mu: np.ndarray, ledger: SolveLedger | None = None):
    """Reduced forward and adjoint solution bundles at one frequency."""
    lu = _lu(rm, omega, mu)
    Y = sl.lu_solve(lu, rm.B_r)
    Z = sl.lu_solve(lu, rm.C_r.T, trans=1)
    if ledger is not None:
        ledger.add_small(rm.n_s + rm.n_d)
    return Y, Z


def rom_jacobian(rm: ReducedModel, omegas, mu: np.ndarray, dmu: np.ndarray,
                 ledger: SolveLedger | None = None) -> np.ndarray:
    """Reduced parameter Jacobian, shape ``(n_d, n_s, n_omega, n_p)``.

    Uses ``dA_r/dp_k = V_r^T diag(a1_scale * dmu_k) V_r`` applied to lifted
    reduced states, which avoids forming one r x r matrix per parameter.
    """
    dA = rm.a1_scale[:, None] * dmu
    J = np.zeros((rm.n_d, rm.n_s, len(omegas), dmu.shape[1]), dtype=complex)
    for j, w in enumerate(omegas):
        Y, Z = rom_states(rm, w, mu, ledger)
        J[:, :, j, :] = costate_jacobian(rm.V_r @ Y, rm.V_r @ Z, dA)
    return J


def save_basis(path, basis: GlobalBasis, seed: int | None = None) -> None:
    """Write ``V_r`` as a matrix file; truncation tolerance and seed go into the header."""
    write_matrix(path, basis.V_r, kind="basis", tol=float(basis.trunc_tol), seed=-1 if seed is None else int(seed))


def load_basis(path) -> tuple[GlobalBasis, int | None]:
    V, meta = read_matrix(path)
    if meta.get("kind") != "'basis'":
        raise ValueError(f"{path} is not a basis file")
    seed = int(meta.get("seed", "-1"))
    return GlobalBasis(V, float(meta["tol"]), {}, V.shape[1]), (None if seed < 0 else seed)
