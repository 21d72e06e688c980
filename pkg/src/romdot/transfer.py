"""Full-order transfer function, measurement matrix, objective and Jacobian.

Absorption enters through the per-node field ``mu`` (``A1 = diag(a1_scale*mu)``);
parameter derivatives enter as ``dmu``, an ``(n, n_p)`` array of d mu / d p_k.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import StructureError
from .grid import ShiftedSystem, SystemMatrices, shifted_operator
from .solver import SolveConfig, SolveLedger, solve_adjoint_multi, solve_multi


@dataclass(frozen=True)
class TransferSample:
    omega: float
    Psi: np.ndarray


@dataclass(frozen=True)
class MeasurementMatrix:
    """``n_d x (n_s * n_omega)``; sources vary fastest, frequencies slowest."""

    M: np.ndarray
    omegas: tuple[float, ...]
    n_s: int

    def block(self, j: int) -> np.ndarray:
        return self.M[:, j * self.n_s:(j + 1) * self.n_s]


def transfer_function(sys: SystemMatrices, omega: float, mu: np.ndarray,
                      config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None) -> TransferSample:
    op = shifted_operator(sys, omega, sys.p_diag(mu))
    X = solve_multi(op, sys.B, config, ledger)
    Psi = sys.C @ X
    return TransferSample(omega, Psi if omega != 0 else Psi.real)


def transfer_domega(sys: SystemMatrices, omega: float, mu: np.ndarray,
                    config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None) -> np.ndarray:
    """Frequency derivative ``-C K^{-1} (i E / nu) K^{-1} B``."""
    op = shifted_operator(sys, omega, sys.p_diag(mu))
    X = solve_multi(op, sys.B, config, ledger)
    Y = solve_multi(op, (1j / sys.nu) * (sys.E @ X), config, ledger)
    return -(sys.C @ Y)


def measurement_matrix(sys: SystemMatrices, omegas, mu: np.ndarray,
                       config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None) -> MeasurementMatrix:
    blocks = [transfer_function(sys, w, mu, config, ledger).Psi for w in omegas]
    M = np.hstack([b.astype(complex) for b in blocks])
    return MeasurementMatrix(M, tuple(float(w) for w in omegas), sys.n_s)


def objective(M_pred, D_data) -> float:
    """Squared Frobenius misfit; real and imaginary parts count jointly."""
    M_pred = getattr(M_pred, "M", M_pred)
    R = np.asarray(M_pred) - np.asarray(D_data)
    return float(np.sum(R.real**2 + R.imag**2))


def stack_real(Z: np.ndarray) -> np.ndarray:
    """Flatten a complex array (C order) into ``[Re; Im]``."""
    Z = np.asarray(Z)
    return np.concatenate([Z.real.ravel(), Z.imag.ravel()])


def costate_jacobian(Y: np.ndarray, Z: np.ndarray, dA_diag: np.ndarray) -> np.ndarray:
    """``J[d, s, k] = -Z[:, d]^T diag(dA_diag[:, k]) Y[:, s]``."""
    out = np.empty((Z.shape[1], Y.shape[1], dA_diag.shape[1]), dtype=np.result_type(Y, Z, float))
    for k in range(dA_diag.shape[1]):
        g = dA_diag[:, k]
        nz = np.flatnonzero(g)
        if nz.size == 0:
            out[:, :, k] = 0.0
            continue
        out[:, :, k] = -(Z[nz].T * g[nz]) @ Y[nz]
    return out


def jacobian(sys: SystemMatrices, omegas, mu: np.ndarray, dmu: np.ndarray,
             config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None) -> np.ndarray:
    """Parameter Jacobian of the transfer function, shape ``(n_d, n_s, n_omega, n_p)``.

    Costs ``n_omega * (n_s + n_d)`` large solves: one forward bundle and one
    adjoint bundle per frequency.
    """
    dA = sys.a1_scale[:, None] * dmu
    n_p = dmu.shape[1]
    J = np.zeros((sys.n_d, sys.n_s, len(omegas), n_p), dtype=complex)
    Ct = sys.C.T.tocsc()
    for j, w in enumerate(omegas):
        op = shifted_operator(sys, w, sys.p_diag(mu))
        Y = solve_multi(op, sys.B, config, ledger)
        Z = solve_adjoint_multi(op, Ct, config, ledger)
        J[:, :, j, :] = costate_jacobian(Y, Z, dA)
    return J


def matricize(J: np.ndarray) -> np.ndarray:
    """Real-stacked Jacobian matching ``stack_real`` of the measurement matrix.

    Rows follow the ``(n_d, n_omega * n_s)`` layout of the measurement matrix.
    """
    n_d, n_s, n_w, n_p = J.shape
    Jm = J.transpose(0, 2, 1, 3).reshape(n_d * n_w * n_s, n_p)
    return np.vstack([Jm.real, Jm.imag])


@dataclass(frozen=True)
class SchurSystem:
    """ODE form after eliminating the Robin (algebraic) unknowns.

    ``A_tilde(p) = F0 + diag(a1_int * mu_int) - D2 G^{-1} D1``, ``B_tilde = B1``,
    ``C_tilde = -C1 G^{-1} D1``.  The frequency term is ``(i w / nu) diag(e_int)``
    where ``e_int`` is the interior block of E (``h**2`` on every row).
    """

    A_tilde0: sp.csr_matrix
    a1_int: np.ndarray
    e_int: np.ndarray
    B_tilde: sp.csc_matrix
    C_tilde: sp.csr_matrix
    n_boundary: int
    nu: float

    @property
    def n_int(self) -> int:
        return self.A_tilde0.shape[0]

    def interior(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[self.n_boundary:]

    def operator(self, mu: np.ndarray | None = None, omega: float = 0.0) -> sp.csc_matrix:
        M = self.A_tilde0
        if mu is not None:
            M = M + sp.diags(self.a1_int * self.interior(mu))
        if omega != 0.0:
            M = M + sp.diags((1j * omega / self.nu) * self.e_int)
        return sp.csc_matrix(M)


def schur_reduce(sys: SystemMatrices) -> SchurSystem:
    nb = sys.n_boundary
    A = sys.A0.tocsr()
    G = A[:nb, :nb]
    g = G.diagonal()
    off = G - sp.diags(g)
    if off.count_nonzero() != 0 or np.any(g == 0):
        raise StructureError("boundary block is not an invertible diagonal; node ordering is not boundary-first")
    e = sys.E.diagonal()
    if np.any(e[:nb] != 0) or np.any(e[nb:] == 0):
        raise StructureError("E does not vanish exactly on the boundary block")
    D1 = A[:nb, nb:]
    D2 = A[nb:, :nb]
    F = A[nb:, nb:]
    Ginv = sp.diags(1.0 / g)
    A_tilde = (F - D2 @ Ginv @ D1).tocsr()
    B = sys.B.tocsr()
    if B[:nb].count_nonzero() != 0:
        raise StructureError("sources must not sit on Robin rows")
    C = sys.C.tocsc()
    if C[:, nb:].count_nonzero() != 0:
        raise StructureError("detectors must sit on Robin rows")
    B_tilde = sp.csc_matrix(B[nb:])
    C_tilde = sp.csr_matrix(-(C[:, :nb] @ Ginv @ D1))
    return SchurSystem(A_tilde, sys.a1_scale[nb:], e[nb:], B_tilde, C_tilde, nb, sys.nu)


def schur_transfer(schur: SchurSystem, omega: float, mu: np.ndarray,
                   config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None) -> np.ndarray:
    op = ShiftedSystem(schur.operator(mu, omega), omega)
    X = solve_multi(op, schur.B_tilde, config, ledger)
    Psi = schur.C_tilde @ X
    return Psi if omega != 0 else Psi.real
