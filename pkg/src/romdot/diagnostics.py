"""Analysis instruments: singular-value decay, canonical angles, subspace gaps,
low-rank update structure, mesh-width trends and Laplacian eigenpairs.

The perturbation checks run on the Schur-reduced SPD operator at zero frequency
and use Frobenius norms throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, RomdotError
from .grid import MediumParams, ShiftedSystem, SystemMatrices, assemble_system, build_grid, default_layout, shifted_operator
from .rom import CandidateBasis, realify
from .solver import SolveConfig, SolveLedger, solve_multi
from .transfer import SchurSystem, schur_reduce

RANK_LADDER = (1e-4, 1e-8, 1e-12)


@dataclass
class SvdReport:
    sigma: np.ndarray
    ranks: dict
    n_columns: int

    def decades(self) -> float:
        s = self.sigma[self.sigma > 0]
        return float(np.log10(s[0] / s[-1])) if s.size else 0.0


def singular_value_report(candidate, which: str = "V", ladder=RANK_LADDER) -> SvdReport:
    """Singular values of the concatenated candidate matrix and its numerical rank at each tolerance.

    ``candidate`` is a :class:`CandidateBasis` (realified here if needed) or a plain matrix.
    """
    if isinstance(candidate, CandidateBasis):
        cand = candidate if candidate.realified else realify(candidate)
        if which == "V":
            X = cand.V()
        elif which == "W":
            X = cand.W()
        elif which == "VW":
            X = np.hstack([cand.V(), cand.W()])
        else:
            raise ConfigurationError(f"which must be 'V', 'W' or 'VW', got {which!r}")
    else:
        X = np.asarray(candidate)
        if np.iscomplexobj(X):
            X = np.hstack([X.real, X.imag])
    if X.ndim != 2 or X.shape[1] == 0:
        raise ConfigurationError("candidate matrix must be 2-D with at least one column")
    s = np.linalg.svd(X, compute_uv=False)
    smax = s[0] if s.size else 0.0
    ranks = {tol: int(np.sum(s > tol * smax)) if smax > 0 else 0 for tol in ladder}
    return SvdReport(s, ranks, X.shape[1])


@dataclass
class AngleReport:
    cosines: np.ndarray
    dims: tuple

    def leading_min(self, fraction: float = 0.9) -> float:
        """Smallest cosine among the leading ``fraction`` of the angles."""
        m = max(1, int(np.floor(fraction * self.cosines.size)))
        return float(self.cosines[:m].min())


def _orthonormal(X):
    X = np.asarray(X)
    if np.iscomplexobj(X):
        X = np.hstack([X.real, X.imag])
    if X.ndim == 1:
        X = X[:, None]
    return sla.orth(X)


def canonical_angles(U, W) -> AngleReport:
    """Cosines of the canonical angles between ``range(U)`` and ``range(W)``, descending."""
    Qu, Qw = _orthonormal(U), _orthonormal(W)
    if Qu.shape[0] != Qw.shape[0]:
        raise ConfigurationError(f"subspaces live in different spaces ({Qu.shape[0]} vs {Qw.shape[0]} rows)")
    k = min(Qu.shape[1], Qw.shape[1])
    if k == 0:
        return AngleReport(np.zeros(0), (Qu.shape[1], Qw.shape[1]))
    c = np.linalg.svd(Qu.T @ Qw, compute_uv=False)[:k]
    return AngleReport(np.clip(c, 0.0, 1.0), (Qu.shape[1], Qw.shape[1]))


def subspace_gap_trace(V_r, trajectory, sys: SystemMatrices, omega: float = 0.0,
                       config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None) -> list:
    """Angles between ``range(V_r)`` and ``range(A(mu_s)^{-1} B)`` for each absorption field on the trajectory."""
    V = getattr(V_r, "V_r", V_r)
    out = []
    for mu in trajectory:
        op = shifted_operator(sys, omega, sys.p_diag(mu))
        Y = solve_multi(op, sys.B, config, ledger)
        out.append(canonical_angles(V, Y))
    return out


@dataclass
class SmwReport:
    delta_rel: float
    residual: float
    bound: float
    k_i: int
    k_next: int
    exceeds_k_max: bool
    terms: tuple = ()


def _support(schur: SchurSystem, pi):
    pi = np.asarray(pi, dtype=float)
    if pi.shape[0] == schur.n_int + schur.n_boundary:
        pi = schur.interior(pi)
    elif pi.shape[0] != schur.n_int:
        raise ConfigurationError(f"perturbation has length {pi.shape[0]}, expected {schur.n_int + schur.n_boundary}")
    return pi, np.flatnonzero(pi)


def _lemma_term(lu0, schur: SchurSystem, pi, idx, ledger):
    """One summand of the bound: |A0^-1 U| |(I + Xi U^T A0^-1 U)^-1| |Xi U^T| (Frobenius)."""
    if idx.size == 0:
        return 0.0, np.zeros((schur.n_int, 0))
    n = schur.n_int
    U = sp.csc_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n, idx.size))
    AU = solve_multi(lu0, U, SolveConfig(), ledger)
    xi = schur.a1_int[idx] * pi[idx]
    core = np.eye(idx.size) + xi[:, None] * AU[idx, :]
    term = np.linalg.norm(AU) * np.linalg.norm(np.linalg.inv(core)) * np.linalg.norm(xi)
    return float(term), AU


def smw_update_check(sys0: SystemMatrices, pi_i, pi_next, k_max: int = 64,
                     ledger: SolveLedger | None = None) -> SmwReport:
    """Low-rank structure of a candidate-basis update at zero frequency.

    ``pi_i`` and ``pi_next`` are absorption perturbations (node fields) relative
    to the reference medium of ``sys0``.  Returns the relative change
    ``|V_next - V_i| / |V_0|``, the relative least-squares residual of that
    change against ``range(A0^-1 [U_i U_next])`` and the two-term bound.
    Touching more than ``k_max`` nodes is flagged, not rejected.
    """
    schur = schur_reduce(sys0)
    pi_i, idx_i = _support(schur, pi_i)
    pi_n, idx_n = _support(schur, pi_next)
    op0 = ShiftedSystem(schur.operator(None), 0.0)
    B = schur.B_tilde
    V0 = solve_multi(op0, B, SolveConfig(), ledger)

    def state(pi, idx):
        if idx.size == 0:
            return V0
        op = ShiftedSystem(schur.A_tilde0 + sp.diags(schur.a1_int * pi), 0.0)
        return solve_multi(op, B, SolveConfig(), ledger)

    dV = state(pi_n, idx_n) - state(pi_i, idx_i)
    t_i, AU_i = _lemma_term(op0, schur, pi_i, idx_i, ledger)
    t_n, AU_n = _lemma_term(op0, schur, pi_n, idx_n, ledger)
    nd = np.linalg.norm(dV)
    if nd == 0:
        res = 0.0
    else:
        Q = sla.orth(np.hstack([AU_i, AU_n]))
        res = float(np.linalg.norm(dV - Q @ (Q.T @ dV)) / nd)
    k_i, k_n = int(idx_i.size), int(idx_n.size)
    return SmwReport(float(nd / np.linalg.norm(V0)), res, t_i + t_n, k_i, k_n, max(k_i, k_n) > k_max, (t_i, t_n))


def line_anomaly(grid, start, end, value: float) -> np.ndarray:
    """One-cell-thick segment from ``start`` to ``end`` (physical coordinates) carrying ``value``.

    The segment keeps its physical length under refinement, so the number of
    touched nodes grows like ``1/h`` while its thickness shrinks like ``h``.
    """
    a, b = np.asarray(start, float), np.asarray(end, float)
    L = np.linalg.norm(b - a)
    if L == 0:
        raise ConfigurationError("anomaly segment has zero length")
    X = grid.coordinates()
    t = np.linspace(0.0, 1.0, int(np.ceil(4 * L / grid.h)) + 1)
    pts = a + t[:, None] * (b - a)
    # nearest unknown for each point along the segment
    d2 = ((pts**2).sum(1)[:, None] - 2 * pts @ X.T + (X**2).sum(1)[None, :])
    mu = np.zeros(X.shape[0])
    mu[np.unique(np.argmin(d2, axis=1))] = value
    return mu


def pixel_anomaly(grid, center, k: int, value: float) -> np.ndarray:
    """The ``k`` nodes closest to ``center`` carry ``value``."""
    X = grid.coordinates()
    d = np.linalg.norm(X - np.asarray(center, float), axis=1)
    mu = np.zeros(X.shape[0])
    mu[np.argsort(d, kind="stable")[:k]] = value
    return mu


@dataclass
class TrendReport:
    h: np.ndarray
    ratio: np.ndarray
    bound: np.ndarray
    slope: float


def lemma2_trend(node_counts=(33, 65, 129), anomaly=None, extents=(1.0, 1.0), medium: MediumParams = MediumParams(),
                 n_sources: int = 8, n_detectors: int = 8, ledger: SolveLedger | None = None) -> TrendReport:
    """Relative candidate-basis change ``|V_i - V_0| / |V_0|`` under grid refinement.

    ``anomaly(grid) -> node field`` fixes the perturbation; the default is a
    thin segment of fixed physical length.  Also returns the low-rank update
    bound for each grid and the least-squares slope of log(ratio) against log(h).
    """
    if anomaly is None:
        anomaly = lambda g: line_anomaly(g, (-0.15, 0.0), (0.35, 0.0), 0.5)
    hs, ratios, bounds = [], [], []
    for N in node_counts:
        g = build_grid(2, N, extents)
        sys0 = assemble_system(g, medium, default_layout(g, n_sources, n_detectors))
        rep = smw_update_check(sys0, np.zeros(sys0.n), anomaly(g), k_max=10**9, ledger=ledger)
        hs.append(g.h)
        ratios.append(rep.delta_rel)
        bounds.append(rep.bound)
    h, ratio = np.array(hs), np.array(ratios)
    if np.all(ratio > 0) and len(h) > 1:
        slope = float(np.polyfit(np.log(h), np.log(ratio), 1)[0])
    else:
        slope = float("nan")
    return TrendReport(h, ratio, np.array(bounds), slope)


@dataclass
class EigReport:
    rows: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max((r[3] for r in self.rows), default=0.0)

    @property
    def max_norm_error(self) -> float:
        return max((r[4] for r in self.rows), default=0.0)


def dirichlet_laplacian(K: int) -> sp.csr_matrix:
    """Five-point Laplacian (unscaled: 4 on the diagonal) on the ``(K-1)**2`` interior nodes of the unit square."""
    if K < 2:
        raise ConfigurationError("K must be >= 2")
    T = sp.diags([-np.ones(K - 2), 2 * np.ones(K - 1), -np.ones(K - 2)], [-1, 0, 1])
    I = sp.identity(K - 1)
    return (sp.kron(I, T) + sp.kron(T, I)).tocsr()


def laplacian_eigpair(K: int, kx: int, ky: int):
    """Closed-form eigenpair ``(lambda, phi)``; ``phi`` uses the scaling 2h and x varies fastest."""
    h = 1.0 / K
    i = np.arange(1, K)
    phi = 2 * h * np.outer(np.sin(i * ky * np.pi * h), np.sin(i * kx * np.pi * h)).ravel()
    lam = 4 * (np.sin(kx * np.pi * h / 2) ** 2 + np.sin(ky * np.pi * h / 2) ** 2)
    return lam, phi


def laplacian_eigpair_check(K: int, waves=None) -> EigReport:
    """Residuals ``|A phi - lambda phi|`` and ``| |phi| - 1 |`` for the given (default: all) wave numbers."""
    A = dirichlet_laplacian(K)
    if waves is None:
        waves = [(kx, ky) for ky in range(1, K) for kx in range(1, K)]
    rep = EigReport()
    for kx, ky in waves:
        if not (1 <= kx < K and 1 <= ky < K):
            raise ConfigurationError(f"wave numbers must lie in 1..{K - 1}, got ({kx}, {ky})")
        lam, phi = laplacian_eigpair(K, kx, ky)
        rep.rows.append((kx, ky, lam, float(np.linalg.norm(A @ phi - lam * phi)), abs(np.linalg.norm(phi) - 1.0)))
    return rep


def build_count_full(n_k: int, n_omega: int, n_s: int, n_d: int) -> int:
    return n_k * n_omega * (n_s + n_d)


def build_count_randomized(n_k: int, n_omega: int, l_s: int, l_d: int) -> int:
    return n_k * n_omega * (l_s + l_d)


SOLVE_COLUMNS = ("method", "phase", "large", "small", "r")


def solve_count_report(runs: dict, n_s: int | None = None, n_d: int | None = None) -> list:
    """Rows ``(method, phase, large, small, r)`` for executed runs.

    ``runs`` maps a method name to an :class:`InversionResult` (or to a dict
    with ``ledgers`` and ``r``).  When ``n_s``/``n_d`` are given, build-phase
    counts of ROM runs are checked against the closed forms and a mismatch
    raises :class:`RomdotError`.
    """
    rows = []
    for method, res in runs.items():
        ledgers = res["ledgers"] if isinstance(res, dict) else res.ledgers
        r = res.get("r") if isinstance(res, dict) else res.r
        if not ledgers:
            rows.append((method, "total", 0, 0, r))
            continue
        tot_l = tot_s = 0
        for phase, led in ledgers.items():
            snap = led.snapshot() if isinstance(led, SolveLedger) else led
            rows.append((method, phase, snap["large"], snap["small"], r))
            tot_l += snap["large"]
            tot_s += snap["small"]
        rows.append((method, "total", tot_l, tot_s, r))
        expected = None if isinstance(res, dict) else _expected_build(method, res, n_s, n_d)
        if expected is not None:
            snap = ledgers["build"].snapshot() if isinstance(ledgers["build"], SolveLedger) else ledgers["build"]
            if snap["large"] != expected:
                raise RomdotError(f"{method}: build phase used {snap['large']} large solves, closed form gives {expected}")
    return rows


def _expected_build(method, res, n_s, n_d):
    cfg = getattr(res, "config", None)
    if cfg is None or n_s is None or n_d is None or cfg.mode == "fom":
        return None
    n_k, n_w = len(res.sample_points), len(cfg.omegas)
    if cfg.mode == "rom_full":
        return build_count_full(n_k, n_w, n_s, n_d)
    return build_count_randomized(n_k, n_w, cfg.sketch.l_s, cfg.sketch.l_d)
