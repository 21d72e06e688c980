"""Nonlinear least-squares inversion with a trust-region Gauss-Newton driver.

The driver only sees a residual function and a Jacobian function, so the
same code runs on the full-order model and on a reduced model.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, RomdotError
from .grid import SystemMatrices, shifted_operator
from .pals import Parametrization
from .rom import (build_candidate_full, build_candidate_randomized, build_global_basis, reduce_operators,
                  rom_jacobian, rom_measurement_matrix)
from .sketch import SketchConfig
from .solver import SolveConfig, SolveLedger, solve_adjoint_multi, solve_multi
from .transfer import costate_jacobian, matricize, measurement_matrix, stack_real

log = logging.getLogger(__name__)

MODES = ("fom", "rom_full", "rom_rand")


@dataclass(frozen=True)
class TrustRegionSettings:
    radius0: float = 0.5
    shrink: float = 0.25
    expand: float = 2.0
    eta_accept: float = 0.1
    eta_expand: float = 0.75
    max_iter: int = 60
    max_radius: float = 10.0
    min_radius: float = 1e-8
    svd_cut: float = 1e-10


@dataclass(frozen=True)
class InversionConfig:
    mode: str = "fom"
    n_k: int = 3
    omegas: tuple = (0.0,)
    noise_delta: float = 1e-3
    stop_factor: float = 1.1
    tr: TrustRegionSettings = TrustRegionSettings()
    seed: int = 0
    trunc_tol: float = 1e-8
    sketch: SketchConfig | None = None
    solve: SolveConfig = SolveConfig(tol=1e-10)
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_k < 1:
            raise ConfigurationError("n_k must be >= 1")
        if self.stop_factor < 1:
            raise ConfigurationError("stop_factor must be >= 1")
        if self.noise_delta < 0:
            raise ConfigurationError("noise_delta must be >= 0")
        if self.mode == "rom_rand" and self.sketch is None:
            raise ConfigurationError("rom_rand needs a sketch configuration")


@dataclass
class InversionResult:
    p_hat: np.ndarray
    trace: list
    stopped_by: str
    residual_norm: float
    noise_norm: float = 0.0
    ledgers: dict = field(default_factory=dict)
    sample_points: list = field(default_factory=list)
    r: int | None = None
    basis: object = None
    fom_residual_norm: float | None = None
    iterates: list = field(default_factory=list)
    config: InversionConfig | None = None
    sample_trace: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.residual_norm**2


def _tr_step(J, r, radius, svd_cut):
    """Minimize ``|J s + r|`` over ``|s| <= radius`` using a truncated SVD of J."""
    U, sig, Vt = np.linalg.svd(J, full_matrices=False)
    keep = sig >= svd_cut * sig[0] if sig.size and sig[0] > 0 else np.zeros(sig.shape, bool)
    U, sig, Vt = U[:, keep], sig[keep], Vt[keep]
    g = U.T @ r
    coef = -g / sig
    if np.linalg.norm(coef) <= radius:
        return Vt.T @ coef
    # regularized step on the boundary: |sig g / (sig^2 + lam)| = radius
    def gap(lam):
        return np.linalg.norm(sig * g / (sig**2 + lam)) - radius

    hi = max(sig[0] ** 2, 1.0)
    while gap(hi) > 0:
        hi *= 10.0
    lam = brentq(gap, 0.0, hi, xtol=1e-14 * hi, rtol=1e-12)
    return Vt.T @ (-sig * g / (sig**2 + lam))


def trust_region_solve(residual_fn, jacobian_fn, p0, config: TrustRegionSettings = TrustRegionSettings(),
                       noise_norm: float = 0.0, stop_factor: float = 1.1, max_accepted: int | None = None,
                       ledger: SolveLedger | None = None) -> InversionResult:
    """Trust-region Gauss-Newton on ``|r(p)|^2``.

    Steps solve the trust-region subproblem on the truncated SVD of the
    Jacobian.  A step is accepted when actual/predicted reduction >= 0.1;
    the radius doubles when that ratio is >= 0.75 and shrinks by 4 on
    rejection.  Stops when ``|r| <= stop_factor * noise_norm``.
    """
    p = np.array(p0, dtype=float)
    r = residual_fn(p)
    f = float(r @ r)
    if not np.isfinite(f):
        raise RomdotError("non-finite objective at the initial point")
    radius = config.radius0
    trace = [dict(iteration=0, objective=f, residual=np.sqrt(f), step_norm=0.0, radius=radius,
                  accepted=True, ratio=np.nan, ledger=ledger.snapshot() if ledger else None)]
    target = stop_factor * noise_norm
    accepted = 0
    iterates = [p.copy()]
    J = None
    stopped_by = "maxiter"
    for it in range(1, config.max_iter + 1):
        if np.sqrt(f) <= target:
            stopped_by = "noise"
            break
        if max_accepted is not None and accepted >= max_accepted:
            stopped_by = "max_accepted"
            break
        if J is None:
            J = jacobian_fn(p)
        s = _tr_step(J, r, radius, config.svd_cut)
        pred = f - float(np.sum((r + J @ s) ** 2))
        if pred <= 1e-15 * f or radius < config.min_radius:
            stopped_by = "stagnation"
            break
        r_new = residual_fn(p + s)
        f_new = float(r_new @ r_new)
        if not np.isfinite(f_new):
            raise RomdotError(f"non-finite objective at iteration {it}")
        ratio = (f - f_new) / pred
        step_norm = float(np.linalg.norm(s))
        ok = ratio >= config.eta_accept
        if ok:
            p, r, f = p + s, r_new, f_new
            J = None
            accepted += 1
            iterates.append(p.copy())
            if ratio >= config.eta_expand:
                radius = min(config.expand * max(radius, step_norm), config.max_radius)
        else:
            radius = config.shrink * min(radius, step_norm)
        trace.append(dict(iteration=it, objective=f, residual=np.sqrt(f), step_norm=step_norm, radius=radius,
                          accepted=bool(ok), ratio=float(ratio), ledger=ledger.snapshot() if ledger else None))
        log.debug("it %d f=%.6e ratio=%.3f radius=%.3e", it, f, ratio, radius)
    else:
        if np.sqrt(f) <= target:
            stopped_by = "noise"
    return InversionResult(p_hat=p, trace=trace, stopped_by=stopped_by, residual_norm=float(np.sqrt(f)),
                           noise_norm=noise_norm, iterates=iterates)


class FomEvaluator:
    """Full-order residual and Jacobian; the Jacobian reuses the forward bundles of the last residual."""

    def __init__(self, sys: SystemMatrices, omegas, param: Parametrization, data: np.ndarray,
                 config: SolveConfig = SolveConfig(tol=1e-10), ledger: SolveLedger | None = None):
        self.sys = sys
        self.omegas = tuple(omegas)
        self.param = param
        self.data = np.asarray(data)
        self.config = config
        self.ledger = ledger if ledger is not None else SolveLedger()
        self._cache = None

    def _forward(self, p):
        mu = self.param.mu(p)
        ops, Ys = [], []
        for w in self.omegas:
            op = shifted_operator(self.sys, w, self.sys.p_diag(mu))
            ops.append(op)
            Ys.append(solve_multi(op, self.sys.B, self.config, self.ledger))
        self._cache = (np.array(p, copy=True), ops, Ys)
        return ops, Ys

    def measurement(self, p) -> np.ndarray:
        _, Ys = self._forward(p)
        return np.hstack([(self.sys.C @ Y).astype(complex) for Y in Ys])

    def residual(self, p) -> np.ndarray:
        return stack_real(self.measurement(p) - self.data)

    def jacobian(self, p) -> np.ndarray:
        if self._cache is not None and np.array_equal(self._cache[0], p):
            _, ops, Ys = self._cache
        else:
            ops, Ys = self._forward(p)
        dA = self.sys.a1_scale[:, None] * self.param.dmu(p)
        Ct = self.sys.C.T.tocsc()
        J = np.zeros((self.sys.n_d, self.sys.n_s, len(self.omegas), dA.shape[1]), dtype=complex)
        for j, (op, Y) in enumerate(zip(ops, Ys)):
            Z = solve_adjoint_multi(op, Ct, self.config, self.ledger)
            J[:, :, j, :] = costate_jacobian(Y, Z, dA)
        return matricize(J)


class RomEvaluator:
    def __init__(self, rm, omegas, param: Parametrization, data: np.ndarray, ledger: SolveLedger | None = None):
        self.rm = rm
        self.omegas = tuple(omegas)
        self.param = param
        self.data = np.asarray(data)
        self.ledger = ledger if ledger is not None else SolveLedger()

    def residual(self, p) -> np.ndarray:
        M = rom_measurement_matrix(self.rm, self.omegas, self.param.mu(p), self.ledger)
        return stack_real(M - self.data)

    def jacobian(self, p) -> np.ndarray:
        return matricize(rom_jacobian(self.rm, self.omegas, self.param.mu(p), self.param.dmu(p), self.ledger))


def simulate_data(sys_true: SystemMatrices, omegas, mu_true: np.ndarray, noise_delta: float, seed: int,
                  config: SolveConfig = SolveConfig(), ledger: SolveLedger | None = None):
    """Noisy synthetic data.

    Returns ``(D, noise_norm, M)``.  The noise is Gaussian with
    ``E|N|_F^2 = noise_delta^2 |M|_F^2``; blocks at zero frequency get real
    noise since the model output there is real.
    """
    M = measurement_matrix(sys_true, omegas, mu_true, config, ledger).M
    if noise_delta == 0:
        return M.copy(), 0.0, M
    rng = np.random.default_rng(seed)
    n_s = sys_true.n_s
    sigma = noise_delta * np.linalg.norm(M) / np.sqrt(M.size)
    N = np.empty_like(M)
    for j, w in enumerate(omegas):
        cols = slice(j * n_s, (j + 1) * n_s)
        shape = (M.shape[0], n_s)
        if w == 0:
            N[:, cols] = sigma * rng.standard_normal(shape)
        else:
            N[:, cols] = sigma / np.sqrt(2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return M + N, float(np.linalg.norm(N)), M


def select_sample_points(fom: FomEvaluator, p0, n_k: int, settings: TrustRegionSettings = TrustRegionSettings()):
    """Parameter samples from the first accepted full-order trust-region iterations.

    Returns ``[p0, p1, ...]`` (``n_k`` points unless the run stagnates first)
    and the run record.  The noise stopping rule is not applied here.
    """
    if n_k == 1:
        return [np.array(p0, dtype=float)], None
    res = trust_region_solve(fom.residual, fom.jacobian, p0, settings, noise_norm=0.0, max_accepted=n_k - 1)
    return [np.array(x) for x in res.iterates[:n_k]], res


def run_inversion(problem, config: InversionConfig) -> InversionResult:
    """Simulate data, optionally build a ROM, and run the trust-region solve.

    ``problem`` is a :class:`romdot.scenario.Problem`.
    """
    ledgers = {"data": SolveLedger(), "sample": SolveLedger(), "build": SolveLedger(), "optimize": SolveLedger()}
    omegas = tuple(config.omegas)
    D, noise_norm, _ = simulate_data(problem.sys_true, omegas, problem.mu_true, config.noise_delta, config.seed,
                                     config.solve, ledgers["data"])
    p0 = problem.p0
    sample_points, sample_run = [], None
    basis = None
    if config.mode == "fom":
        fom = FomEvaluator(problem.sys, omegas, problem.param, D, config.solve, ledgers["optimize"])
        res = trust_region_solve(fom.residual, fom.jacobian, p0, config.tr, noise_norm, config.stop_factor,
                                 ledger=ledgers["optimize"])
        fom_res = res.residual_norm
    else:
        fom_s = FomEvaluator(problem.sys, omegas, problem.param, D, config.solve, ledgers["sample"])
        sample_points, sample_run = select_sample_points(fom_s, p0, config.n_k, config.tr)
        fields = [problem.param.mu(p) for p in sample_points]
        if config.mode == "rom_full":
            cand = build_candidate_full(problem.sys, fields, omegas, config.solve, ledgers["build"], config.threads)
        else:
            cand = build_candidate_randomized(problem.sys, fields, omegas, config.sketch, config.solve,
                                              ledgers["build"], config.threads)
        basis = build_global_basis(cand, config.trunc_tol)
        rm = reduce_operators(problem.sys, basis)
        rom = RomEvaluator(rm, omegas, problem.param, D, ledgers["optimize"])
        res = trust_region_solve(rom.residual, rom.jacobian, sample_points[-1], config.tr, noise_norm,
                                 config.stop_factor, ledger=ledgers["optimize"])
        check = FomEvaluator(problem.sys, omegas, problem.param, D, config.solve, None)
        fom_res = float(np.linalg.norm(check.residual(res.p_hat)))
    res.noise_norm = noise_norm
    res.ledgers = ledgers
    res.sample_points = sample_points
    res.basis = basis
    res.r = None if basis is None else basis.r
    res.fom_residual_norm = fom_res
    res.config = config
    res.sample_trace = sample_run.trace if sample_run is not None else []
    return res
