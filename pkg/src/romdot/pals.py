"""Parametric level-set absorption model built from Wendland C2 bumps.

Parameters are stored bump by bump as ``[alpha, beta, x1, x2(, x3)]``, so a
3D bump carries five parameters and a 2D bump four.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class PalsConfig:
    c0: float = 0.1
    eps: float = 0.05
    mu_low: float = 0.0
    mu_high: float = 1.0
    csrbf_kind: str = "wendland_c2"

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        if not (self.mu_high > self.mu_low >= 0):
            raise ConfigurationError("need mu_high > mu_low >= 0")
        if self.csrbf_kind != "wendland_c2":
            raise ConfigurationError(f"unsupported CSRBF family {self.csrbf_kind!r}")


@dataclass(frozen=True)
class PalsParams:
    alpha: np.ndarray
    beta: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if not (alpha.shape == beta.shape == centers.shape[:1]):
            raise ConfigurationError("alpha, beta and centers disagree on the bump count")
        if centers.shape[1] not in (2, 3):
            raise ConfigurationError("centers must be 2D or 3D points")
        if np.any(beta <= 0):
            raise ConfigurationError("every dilation beta must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "centers", centers)

    @property
    def n_bumps(self) -> int:
        return self.alpha.size

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_bumps * (2 + self.dim)

    def to_vector(self) -> np.ndarray:
        return np.column_stack([self.alpha, self.beta, self.centers]).ravel()

    @classmethod
    def from_vector(cls, p, dim: int) -> "PalsParams":
        p = np.asarray(p, dtype=float).reshape(-1, 2 + dim)
        return cls(p[:, 0], np.abs(p[:, 1]), p[:, 2:])


def _split(p, dim):
    p = np.asarray(p, dtype=float).reshape(-1, 2 + dim)
    return p[:, 0], p[:, 1], p[:, 2:]


def wendland(r):
    r = np.abs(r)
    t = np.clip(1.0 - r, 0.0, None)
    return t**4 * (4.0 * r + 1.0)


def wendland_deriv(r):
    """d psi / dr for r >= 0."""
    t = np.clip(1.0 - r, 0.0, None)
    return -20.0 * r * t**3


def heaviside(t, eps):
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(t / eps))


def heaviside_deriv(t, eps):
    return (1.0 / (np.pi * eps)) / (1.0 + (t / eps) ** 2)


def _as_vector(params, dim=None):
    if isinstance(params, PalsParams):
        return params.to_vector(), params.dim
    if dim is None:
        raise ConfigurationError("dim is required when params is a plain vector")
    return np.asarray(params, dtype=float), dim


def level_set(x, params, dim: int | None = None):
    """Level-set function ``sum_j alpha_j psi(beta_j |x - c_j|)`` at points ``x`` (m, dim) or a single point."""
    p, dim = _as_vector(params, dim)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    alpha, beta, centers = _split(p, dim)
    phi = np.zeros(x.shape[0])
    for a, b, c in zip(alpha, beta, centers):
        d = np.linalg.norm(x - c, axis=1)
        phi += a * wendland(abs(b) * d)
    return phi[0] if single else phi


def absorption_at(x, params, config: PalsConfig, dim: int | None = None):
    phi = level_set(x, params, dim)
    return config.mu_low + (config.mu_high - config.mu_low) * heaviside(phi - config.c0, config.eps)


def absorption_field(grid, params, config: PalsConfig, dim: int | None = None) -> np.ndarray:
    """Absorption at every unknown of ``grid`` (state ordering)."""
    return absorption_at(grid.coordinates(), params, config, dim if dim is not None else grid.dim)


def absorption_gradient_at(x, params, config: PalsConfig, dim: int | None = None):
    """d mu / d p_k at points ``x``; returns an ``(m, n_p)`` array."""
    p, dim = _as_vector(params, dim)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    alpha, beta, centers = _split(p, dim)
    m = x.shape[0]
    nparam = 2 + dim
    G = np.zeros((m, alpha.size * nparam))
    phi = np.zeros(m)
    for j, (a, b, c) in enumerate(zip(alpha, beta, centers)):
        diff = x - c
        d = np.linalg.norm(diff, axis=1)
        sb = np.sign(b) if b != 0 else 1.0
        b = abs(b)
        r = b * d
        inside = r < 1.0
        t = np.where(inside, 1.0 - r, 0.0)
        psi = t**4 * (4.0 * r + 1.0)
        phi += a * psi
        col = j * nparam
        G[:, col] = psi
        # d psi / d beta = psi'(r) * d = -20 beta d^2 (1-r)^3
        G[:, col + 1] = a * sb * (-20.0 * b * d * d * t**3)
        # d psi / d c = psi'(r) * (-beta (x-c)/d) = 20 beta^2 (1-r)^3 (x-c)
        G[:, col + 2:col + nparam] = a * (20.0 * b * b * t**3)[:, None] * diff
    scale = (config.mu_high - config.mu_low) * heaviside_deriv(phi - config.c0, config.eps)
    return G * scale[:, None]


def absorption_gradient(grid, params, config: PalsConfig, dim: int | None = None) -> np.ndarray:
    """Per-node parameter derivatives of the absorption, shape ``(n, n_p)``.

    Column ``k`` times ``a1_scale`` is the diagonal of dA/dp_k.  Entries
    vanish outside the bump supports.
    """
    return absorption_gradient_at(grid.coordinates(), params, config, dim if dim is not None else grid.dim)


def bump_grid(grid, per_axis: int, alpha: float = 1.0, beta: float | None = None,
              alternate: bool = True, margin: float = 0.25) -> PalsParams:
    """Bumps on a regular ``per_axis**dim`` lattice inside the domain.

    With ``alternate`` the expansion coefficients alternate in sign across
    the lattice (checkerboard), which gives 13 positive / 14 negative for a
    3x3x3 lattice.
    """
    axes = []
    for k in range(grid.dim):
        lo, hi = grid.lower[k], grid.upper[k]
        w = hi - lo
        if per_axis == 1:
            axes.append(np.array([lo + 0.5 * w]))
        else:
            axes.append(np.linspace(lo + margin * w, hi - margin * w, per_axis))
    pts = np.array(list(product(*axes)))
    ijk = np.array(list(product(*[range(per_axis)] * grid.dim)))
    signs = np.where(ijk.sum(axis=1) % 2 == 1, 1.0, -1.0) if alternate else np.ones(len(pts))
    if beta is None:
        spacing = min(hi - lo for lo, hi in zip(grid.lower, grid.upper)) / max(per_axis, 1)
        beta = 1.0 / (0.75 * spacing)
    return PalsParams(alpha * signs, np.full(len(pts), beta), pts)


class Parametrization:
    """Maps a flat parameter vector to the absorption field and its gradient on a grid."""

    def __init__(self, grid, config: PalsConfig):
        self.grid = grid
        self.config = config
        self.coords = grid.coordinates()

    @property
    def dim(self) -> int:
        return self.grid.dim

    def mu(self, p) -> np.ndarray:
        return absorption_at(self.coords, p, self.config, self.dim)

    def dmu(self, p) -> np.ndarray:
        return absorption_gradient_at(self.coords, p, self.config, self.dim)
