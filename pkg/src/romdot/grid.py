"""Finite-difference discretization of the frequency-domain diffusion model.

The state vector holds every grid node that is not on a lateral (Dirichlet)
face.  Nodes on the top and bottom faces carry Robin rows and come first in
the ordering; the remaining nodes follow in lexicographic order (first axis
fastest).  Interior rows are pre-multiplied by ``h**2`` so the diffusion
stencil is O(1) and the absorption diagonal is O(h**2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on a box.

    The last axis is the depth axis; Robin conditions live on its two end
    faces and the other axes carry homogeneous Dirichlet conditions.  In 3D
    the box is ``(-a, a) x (-b, b) x (0, c)``; in 2D it is ``(-a, a) x (-b, b)``.
    """

    dim: int
    shape: tuple[int, ...]
    h: float
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def extents(self) -> tuple[float, ...]:
        if self.dim == 3:
            return (self.upper[0], self.upper[1], self.upper[2])
        return (self.upper[0], self.upper[1])

    def axis(self, k: int) -> np.ndarray:
        return self.lower[k] + self.h * np.arange(self.shape[k])

    def node_coordinates(self) -> np.ndarray:
        """Coordinates of all nodes, shape ``shape + (dim,)``."""
        axes = [self.axis(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def lateral_shape(self) -> tuple[int, ...]:
        """Number of unknowns per lateral axis (Dirichlet faces removed)."""
        return tuple(s - 2 for s in self.shape[:-1])

    @property
    def n_depth(self) -> int:
        return self.shape[-1]

    @property
    def n_face(self) -> int:
        return int(np.prod(self.lateral_shape))

    @property
    def n_unknowns(self) -> int:
        return self.n_face * self.n_depth

    def unknown_index(self) -> np.ndarray:
        """Array of grid shape mapping each node to its state index (-1 if eliminated)."""
        return _index_map(self)

    def coordinates(self) -> np.ndarray:
        """Coordinates of the unknowns in state ordering, shape ``(n, dim)``."""
        idx = self.unknown_index()
        xyz = self.node_coordinates()
        out = np.empty((self.n_unknowns, self.dim))
        mask = idx >= 0
        out[idx[mask]] = xyz[mask]
        return out

    def face_node(self, lateral: Sequence[int], top: bool) -> int:
        """State index of the Robin node at a lateral position (unknown-relative indices)."""
        pos = tuple(int(i) + 1 for i in lateral) + ((0,) if top else (self.n_depth - 1,))
        return int(self.unknown_index()[pos])

    def node_below_top(self, lateral: Sequence[int]) -> int:
        """State index one layer beneath the top face at a lateral position."""
        pos = tuple(int(i) + 1 for i in lateral) + (1,)
        return int(self.unknown_index()[pos])


def _index_map(grid: Grid) -> np.ndarray:
    idx = -np.ones(grid.shape, dtype=np.int64)
    lat = tuple(slice(1, s - 1) for s in grid.shape[:-1])
    nf = grid.n_face
    nd = grid.n_depth
    # Fortran-order ravel gives first axis fastest
    face = np.arange(nf).reshape(grid.lateral_shape, order="F")
    idx[lat + (0,)] = face
    idx[lat + (nd - 1,)] = nf + face
    for k in range(1, nd - 1):
        idx[lat + (k,)] = 2 * nf + (k - 1) * nf + face
    return idx


def build_grid(dim: int, nodes_per_axis, extents) -> Grid:
    """Build a uniform grid.

    ``nodes_per_axis`` is an int or a per-axis sequence counting all nodes
    including the boundary ones.  ``extents`` is ``(a, b, c)`` in 3D and
    ``(a, b)`` in 2D; every axis must give the same spacing.
    """
    if dim not in (2, 3):
        raise ConfigurationError(f"dim must be 2 or 3, got {dim}")
    if np.isscalar(nodes_per_axis):
        shape = (int(nodes_per_axis),) * dim
    else:
        shape = tuple(int(v) for v in nodes_per_axis)
    extents = tuple(float(v) for v in extents)
    if len(shape) != dim or len(extents) != dim:
        raise ConfigurationError("nodes_per_axis and extents must match dim")
    if min(shape) < 3:
        raise ConfigurationError(f"need at least 3 nodes per axis, got {shape}")
    if min(extents) <= 0:
        raise ConfigurationError(f"extents must be positive, got {extents}")

    if dim == 3:
        lower = (-extents[0], -extents[1], 0.0)
        upper = (extents[0], extents[1], extents[2])
    else:
        lower = (-extents[0], -extents[1])
        upper = (extents[0], extents[1])
    spacings = [(u - l) / (s - 1) for l, u, s in zip(lower, upper, shape)]
    h = spacings[0]
    if not np.allclose(spacings, h, rtol=1e-12, atol=0.0):
        raise ConfigurationError(f"extents {extents} with {shape} nodes give non-uniform spacing {spacings}")
    return Grid(dim=dim, shape=shape, h=h, lower=lower, upper=upper)


@dataclass(frozen=True)
class MediumParams:
    D: float = 1.0
    nu: float = 1.0
    mu_bg: float = 0.05
    heterogeneity_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.D > 0 or not self.nu > 0:
            raise ConfigurationError(f"D and nu must be positive (D={self.D}, nu={self.nu})")
        if self.mu_bg < 0 or self.heterogeneity_sigma < 0:
            raise ConfigurationError("mu_bg and heterogeneity_sigma must be nonnegative")

    def background_field(self, grid: Grid, heterogeneous: bool = False) -> np.ndarray:
        mu = np.full(grid.n_unknowns, self.mu_bg)
        if heterogeneous and self.heterogeneity_sigma > 0:
            rng = np.random.default_rng(self.rng_seed)
            mu = mu + self.heterogeneity_sigma * rng.standard_normal(grid.n_unknowns)
            np.maximum(mu, 0.0, out=mu)
        return mu


@dataclass(frozen=True)
class SourceDetectorLayout:
    """Source and detector positions given as state indices.

    Sources are listed by their top-face node; the source term itself is
    injected one layer below so that the Robin rows stay source free.
    """

    source_nodes: tuple[int, ...]
    detector_nodes: tuple[int, ...]

    @property
    def n_sources(self) -> int:
        return len(self.source_nodes)

    @property
    def n_detectors(self) -> int:
        return len(self.detector_nodes)


def _spread(count: int, length: int) -> np.ndarray:
    if count > length:
        raise ConfigurationError(f"cannot place {count} points on {length} nodes")
    return np.floor((np.arange(count) + 0.5) * length / count).astype(int)


def _lateral_positions(grid: Grid, count: int) -> list[tuple[int, ...]]:
    if grid.dim == 2:
        xs = _spread(count, grid.lateral_shape[0])
        return [(int(x),) for x in xs]
    m = int(round(np.sqrt(count)))
    if m * m != count:
        raise ConfigurationError(f"3D layouts need a square count, got {count}")
    xs = _spread(m, grid.lateral_shape[0])
    ys = _spread(m, grid.lateral_shape[1])
    return [(int(x), int(y)) for y in ys for x in xs]


def default_layout(grid: Grid, n_sources: int, n_detectors: int) -> SourceDetectorLayout:
    """Evenly spaced sources on the top face and detectors on the bottom face."""
    src = [grid.face_node(pos, top=True) for pos in _lateral_positions(grid, n_sources)]
    det = [grid.face_node(pos, top=False) for pos in _lateral_positions(grid, n_detectors)]
    return SourceDetectorLayout(tuple(src), tuple(det))


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    """Matrix family defining ``Psi(w; p) = C ((i w / nu) E + A0 + diag(a1_scale * mu(p)))^{-1} B``."""

    grid: Grid
    medium: MediumParams
    E: sp.csr_matrix
    A0: sp.csr_matrix
    a1_scale: np.ndarray
    B: sp.csc_matrix
    C: sp.csr_matrix
    n_boundary: int
    source_rows: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def nu(self) -> float:
        return self.medium.nu

    @property
    def n_s(self) -> int:
        return self.B.shape[1]

    @property
    def n_d(self) -> int:
        return self.C.shape[0]

    def p_diag(self, mu: np.ndarray) -> np.ndarray:
        """Diagonal of A1 for an absorption field."""
        return self.a1_scale * mu


def assemble_system(grid: Grid, medium: MediumParams, layout: SourceDetectorLayout,
                    mu_field: np.ndarray | None = None) -> SystemMatrices:
    """Assemble E, A0, B, C for the given grid and medium.

    ``mu_field`` is the absorption built into A0 (defaults to the homogeneous
    background).  The parametric absorption is added later through
    ``a1_scale``.
    """
    D, h = medium.D, grid.h
    n = grid.n_unknowns
    if mu_field is None:
        mu_field = medium.background_field(grid)
    mu_field = np.asarray(mu_field, dtype=float)
    if mu_field.shape != (n,):
        raise ConfigurationError(f"mu_field must have shape ({n},), got {mu_field.shape}")
    if np.any(mu_field < 0):
        raise ConfigurationError("mu_field must be nonnegative")

    idx = grid.unknown_index()
    nd = grid.n_depth
    nb = 2 * grid.n_face
    rows, cols, vals = [], [], []

    # Robin rows: 0.25 phi + (D/2) d(phi)/d(xi) = 0, one-sided normal difference
    g = 0.25 + D / (2.0 * h)
    lat = tuple(slice(1, s - 1) for s in grid.shape[:-1])
    for face, inner in ((0, 1), (nd - 1, nd - 2)):
        r = idx[lat + (face,)].ravel()
        c = idx[lat + (inner,)].ravel()
        rows += [r, r]
        cols += [r, c]
        vals += [np.full(r.size, g), np.full(r.size, -D / (2.0 * h))]

    # interior rows, scaled by h^2
    inner_sl = lat + (slice(1, nd - 1),)
    center = idx[inner_sl]
    r = center.ravel()
    rows.append(r)
    cols.append(r)
    vals.append(2 * grid.dim * D + h * h * mu_field[r])
    for ax in range(grid.dim):
        for step in (-1, 1):
            sl = list(inner_sl)
            s = sl[ax]
            sl[ax] = slice(s.start + step, s.stop + step)
            nb_idx = idx[tuple(sl)].ravel()
            keep = nb_idx >= 0  # Dirichlet neighbours drop out
            rows.append(r[keep])
            cols.append(nb_idx[keep])
            vals.append(np.full(int(keep.sum()), -D))

    A0 = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A0.sum_duplicates()

    # mass diagonal carries the same h^2 row scaling as the interior rows
    e = np.full(n, h * h)
    e[:nb] = 0.0
    E = sp.diags(e, format="csr")
    a1 = e.copy()

    coords = grid.coordinates()
    src_rows = []
    for node in layout.source_nodes:
        if node >= grid.n_face:
            raise ConfigurationError(f"source node {node} is not on the top face")
        src_rows.append(node + 2 * grid.n_face)  # same lateral position, depth index 1
    for node in layout.detector_nodes:
        if not (grid.n_face <= node < 2 * grid.n_face):
            raise ConfigurationError(f"detector node {node} is not on the bottom face")
    if len(set(layout.source_nodes)) != layout.n_sources or len(set(layout.detector_nodes)) != layout.n_detectors:
        raise ConfigurationError("source/detector indices must be distinct")
    src_rows = np.asarray(src_rows, dtype=np.int64)
    assert np.allclose(coords[src_rows][:, :-1], coords[list(layout.source_nodes)][:, :-1])

    ns, ndet = layout.n_sources, layout.n_detectors
    B = sp.csc_matrix((np.full(ns, h ** (-grid.dim)), (src_rows, np.arange(ns))), shape=(n, ns))
    C = sp.csr_matrix((np.ones(ndet), (np.arange(ndet), np.asarray(layout.detector_nodes))), shape=(ndet, n))
    return SystemMatrices(grid=grid, medium=medium, E=E, A0=A0, a1_scale=a1, B=B, C=C,
                          n_boundary=nb, source_rows=src_rows)


class ShiftedSystem:
    """The operator ``(i w / nu) E + A0 + diag(p_diag)``.

    Built lazily into a CSC matrix; a sparse LU factorization is cached on
    first use so every right-hand side at this (w, p) reuses it.
    """

    def __init__(self, matrix, omega: float = 0.0):
        self.matrix = sp.csc_matrix(matrix)
        self.omega = float(omega)
        self._lu = None

    @classmethod
    def from_matrix(cls, matrix):
        return cls(matrix)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def dtype(self):
        return self.matrix.dtype

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.matrix.data)

    def apply(self, x):
        return self.matrix @ x

    def apply_transpose(self, x):
        return self.matrix.T @ x

    def todense(self) -> np.ndarray:
        return self.matrix.toarray()


def shifted_operator(sys: SystemMatrices, omega: float, p_diag: np.ndarray) -> ShiftedSystem:
    M = sys.A0 + sp.diags(np.asarray(p_diag, dtype=float))
    if omega != 0.0:
        M = M + (1j * omega / sys.nu) * sys.E
    return ShiftedSystem(M, omega)
