import numpy as np
import pytest
import scipy.sparse.linalg as spla

from romdot.errors import ConfigurationError
from romdot.grid import MediumParams, ShiftedSystem, assemble_system, build_grid, default_layout, shifted_operator
from romdot.transfer import schur_reduce

from conftest import make_system


def test_grid_node_counts():
    assert build_grid(3, 32, (0.5, 0.5, 1.0)).n_nodes == 32768
    assert build_grid(2, 201, (1.0, 1.0)).shape == (201, 201)
    assert build_grid(2, 3, (1.0, 1.0)).h == pytest.approx(1.0)


def test_state_excludes_lateral_dirichlet_nodes():
    g = build_grid(3, 6, (1.0, 1.0, 2.0))
    assert g.n_unknowns == 4 * 4 * 6
    idx = g.unknown_index()
    assert sorted(idx[idx >= 0]) == list(range(g.n_unknowns))


@pytest.mark.parametrize("args", [(2, 2, (1, 1)), (2, 5, (1, 2)), (4, 5, (1, 1)), (2, 5, (1, -1))])
def test_grid_rejects_bad_input(args):
    with pytest.raises(ConfigurationError):
        build_grid(*args)


def test_interior_stencil_is_scaled_laplacian():
    D = 1.7
    g, s = make_system(9, 2, 2, medium=MediumParams(D=D, mu_bg=0.0))
    A = s.A0.tocsr()
    nb = s.n_boundary
    row = A[nb + 10].toarray().ravel()
    nz = np.sort(row[row != 0])
    assert np.allclose(nz, D * np.array([-1, -1, -1, -1, 4]))
    # row sums over interior rows whose neighbours are all unknowns vanish
    for i in range(nb + g.n_face, s.n - g.n_face):
        x = g.coordinates()[i]
        if np.all(np.abs(x[:1]) < 1 - 1.5 * g.h):
            assert abs(A[i].sum()) < 1e-12


def test_E_zero_rows_are_the_robin_faces(sys17):
    g, s = sys17
    e = s.E.diagonal()
    assert np.sum(e == 0) == 2 * g.n_face == s.n_boundary
    assert np.all(e[: s.n_boundary] == 0) and np.all(e[s.n_boundary:] == pytest.approx(g.h**2))


def test_block_structure_of_B_and_C(sys17):
    _, s = sys17
    nb = s.n_boundary
    assert s.B.tocsr()[:nb].count_nonzero() == 0
    assert s.C.tocsc()[:, nb:].count_nonzero() == 0
    assert s.B.shape == (s.n, 4) and s.C.shape == (4, s.n)


def test_robin_block_is_diagonal():
    D = 1.3
    g, s = make_system(11, 2, 2, medium=MediumParams(D=D))
    G = s.A0.tocsr()[: s.n_boundary, : s.n_boundary].toarray()
    assert np.allclose(G, np.diag(np.diag(G)))
    assert np.allclose(np.diag(G), 0.25 + D / (2 * g.h))


def test_shifted_operator_zero_frequency_is_real(sys17):
    _, s = sys17
    mu = np.full(s.n, 0.3)
    op = shifted_operator(s, 0.0, s.p_diag(mu))
    assert not op.is_complex
    ref = s.A0 + np.diag(s.a1_scale * mu)
    assert np.allclose(op.todense(), ref)


def test_schur_operator_is_complex_symmetric(sys17, rng):
    _, s = sys17
    sc = schur_reduce(s)
    M = sc.operator(rng.uniform(0, 1, s.n), 1.0)
    assert abs(M - M.T).max() == 0
    assert np.iscomplexobj(M.data)


def test_apply_matches_dense_row_assembly():
    # independent dense construction of the 5x5 case (3x5 unknowns)
    D, mu_bg = 1.0, 0.05
    g, s = make_system(5, 1, 1, medium=MediumParams(D=D, mu_bg=mu_bg))
    h = g.h
    idx = g.unknown_index()
    n = s.n
    ref = np.zeros((n, n))
    for ix in range(1, 4):
        for iy in range(5):
            r = idx[ix, iy]
            if iy in (0, 4):
                nb = idx[ix, 1 if iy == 0 else 3]
                ref[r, r] = 0.25 + D / (2 * h)
                ref[r, nb] = -D / (2 * h)
                continue
            ref[r, r] = 4 * D + h * h * mu_bg
            for jx, jy in ((ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)):
                if idx[jx, jy] >= 0:
                    ref[r, idx[jx, jy]] = -D
    op = ShiftedSystem.from_matrix(s.A0)
    for j in range(n):
        ej = np.zeros(n)
        ej[j] = 1.0
        assert np.allclose(op.apply(ej), ref[:, j], atol=1e-14)


def test_schur_operator_is_positive_definite(sys17):
    _, s = sys17
    A = schur_reduce(s).operator(None).toarray()
    np.linalg.cholesky(A)
    x, info = spla.cg(schur_reduce(s).operator(np.full(s.n, 0.2)), np.ones(A.shape[0]), rtol=1e-10)
    assert info == 0


def _mms_errors(u, uy, f, nodes, D=1.0, mu=0.05):
    errs = []
    for N in nodes:
        g = build_grid(2, N, (1.0, 1.0))
        s = assemble_system(g, MediumParams(D=D, mu_bg=mu), default_layout(g, 1, 1))
        X = g.coordinates()
        nf = g.n_face
        rhs = g.h**2 * f(X[:, 0], X[:, 1])
        top, bot = X[:nf], X[nf:2 * nf]
        rhs[:nf] = 0.25 * u(*top.T) - D / 2 * uy(*top.T)
        rhs[nf:2 * nf] = 0.25 * u(*bot.T) + D / 2 * uy(*bot.T)
        uh = spla.spsolve(s.A0.tocsc(), rhs)
        errs.append(np.abs(uh - u(X[:, 0], X[:, 1])).max())
    return np.array(errs)


def test_stencil_is_second_order():
    # linear in depth: the one-sided Robin difference is exact, so only the stencil error remains
    c = np.pi / 2
    u = lambda x, y: np.cos(c * x) * (y + 3)
    uy = lambda x, y: np.cos(c * x)
    f = lambda x, y: (c**2 + 0.05) * u(x, y)
    e = _mms_errors(u, uy, f, (33, 65, 129))
    ratios = e[:-1] / e[1:]
    assert np.all(np.abs(ratios - 4) <= 0.8), ratios


def test_generic_solution_converges_at_first_order():
    # the first-order Robin rows dominate for a generic profile
    c = np.pi / 2
    u = lambda x, y: np.cos(c * x) * (np.cos(y) + 2)
    uy = lambda x, y: -np.cos(c * x) * np.sin(y)
    f = lambda x, y: c**2 * u(x, y) + np.cos(c * x) * np.cos(y) + 0.05 * u(x, y)
    e = _mms_errors(u, uy, f, (33, 65, 129))
    ratios = e[:-1] / e[1:]
    assert np.all(np.abs(ratios - 2) <= 0.4), ratios


def test_heterogeneity_is_seeded_and_nonnegative():
    g = build_grid(2, 17, (1.0, 1.0))
    m = MediumParams(mu_bg=0.05, heterogeneity_sigma=0.01, rng_seed=4)
    a, b = m.background_field(g, True), m.background_field(g, True)
    assert np.array_equal(a, b) and np.all(a >= 0) and a.std() > 0
    assert np.all(m.background_field(g) == 0.05)


def test_layout_positions_are_distinct():
    g = build_grid(3, 17, (1.0, 1.0, 2.0))
    lay = default_layout(g, 225, 225)
    assert len(set(lay.source_nodes)) == 225 and len(set(lay.detector_nodes)) == 225
    with pytest.raises(ConfigurationError):
        default_layout(g, 226, 4)
