"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest -v -s tests/test_acceptance.py``; the lines are also
collected in the terminal summary.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from romdot import cli
from romdot import diagnostics as dg
from romdot.grid import MediumParams, assemble_system, build_grid, default_layout
from romdot.inversion import FomEvaluator, run_inversion, select_sample_points, simulate_data
from romdot.pals import PalsConfig, PalsParams, Parametrization
from romdot.rom import (build_candidate_full, build_candidate_randomized, build_global_basis, reduce_operators,
                        rom_jacobian, rom_transfer, rom_transfer_domega)
from romdot.scenario import Scenario, build_problem, load_scenario
from romdot.sketch import SketchConfig
from romdot.solver import SolveLedger
from romdot.transfer import (jacobian, matricize, measurement_matrix, schur_reduce, schur_transfer, stack_real,
                             transfer_domega, transfer_function)

from conftest import make_system

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def toy_samples():
    t0 = time.perf_counter()
    sc = load_scenario(SCENARIOS / "toy2d.json")
    pb = build_problem(sc)
    cfg = sc.inversion_config("rom_full")
    D, _, _ = simulate_data(pb.sys_true, cfg.omegas, pb.mu_true, cfg.noise_delta, cfg.seed)
    pts, _ = select_sample_points(FomEvaluator(pb.sys, cfg.omegas, pb.param, D), pb.p0, cfg.n_k, cfg.tr)
    return sc, pb, cfg, pts, time.perf_counter() - t0


# -- 1 ---------------------------------------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_c01_exact_interpolation(toy_samples, acceptance):
    sc, pb, cfg, pts, t_setup = toy_samples
    t0 = time.perf_counter()
    fields = [pb.param.mu(p) for p in pts]
    rm = reduce_operators(pb.sys, build_global_basis(build_candidate_full(pb.sys, fields, cfg.omegas), 0.0))
    worst = 0.0
    for p in pts:
        mu, dmu = pb.param.mu(p), pb.param.dmu(p)
        J, Jr = jacobian(pb.sys, cfg.omegas, mu, dmu), rom_jacobian(rm, cfg.omegas, mu, dmu)
        for j, w in enumerate(cfg.omegas):
            worst = max(worst,
                        rel(rom_transfer(rm, w, mu), transfer_function(pb.sys, w, mu).Psi),
                        rel(Jr[:, :, j], J[:, :, j]),
                        rel(rom_transfer_domega(rm, w, mu), transfer_domega(pb.sys, w, mu)))
    elapsed = t_setup + time.perf_counter() - t0
    ok = len(pts) * len(cfg.omegas) == 4 and worst <= 1e-8 and elapsed < 60
    acceptance(1, "exact interpolation", ok, f"worst rel error {worst:.2e} over 4 pairs, {elapsed:.1f} s")
    assert ok


# -- 2 ---------------------------------------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_c02_tangential_interpolation(toy_samples, acceptance):
    sc, pb, cfg, pts, _ = toy_samples
    assert (cfg.sketch.l_s, cfg.sketch.l_d) == (4, 4)
    fields = [pb.param.mu(p) for p in pts]
    cand = build_candidate_randomized(pb.sys, fields, cfg.omegas, cfg.sketch)
    rm = reduce_operators(pb.sys, build_global_basis(cand, 0.0))
    worst, n_pairs = 0.0, 0
    for i, p in enumerate(pts):
        mu, dmu = pb.param.mu(p), pb.param.dmu(p)
        J, Jr = jacobian(pb.sys, cfg.omegas, mu, dmu), rom_jacobian(rm, cfg.omegas, mu, dmu)
        for j, w in enumerate(cfg.omegas):
            S, T = cand.sketches[(i, j)]
            P, Pr = transfer_function(pb.sys, w, mu).Psi, rom_transfer(rm, w, mu)
            dP, dPr = transfer_domega(pb.sys, w, mu), rom_transfer_domega(rm, w, mu)
            sk = lambda X: np.einsum("da,dsk,sb->abk", T, X, S)
            worst = max(worst, rel(T.T @ Pr, T.T @ P), rel(Pr @ S, P @ S),
                        rel(sk(Jr[:, :, j]), sk(J[:, :, j])), rel(T.T @ dPr @ S, T.T @ dP @ S))
            n_pairs += 1
    ok = n_pairs == 4 and worst <= 1e-8
    acceptance(2, "tangential interpolation", ok, f"worst sketched rel error {worst:.2e} over {n_pairs} pairs")
    assert ok


# -- 3 ---------------------------------------------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_c03_schur_equivalence(acceptance):
    g, s = make_system(17, 4, 4)
    par = Parametrization(g, PalsConfig(mu_high=1.0))
    sch = schur_reduce(s)
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(3):
        p = PalsParams(rng.uniform(0.2, 1.0, 3), rng.uniform(1.5, 3.0, 3), rng.uniform(-0.4, 0.4, (3, 2))).to_vector()
        mu = par.mu(p)
        for w in (0.0, 1.0):
            worst = max(worst, rel(schur_transfer(sch, w, mu), transfer_function(s, w, mu).Psi))
    ok = worst <= 1e-10
    acceptance(3, "Schur equivalence", ok, f"worst rel difference {worst:.2e}")
    assert ok


# -- 4 ---------------------------------------------------------------------------------------------------------

def _fd_jacobian(s, omegas, par, p, step_rel=1e-6):
    cols = []
    for k in range(p.size):
        h = step_rel * (1 + abs(p[k]))
        e = np.zeros_like(p)
        e[k] = h
        Mp = measurement_matrix(s, omegas, par.mu(p + e)).M
        Mm = measurement_matrix(s, omegas, par.mu(p - e)).M
        cols.append(stack_real((Mp - Mm) / (2 * h)))
    return np.column_stack(cols)


@pytest.mark.criterion(4)
def test_c04_jacobian_vs_differences(acceptance):
    g, s = make_system(25, 4, 4)
    par = Parametrization(g, PalsConfig(mu_high=2.0))
    rng = np.random.default_rng(44)
    omegas = (0.0, 1.0)
    worst = 0.0
    for _ in range(10):
        p = PalsParams(rng.uniform(0.2, 0.8, 2), rng.uniform(1.5, 2.5, 2), rng.uniform(-0.4, 0.4, (2, 2))).to_vector()
        J = matricize(jacobian(s, omegas, par.mu(p), par.dmu(p)))
        F = _fd_jacobian(s, omegas, par, p)
        worst = max(worst, np.abs(J - F).max() / np.abs(F).max())
    ok = worst <= 1e-5
    acceptance(4, "costate Jacobian", ok, f"max rel error {worst:.2e} over 10 draws")
    assert ok


# -- 5 ---------------------------------------------------------------------------------------------------------

def tr_solve_counts(trace, stopped_by):
    """(residual evaluations, Jacobian evaluations) implied by a trust-region trace."""
    acc = [t["accepted"] for t in trace]
    n_jac = sum(acc[:-1]) + int(stopped_by == "stagnation" and acc[-1])
    return len(trace), n_jac


def ledger_identity_errors(res, n_s, n_d, n_w):
    """Compare every phase of a run's ledger with its closed form; returns a list of mismatches."""
    snap = {k: v.snapshot() for k, v in res.ledgers.items()}
    cfg = res.config
    want = {"data": (n_w * n_s, 0)}
    n_res, n_jac = tr_solve_counts(res.trace, res.stopped_by)
    if cfg.mode == "fom":
        want["sample"] = want["build"] = (0, 0)
        want["optimize"] = (n_w * (n_s * n_res + n_d * n_jac), 0)
    else:
        n_k = len(res.sample_points)
        stop = "max_accepted" if n_k == cfg.n_k else "stagnation"
        s_res, s_jac = tr_solve_counts(res.sample_trace, stop)
        want["sample"] = (n_w * (n_s * s_res + n_d * s_jac), 0)
        want["build"] = (dg.build_count_full(n_k, n_w, n_s, n_d) if cfg.mode == "rom_full" else
                         dg.build_count_randomized(n_k, n_w, cfg.sketch.l_s, cfg.sketch.l_d), 0)
        want["optimize"] = (0, n_w * (n_s * n_res + (n_s + n_d) * n_jac))
    return [f"{k}: {snap[k]['large']},{snap[k]['small']} != {v}" for k, v in want.items()
            if (snap[k]["large"], snap[k]["small"]) != v]


@pytest.mark.criterion(5)
def test_c05_solve_count_ledger(acceptance):
    # tabulated 3D counts (225 sources and detectors, l = 50)
    table = {(4, 3): dict(fom=18900, full=5400, full_small=16875, rand=1200, rand_small=17550),
             (3, 4): dict(fom=47700, full=5400, full_small=21600, rand=1200, rand_small=27000)}
    errors = []
    for (n_k, n_w), row in table.items():
        if dg.build_count_full(n_k, n_w, 225, 225) != row["full"]:
            errors.append(f"closed form full {n_k},{n_w}")
        if dg.build_count_randomized(n_k, n_w, 50, 50) != row["rand"]:
            errors.append(f"closed form rand {n_k},{n_w}")
        for key in ("fom", "full_small", "rand_small"):
            if row[key] % (n_w * 225):
                errors.append(f"{key} count {row[key]} is not a whole number of bundles")
    ratios = [table[k]["fom"] / table[k]["rand"] for k in table]
    if not (15 < ratios[0] < 17 and 39 < ratios[1] < 41):
        errors.append(f"ratios {ratios}")

    # real builds with 225 sources and detectors on a small 3D mesh
    g = build_grid(3, (17, 17, 5), (1.0, 1.0, 0.5))
    s = assemble_system(g, MediumParams(), default_layout(g, 225, 225))
    par = Parametrization(g, PalsConfig(mu_high=0.5))
    rng = np.random.default_rng(5)
    counts = {}
    for n_k, n_w in table:
        fields = [par.mu(PalsParams([0.5], [2.0], [rng.uniform(-0.3, 0.3, 3) + [0, 0, 0.25]]).to_vector())
                  for _ in range(n_k)]
        omegas = tuple(float(w) for w in range(n_w))
        full, rand = SolveLedger(), SolveLedger()
        build_candidate_full(s, fields, omegas, ledger=full)
        build_candidate_randomized(s, fields, omegas, SketchConfig(50, 50, seed=9), ledger=rand)
        counts[(n_k, n_w)] = (full.snapshot()["large"], rand.snapshot()["large"])
        if counts[(n_k, n_w)] != (5400, 1200):
            errors.append(f"measured build counts {counts[(n_k, n_w)]} for n_k={n_k}, n_omega={n_w}")

    # every phase of a small desk run in each mode
    sc = load_scenario(SCENARIOS / "toy2d.json")
    pb = build_problem(sc)
    for mode in ("fom", "rom_full", "rom_rand"):
        res = run_inversion(pb, sc.inversion_config(mode))
        errors += [f"{mode} {e}" for e in ledger_identity_errors(res, pb.sys.n_s, pb.sys.n_d, len(sc.omegas))]
    ok = not errors
    acceptance(5, "solve-count ledger", ok,
               f"builds {counts}, tabulated fom/rand ratios {ratios[0]:.2f} and {ratios[1]:.2f}"
               + ("" if ok else f"; mismatches {errors}"))
    assert ok


# -- 6 and 7 ---------------------------------------------------------------------------------------------------

WIDE2D = {
    "grid": {"dim": 2, "nodes": 65, "extents": [1, 1]}, "layout": {"n_sources": 32, "n_detectors": 32},
    "medium": {"rng_seed": 1}, "pals": {"mu_high": 0.5},
    "truth": {"bumps": [{"alpha": 1.0, "beta": 2.5, "center": [0.2, 0.0]}]},
    "initial": {"per_axis": 2, "alpha": 0.2}, "omegas": [0.0, 1.0],
    "sketch": {"l_s": 12, "l_d": 12, "seed": 5}, "inversion": {"n_k": 4, "seed": 3},
}


@pytest.fixture(scope="module")
def wide_candidates():
    t0 = time.perf_counter()
    sc = Scenario.from_dict(WIDE2D)
    pb = build_problem(sc)
    cfg = sc.inversion_config("rom_full")
    D, _, _ = simulate_data(pb.sys_true, cfg.omegas, pb.mu_true, cfg.noise_delta, cfg.seed)
    pts, _ = select_sample_points(FomEvaluator(pb.sys, cfg.omegas, pb.param, D), pb.p0, cfg.n_k, cfg.tr)
    fields = [pb.param.mu(p) for p in pts]
    full = build_candidate_full(pb.sys, fields, cfg.omegas)
    rand = build_candidate_randomized(pb.sys, fields, cfg.omegas, cfg.sketch)
    return len(pts), full, rand, cfg, time.perf_counter() - t0


@pytest.mark.criterion(6)
def test_c06_subspace_agreement(wide_candidates, acceptance):
    n_k, full, rand, cfg, t_setup = wide_candidates
    t0 = time.perf_counter()
    gf, gr = build_global_basis(full, cfg.trunc_tol), build_global_basis(rand, cfg.trunc_tol)
    lead = dg.canonical_angles(gf.V_r, gr.V_r).leading_min(0.9)
    elapsed = t_setup + time.perf_counter() - t0
    ok = n_k == 4 and lead >= 0.99 and elapsed < 300
    acceptance(6, "subspace agreement", ok,
               f"min cosine over leading 90% {lead:.5f} (r_full={gf.r}, r_rand={gr.r}), {elapsed:.1f} s")
    assert ok


@pytest.mark.criterion(7)
def test_c07_singular_value_decay(wide_candidates, acceptance):
    _, full, _, _, _ = wide_candidates
    rep = dg.singular_value_report(full, "V")
    frac = rep.ranks[1e-8] / rep.n_columns
    ok = rep.decades() >= 4 and frac < 0.5
    acceptance(7, "singular-value decay", ok,
               f"{rep.decades():.1f} decades, rank@1e-8 {rep.ranks[1e-8]}/{rep.n_columns} = {frac:.0%}")
    assert ok


# -- 8 ---------------------------------------------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_c08_desk_reconstruction(acceptance):
    t0 = time.perf_counter()
    sc = load_scenario(SCENARIOS / "desk3d.json")
    pb = build_problem(sc)
    shape_ok = (pb.grid.shape == (16, 16, 16) and pb.sys.n_s == pb.sys.n_d == 16 and len(sc.omegas) == 2
                and pb.p0.size == 8 * (2 + 3) and sc.sketch.l_s == sc.sketch.l_d == 6
                and sc.inversion["noise_delta"] == 1e-3)
    runs = {m: run_inversion(pb, sc.inversion_config(m)) for m in ("fom", "rom_full", "rom_rand")}
    ratios = {m: r.fom_residual_norm / r.noise_norm for m, r in runs.items()}
    mu = {m: pb.param.mu(r.p_hat) for m, r in runs.items()}
    diff = rel(mu["rom_rand"], mu["fom"])
    errors = []
    for m, r in runs.items():
        errors += [f"{m} {e}" for e in ledger_identity_errors(r, pb.sys.n_s, pb.sys.n_d, len(sc.omegas))]
    dg.solve_count_report(runs, pb.sys.n_s, pb.sys.n_d)
    fom_large = runs["fom"].ledgers["optimize"].snapshot()["large"]
    rand_large = runs["rom_rand"].ledgers["build"].snapshot()["large"]
    elapsed = time.perf_counter() - t0
    ok = (shape_ok and all(v <= 1.1 for v in ratios.values()) and diff <= 0.10 and not errors
          and elapsed < 1800)
    acceptance(8, "desk 3D reconstruction", ok,
               "residual/noise " + ", ".join(f"{m} {v:.3f}" for m, v in ratios.items())
               + f"; rand vs fom {diff:.1%}; fom/rand large solves {fom_large}/{rand_large}"
               + f" = {fom_large / rand_large:.1f}x; {elapsed:.0f} s" + ("" if not errors else f"; {errors}"))
    assert ok


# -- 9 ---------------------------------------------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_c09_smw_containment(acceptance):
    g, s = make_system(17, 4, 4)
    fields = [np.zeros(s.n), dg.pixel_anomaly(g, (0.1, 0.2), 1, 0.5), dg.pixel_anomaly(g, (-0.3, 0.1), 1, 0.5),
              dg.pixel_anomaly(g, (0.25, -0.25), 1, 0.3)]
    reps = [dg.smw_update_check(s, fields[i], fields[i + 1]) for i in range(len(fields) - 1)]
    worst = max(r.residual for r in reps)
    ok = all(r.k_next == 1 for r in reps) and worst <= 1e-10 and all(r.delta_rel <= r.bound for r in reps)
    acceptance(9, "SMW containment", ok, f"max residual {worst:.2e}; change/bound "
               + ", ".join(f"{r.delta_rel:.1e}/{r.bound:.1e}" for r in reps))
    assert ok


# -- 10 --------------------------------------------------------------------------------------------------------

@pytest.mark.criterion(10)
def test_c10_refinement_trend(acceptance):
    rep = dg.lemma2_trend((33, 65, 129))
    ok = 0.7 <= rep.slope <= 1.3
    acceptance(10, "O(h) trend", ok, f"slope {rep.slope:.3f}, ratios " + ", ".join(f"{x:.3e}" for x in rep.ratio))
    assert ok


# -- 11 --------------------------------------------------------------------------------------------------------

@pytest.mark.criterion(11)
def test_c11_laplacian_eigenpairs(acceptance):
    rep = dg.laplacian_eigpair_check(8)
    lam, _ = dg.laplacian_eigpair(2, 1, 1)
    eps = np.finfo(float).eps
    ok = len(rep.rows) == 49 and rep.max_residual <= 1e-10 and abs(lam - 4.0) <= 2 * eps * 4.0
    acceptance(11, "Laplacian eigenpairs", ok,
               f"max residual {rep.max_residual:.2e} over {len(rep.rows)} pairs; lambda(2,1,1) - 4 = {lam - 4.0:.1e}")
    assert ok


# -- 12 --------------------------------------------------------------------------------------------------------

COMMANDS = [("simulate",)] + [("invert", "--mode", m) for m in ("fom", "rom-full", "rom-rand")] + \
           [("diagnose", "--which", w) for w in cli._WHICH]


@pytest.mark.criterion(12)
def test_c12_determinism(tmp_path, acceptance):
    scen = tmp_path / "toy.json"
    data = json.loads((SCENARIOS / "toy2d.json").read_text())
    data["grid"]["nodes"] = 17
    scen.write_text(json.dumps(data))
    codes = []
    for d, threads in (("a", 1), ("b", 3)):
        for cmd in COMMANDS:
            codes.append(cli.main([cmd[0], str(scen), *cmd[1:], "--out", str(tmp_path / d), "--threads", str(threads)]))
    a = sorted(f.name for f in (tmp_path / "a").iterdir())
    b = sorted(f.name for f in (tmp_path / "b").iterdir())
    differ = [n for n in a if (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes()]
    ok = all(c == 0 for c in codes) and a == b and not differ
    acceptance(12, "determinism", ok, f"{len(COMMANDS)} commands, {len(a)} files, differing: {differ or 'none'}")
    assert ok
