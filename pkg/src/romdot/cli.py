"""``romdot`` command line: simulate data, run inversions, emit diagnostics.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .errors import ConfigurationError, RomdotError
from .inversion import FomEvaluator, run_inversion, select_sample_points, simulate_data
from .io import field_slices, write_csv, write_matrix, write_pgm
from .rom import build_candidate_full, build_candidate_randomized, build_global_basis, save_basis
from .scenario import build_problem, load_scenario
from .solver import SolveLedger

log = logging.getLogger("romdot")

_MODES = {"fom": "fom", "rom-full": "rom_full", "rom-rand": "rom_rand"}
_WHICH = ("svd", "angles", "gap", "smw", "lemma2", "eig")


def _images(out: Path, stem: str, grid, field, lo, hi):
    for k, img in enumerate(field_slices(grid, field, fill=lo)):
        write_pgm(out / f"{stem}_{k:03d}.pgm", img, lo, hi)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _setup(args):
    sc = load_scenario(args.scenario)
    out = Path(args.out if args.out is not None else sc.output)
    out.mkdir(parents=True, exist_ok=True)
    return sc, build_problem(sc), out


def cmd_simulate(args) -> int:
    sc, pb, out = _setup(args)
    cfg = sc.inversion_config("fom", seed=args.seed, threads=args.threads)
    ledger = SolveLedger()
    D, noise_norm, M = simulate_data(pb.sys_true, cfg.omegas, pb.mu_true, cfg.noise_delta, cfg.seed, cfg.solve, ledger)
    write_matrix(out / "data.mat", D)
    pc = sc.pals
    _images(out, "truth", pb.grid, pb.param.mu(pb.p_true), pc.mu_low, pc.mu_high)
    _write_json(out / "simulate.json", {
        "scenario": sc.name, "seed": cfg.seed, "noise_delta": cfg.noise_delta, "noise_norm": noise_norm,
        "clean_norm": float(np.linalg.norm(M)), "shape": list(D.shape), "omegas": list(cfg.omegas),
        "large_solves": ledger.snapshot()["large"], "medium_seed": sc.medium.rng_seed,
    })
    print(f"wrote {out / 'data.mat'}: {D.shape[0]}x{D.shape[1]}, noise norm {noise_norm:.6e}")
    return 0


def cmd_invert(args) -> int:
    sc, pb, out = _setup(args)
    mode = _MODES[args.mode]
    cfg = sc.inversion_config(mode, seed=args.seed, threads=args.threads)
    res = run_inversion(pb, cfg)
    tag = args.mode
    write_matrix(out / f"p_hat_{tag}.mat", res.p_hat)
    write_csv(out / f"trace_{tag}.csv", ("iteration", "objective", "residual", "step_norm", "radius", "accepted", "ratio"),
              [(t["iteration"], t["objective"], t["residual"], t["step_norm"], t["radius"], int(t["accepted"]), t["ratio"])
               for t in res.trace])
    rows = dg.solve_count_report({tag: res}, pb.sys.n_s, pb.sys.n_d)
    write_csv(out / f"ledger_{tag}.csv", dg.SOLVE_COLUMNS, rows)
    if res.basis is not None:
        save_basis(out / f"basis_{tag}.mat", res.basis, cfg.seed)
    pc = sc.pals
    _images(out, f"recon_{tag}", pb.grid, pb.param.mu(res.p_hat), pc.mu_low, pc.mu_high)
    _write_json(out / f"invert_{tag}.json", {
        "mode": mode, "seed": cfg.seed, "stopped_by": res.stopped_by, "residual_norm": res.residual_norm,
        "fom_residual_norm": res.fom_residual_norm, "noise_norm": res.noise_norm, "r": res.r,
        "iterations": len(res.trace) - 1, "n_samples": len(res.sample_points),
    })
    print(f"{tag}: stopped by {res.stopped_by}, residual/noise = {res.fom_residual_norm / max(res.noise_norm, 1e-300):.4f}")
    return 0


def _samples(sc, pb, cfg):
    D, _, _ = simulate_data(pb.sys_true, cfg.omegas, pb.mu_true, cfg.noise_delta, cfg.seed, cfg.solve)
    fom = FomEvaluator(pb.sys, cfg.omegas, pb.param, D, cfg.solve)
    pts, _ = select_sample_points(fom, pb.p0, cfg.n_k, cfg.tr)
    return [pb.param.mu(p) for p in pts]


def _require_sketch(cfg):
    if cfg.sketch is None:
        raise ConfigurationError("this diagnostic needs a 'sketch' section in the scenario")


def _diag_svd(sc, pb, cfg, out, opts):
    fields = _samples(sc, pb, cfg)
    cand = build_candidate_full(pb.sys, fields, cfg.omegas, cfg.solve, None, cfg.threads)
    rep = dg.singular_value_report(cand, opts.get("svd_which", "V"))
    write_csv(out / "svd.csv", ("index", "sigma"), enumerate(rep.sigma))
    write_csv(out / "svd_rank.csv", ("tol", "rank", "n_columns"), [(t, r, rep.n_columns) for t, r in rep.ranks.items()])
    print(f"{rep.n_columns} columns, {rep.decades():.2f} decades, rank@1e-8 = {rep.ranks[1e-8]}")


def _diag_angles(sc, pb, cfg, out, opts):
    _require_sketch(cfg)
    fields = _samples(sc, pb, cfg)
    full = build_global_basis(build_candidate_full(pb.sys, fields, cfg.omegas, cfg.solve, None, cfg.threads), cfg.trunc_tol)
    rand = build_global_basis(build_candidate_randomized(pb.sys, fields, cfg.omegas, cfg.sketch, cfg.solve, None,
                                                         cfg.threads), cfg.trunc_tol)
    rep = dg.canonical_angles(full.V_r, rand.V_r)
    write_csv(out / "angles.csv", ("index", "cosine"), enumerate(rep.cosines))
    frac = float(opts.get("angle_fraction", 0.9))
    print(f"r_full={full.r} r_rand={rand.r}; min cosine over leading {frac:.0%}: {rep.leading_min(frac):.6f}")


def _diag_gap(sc, pb, cfg, out, opts):
    mode = opts.get("gap_mode", "rom_full")
    res = run_inversion(pb, sc.inversion_config(mode, seed=cfg.seed, threads=cfg.threads))
    traj = [pb.param.mu(p) for p in res.iterates]
    reps = dg.subspace_gap_trace(res.basis, traj, pb.sys, float(opts.get("gap_omega", 0.0)), cfg.solve)
    write_csv(out / "gap.csv", ("iterate", "min_cosine", "mean_cosine", "dim"),
              [(k, float(r.cosines.min()), float(r.cosines.mean()), r.dims[1]) for k, r in enumerate(reps)])
    print(f"{len(reps)} iterates; smallest cosine {min(float(r.cosines.min()) for r in reps):.6f}")


def _diag_smw(sc, pb, cfg, out, opts):
    pix = opts.get("smw_pixels", [[0.1] + [0.2] * (pb.grid.dim - 1), [-0.3] + [0.1] * (pb.grid.dim - 1)])
    value = float(opts.get("smw_value", 0.5))
    k = int(opts.get("smw_k", 1))
    fields = [np.zeros(pb.sys.n)] + [dg.pixel_anomaly(pb.grid, c, k, value) for c in pix]
    rows = []
    for i in range(len(fields) - 1):
        rep = dg.smw_update_check(pb.sys, fields[i], fields[i + 1], int(opts.get("k_max", 64)))
        rows.append((i, rep.k_i, rep.k_next, rep.delta_rel, rep.residual, rep.bound, int(rep.exceeds_k_max)))
    write_csv(out / "smw.csv", ("step", "k_i", "k_next", "delta_rel", "residual", "bound", "exceeds_k_max"), rows)
    print(f"max containment residual {max(r[4] for r in rows):.3e}")


def _diag_lemma2(sc, pb, cfg, out, opts):
    counts = tuple(int(n) for n in opts.get("lemma2_nodes", (33, 65, 129)))
    seg = opts.get("lemma2_segment", [[-0.15, 0.0], [0.35, 0.0]])
    value = float(opts.get("lemma2_value", 0.5))
    ext = tuple(opts.get("lemma2_extents", (1.0, 1.0)))
    rep = dg.lemma2_trend(counts, lambda g: dg.line_anomaly(g, seg[0], seg[1], value), ext, sc.medium,
                          int(sc.layout["n_sources"]), int(sc.layout["n_detectors"]))
    write_csv(out / "lemma2.csv", ("h", "ratio", "bound"), zip(rep.h, rep.ratio, rep.bound))
    write_csv(out / "lemma2_slope.csv", ("slope",), [(rep.slope,)])
    print(f"slope {rep.slope:.4f}")


def _diag_eig(sc, pb, cfg, out, opts):
    K = int(opts.get("eig_K", 8))
    rep = dg.laplacian_eigpair_check(K)
    write_csv(out / "eig.csv", ("kx", "ky", "lambda", "residual", "norm_error"), rep.rows)
    print(f"K={K}: max residual {rep.max_residual:.3e}")


def cmd_diagnose(args) -> int:
    sc, pb, out = _setup(args)
    cfg = sc.inversion_config("fom", seed=args.seed, threads=args.threads)
    handler = {"svd": _diag_svd, "angles": _diag_angles, "gap": _diag_gap, "smw": _diag_smw,
               "lemma2": _diag_lemma2, "eig": _diag_eig}[args.which]
    handler(sc, pb, cfg, out, sc.diagnostics)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: the scenario's 'output')")
    common.add_argument("--seed", type=int, help="override the noise/sampling seed")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="romdot", description="DOT inversion with interpolatory reduced models")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="generate noisy synthetic data")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("invert", parents=[common], help="recover absorption parameters")
    s.add_argument("scenario")
    s.add_argument("--mode", choices=sorted(_MODES), default="fom")
    s.set_defaults(func=cmd_invert)
    s = sub.add_parser("diagnose", parents=[common], help="write diagnostic CSV reports")
    s.add_argument("scenario")
    s.add_argument("--which", choices=_WHICH, required=True)
    s.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"romdot: configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"romdot: {exc}", file=sys.stderr)
        return 2
    except (RomdotError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"romdot: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
