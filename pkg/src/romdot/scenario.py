"""Scenario files: a JSON tree describing one synthetic experiment."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grid import MediumParams, SourceDetectorLayout, assemble_system, build_grid, default_layout, Grid, SystemMatrices
from .inversion import InversionConfig, TrustRegionSettings
from .pals import PalsConfig, PalsParams, Parametrization, bump_grid
from .sketch import SketchConfig, default_width
from .solver import SolveConfig

_SECTIONS = {"name", "grid", "medium", "layout", "pals", "truth", "initial", "omegas", "sketch", "inversion",
             "solver", "diagnostics", "output"}


def _take(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigurationError(f"{where}: unknown key(s) {sorted(extra)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


@dataclass
class Scenario:
    name: str
    grid: dict
    medium: MediumParams
    layout: dict
    pals: PalsConfig
    truth: PalsParams
    initial: dict
    omegas: tuple
    sketch: SketchConfig | None
    inversion: dict
    solver: SolveConfig
    diagnostics: dict = field(default_factory=dict)
    output: str = "out"

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ConfigurationError("scenario must be a JSON object")
        extra = set(data) - _SECTIONS
        if extra:
            raise ConfigurationError(f"unknown scenario section(s) {sorted(extra)}")
        for key in ("grid", "layout", "truth"):
            if key not in data:
                raise ConfigurationError(f"scenario is missing the {key!r} section")
        g = dict(data["grid"])
        for key in ("dim", "nodes", "extents"):
            if key not in g:
                raise ConfigurationError(f"grid: missing {key!r}")
        med = dict(data.get("medium", {}))
        if "heterogeneity_sigma" not in med:
            med["heterogeneity_sigma"] = 0.0025 * med.get("mu_bg", MediumParams.mu_bg)
        medium = _take(MediumParams, med, "medium")
        pals = _take(PalsConfig, dict(data.get("pals", {})), "pals")
        bumps = data["truth"].get("bumps")
        if not bumps:
            raise ConfigurationError("truth: need a non-empty 'bumps' list")
        try:
            truth = PalsParams([b["alpha"] for b in bumps], [b["beta"] for b in bumps], [b["center"] for b in bumps])
        except KeyError as exc:
            raise ConfigurationError(f"truth.bumps: missing key {exc}") from exc
        lay = dict(data["layout"])
        if set(lay) - {"n_sources", "n_detectors"} or not {"n_sources", "n_detectors"} <= set(lay):
            raise ConfigurationError("layout: expected exactly 'n_sources' and 'n_detectors'")
        sk = data.get("sketch")
        if sk is not None:
            sk = dict(sk)
            sk.setdefault("l_s", default_width(lay["n_sources"]))
            sk.setdefault("l_d", default_width(lay["n_detectors"]))
            sk = _take(SketchConfig, sk, "sketch")
        omegas = tuple(float(w) for w in data.get("omegas", [0.0]))
        if not omegas:
            raise ConfigurationError("omegas must not be empty")
        solver = _take(SolveConfig, dict(data.get("solver", {})), "solver")
        return cls(name=str(data.get("name", "scenario")), grid=g, medium=medium, layout=lay, pals=pals,
                   truth=truth, initial=dict(data.get("initial", {})), omegas=omegas, sketch=sk,
                   inversion=dict(data.get("inversion", {})), solver=solver,
                   diagnostics=dict(data.get("diagnostics", {})), output=str(data.get("output", "out")))

    def inversion_config(self, mode: str, seed: int | None = None, threads: int = 1) -> InversionConfig:
        inv = dict(self.inversion)
        tr = _take(TrustRegionSettings, dict(inv.pop("tr", {})), "inversion.tr")
        allowed = {"n_k", "noise_delta", "stop_factor", "seed", "trunc_tol"}
        extra = set(inv) - allowed
        if extra:
            raise ConfigurationError(f"inversion: unknown key(s) {sorted(extra)}")
        if seed is not None:
            inv["seed"] = seed
        return InversionConfig(mode=mode, omegas=self.omegas, tr=tr, sketch=self.sketch, solve=self.solver,
                               threads=threads, **inv)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return Scenario.from_dict(data)


@dataclass(eq=False)
class Problem:
    """Everything derived from a scenario: model and data-generating systems, truth and start point."""

    grid: Grid
    layout: SourceDetectorLayout
    sys: SystemMatrices
    sys_true: SystemMatrices
    param: Parametrization
    p_true: np.ndarray
    p0: np.ndarray

    @property
    def mu_true(self) -> np.ndarray:
        return self.param.mu(self.p_true)


def build_problem(sc: Scenario) -> Problem:
    g = sc.grid
    grid = build_grid(int(g["dim"]), g["nodes"], g["extents"])
    if sc.truth.dim != grid.dim:
        raise ConfigurationError("truth bump centers do not match the grid dimension")
    layout = default_layout(grid, int(sc.layout["n_sources"]), int(sc.layout["n_detectors"]))
    sys = assemble_system(grid, sc.medium, layout)
    sys_true = assemble_system(grid, sc.medium, layout, sc.medium.background_field(grid, heterogeneous=True))
    param = Parametrization(grid, sc.pals)
    init = dict(sc.initial)
    known = {"per_axis", "alpha", "beta", "margin"}
    if set(init) - known:
        raise ConfigurationError(f"initial: unknown key(s) {sorted(set(init) - known)}")
    p0 = bump_grid(grid, int(init.get("per_axis", 2)), float(init.get("alpha", 0.2)), init.get("beta"),
                   margin=float(init.get("margin", 0.25))).to_vector()
    return Problem(grid, layout, sys, sys_true, param, sc.truth.to_vector(), p0)
