"""Diffuse optical tomography inversion accelerated by interpolatory reduced-order models."""
from .errors import (ConfigurationError, DegenerateInputError, FactorizationError, RomdotError, SolverError,
                     StructureError)
from .grid import MediumParams, SourceDetectorLayout, assemble_system, build_grid, default_layout
from .inversion import InversionConfig, InversionResult, TrustRegionSettings, run_inversion
from .pals import PalsConfig, PalsParams, Parametrization
from .rom import build_candidate_full, build_candidate_randomized, build_global_basis, reduce_operators
from .scenario import Problem, Scenario, build_problem, load_scenario
from .sketch import SketchConfig
from .solver import SolveConfig, SolveLedger

__version__ = "0.1.0"
