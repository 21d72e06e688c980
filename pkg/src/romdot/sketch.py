"""Random sketching matrices for simultaneous sources and detectors.

Streams are derived with ``numpy.random.SeedSequence(seed, spawn_key=...)``
where the spawn key encodes ``(i, j, side)``; PCG64 output for a given
seed sequence is fixed across platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

_SIDES = {"source": 0, "detector": 1}


@dataclass(frozen=True)
class SketchConfig:
    l_s: int
    l_d: int
    distribution: str = "rademacher"
    seed: int = 0
    fresh_per_point: bool = True

    def __post_init__(self):
        if self.distribution not in ("rademacher", "gaussian"):
            raise ConfigurationError(f"unknown sketch distribution {self.distribution!r}")
        if self.l_s < 1 or self.l_d < 1:
            raise ConfigurationError("sketch widths must be >= 1")

    def validate(self, n_s: int, n_d: int) -> None:
        if self.l_s > n_s or self.l_d > n_d:
            raise ConfigurationError(f"sketch widths ({self.l_s}, {self.l_d}) exceed source/detector counts ({n_s}, {n_d})")


def default_width(n: int) -> int:
    return min(n, max(8, math.ceil(0.25 * n)))


def stream(seed: int, point_index=(0, 0), side: str = "source", attempt: int = 0) -> np.random.Generator:
    i, j = point_index
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(i), int(j), _SIDES[side], int(attempt)))
    return np.random.Generator(np.random.PCG64(ss))


def draw_sketch(rows: int, cols: int, config: SketchConfig, point_index=(0, 0), side: str = "source") -> np.ndarray:
    """Draw a ``rows x cols`` sketch for sample pair ``point_index = (i, j)``.

    A rank-deficient draw is discarded and replaced by the next attempt of
    the same stream family, so the result stays a deterministic function of
    ``(seed, i, j, side)``.
    """
    if cols > rows:
        raise ConfigurationError(f"sketch has more columns ({cols}) than rows ({rows})")
    if not config.fresh_per_point:
        point_index = (0, 0)
    for attempt in range(64):
        rng = stream(config.seed, point_index, side, attempt)
        if config.distribution == "rademacher":
            S = 2.0 * rng.integers(0, 2, size=(rows, cols)) - 1.0
        else:
            S = rng.standard_normal((rows, cols))
        if np.linalg.matrix_rank(S) == cols:
            return S
    raise ConfigurationError(f"could not draw a full-rank {rows}x{cols} sketch")
