"""Covariate-driven Poisson point patterns and their log-likelihood.

Intensities are piecewise constant on the covariate grid: cell ``c``
carries ``lambda_c = rho(Z_c)``. The log-likelihood is taken relative to the
unit-rate Poisson process,

    l(rho) = sum_i log rho(Z(X_i)) - sum_c rho(Z_c) * h**D,

so ``rho == 1`` gives ``-n``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .covariates import CovariateField
from .prior import LinkFunction, apply_link, interpolation_weights, rescale_factor
from .randfield import SpatialGrid

__all__ = [
    "ModelError",
    "PointPattern",
    "GroundTruthSpec",
    "CoxLikelihood",
    "GROUND_TRUTHS",
    "intensity_field",
    "total_mass",
    "sample_points",
    "log_likelihood",
    "save_pattern",
    "load_pattern",
]

log = logging.getLogger(__name__)

RHO_CAP = 1e6


class ModelError(ValueError):
    """Intensity negative or non-finite where a valid intensity is required."""


@dataclass(frozen=True, eq=False)
class PointPattern:
    points: np.ndarray  # (count, D)
    window: SpatialGrid
    seed: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.window.D)
        object.__setattr__(self, "points", pts)
        if len(pts) and not np.all(self.window.contains(pts)):
            raise ValueError("pattern has points outside the window")

    @property
    def count(self) -> int:
        return len(self.points)

    def cell_counts(self) -> np.ndarray:
        counts = np.zeros(self.window.num_cells, dtype=np.int64)
        if self.count:
            np.add.at(counts, self.window.locate(self.points), 1)
        return counts


# ---------------------------------------------------------------------------
# ground truths


def _w_sine(z, beta):
    return np.prod(np.sin(2 * np.pi * z), axis=-1)


def _w_series(z, beta, levels=8):
    # lacunary cosine series, level-j coefficient 2^{-j(beta+1/2)} on 2^{j/2}-normalized atoms
    out = np.zeros(z.shape[0])
    for j in range(levels + 1):
        coef = 2.0 ** (-j * (beta + 0.5)) * 2.0 ** (j / 2)
        out += coef * np.cos(2 * np.pi * 2**j * z).sum(axis=-1)
    return out


def _w_zero(z, beta):
    return np.full(z.shape[0], -np.inf)


def _w_constant(z, beta):
    return np.zeros(z.shape[0])


GROUND_TRUTHS: dict[str, Callable] = {
    "sine": _w_sine,
    "series": _w_series,
    "constant": _w_constant,
    "zero": _w_zero,  # test stub: rho0 == 0, no points
}


@dataclass(frozen=True)
class GroundTruthSpec:
    """Named truth ``rho0 = link(w0)`` with nominal smoothness ``beta``."""

    name: str = "sine"
    beta: float = 1.0
    d: int = 1
    link: LinkFunction = field(default_factory=LinkFunction)

    def __post_init__(self):
        if self.name not in GROUND_TRUTHS:
            raise ValueError(f"unknown ground truth {self.name!r}; choose from {sorted(GROUND_TRUTHS)}")
        if not self.beta > min(1.0, self.d / 2.0):
            raise ValueError(f"beta={self.beta} must exceed min(1, d/2)={min(1.0, self.d / 2.0)}")

    @property
    def is_stub(self) -> bool:
        return self.name == "zero"

    def w0(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1 and self.d == 1:
            z = z[:, None]
        return GROUND_TRUTHS[self.name](z, self.beta)

    def __call__(self, z) -> np.ndarray:
        w = self.w0(z)
        if self.is_stub:
            return np.zeros_like(w)
        rho = apply_link(self.link, w)
        if np.any(rho > RHO_CAP):
            log.warning("ground-truth intensity capped at %g", RHO_CAP)
            rho = np.minimum(rho, RHO_CAP)
        return rho

    def to_dict(self) -> dict:
        return {"name": self.name, "beta": self.beta, "d": self.d, "link": self.link.to_dict()}


# ---------------------------------------------------------------------------
# sampling


def intensity_field(rho: Callable, Z: CovariateField) -> np.ndarray:
    """Per-cell intensity ``rho(Z_c)``."""
    lam = np.asarray(rho(Z.values), dtype=float).reshape(Z.grid.num_cells)
    if not np.all(np.isfinite(lam)):
        raise ModelError("intensity is not finite")
    if np.any(lam < 0):
        raise ModelError("intensity is negative")
    return lam


def total_mass(intensity: np.ndarray, grid: SpatialGrid) -> float:
    return float(np.sum(intensity) * grid.cell_volume)


def sample_points(intensity: np.ndarray, grid: SpatialGrid, seed: int) -> PointPattern:
    """Independent Poisson counts per cell, points uniform within each cell."""
    intensity = np.asarray(intensity, dtype=float)
    if not np.all(np.isfinite(intensity)):
        raise ModelError("intensity is not finite")
    if np.any(intensity < 0):
        raise ModelError("intensity is negative")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(intensity * grid.cell_volume)
    cells = np.repeat(np.arange(grid.num_cells), counts)
    corner = np.stack(np.unravel_index(cells, grid.shape), axis=-1) * grid.spacing + grid.lower
    pts = corner + grid.spacing * rng.random((len(cells), grid.D))
    np.clip(pts, grid.lower, grid.upper, out=pts)
    return PointPattern(points=pts, window=grid, seed=int(seed))


# ---------------------------------------------------------------------------
# likelihood


def log_likelihood(rho: Callable, pattern: PointPattern, Z: CovariateField) -> float:
    """Log-likelihood of ``pattern`` relative to the unit-rate Poisson process."""
    if pattern.window != Z.grid:
        raise ValueError("pattern window and covariate grid differ")
    lam = intensity_field(rho, Z)
    integral = total_mass(lam, Z.grid)
    if pattern.count == 0:
        return -integral
    at_points = lam[Z.grid.locate(pattern.points)]
    if np.any(at_points == 0):
        return -math.inf
    return float(np.sum(np.log(at_points)) - integral)


class CoxLikelihood:
    """Log-likelihood as a function of cube-grid latent values.

    Caches, per covariate cell, the point count and the interpolation
    stencil into the prior's cube grid, so one evaluation costs one gather
    and one link evaluation per cell.
    """

    def __init__(self, pattern: PointPattern, Z: CovariateField, m: int, link: LinkFunction, scale: float):
        if pattern.window != Z.grid:
            raise ValueError("pattern window and covariate grid differ")
        self.pattern = pattern
        self.Z = Z
        self.m = m
        self.link = link
        self.scale = float(scale)
        self.cell_volume = Z.grid.cell_volume
        counts = pattern.cell_counts()
        idx, wts = interpolation_weights(Z.values, m, Z.d)
        self.counts = counts.astype(float)
        self.occupied = counts > 0
        self.idx = idx
        self.wts = wts
        if Z.d == 1:
            self._lo = np.ascontiguousarray(idx[:, 0])
            self._t = np.ascontiguousarray(wts[:, 1])

    @classmethod
    def for_prior(cls, pattern, Z, spec, n):
        return cls(pattern, Z, spec.cube_cells_per_axis, spec.link, rescale_factor(n, spec.alpha, spec.d))

    def _cell_latent(self, w: np.ndarray) -> np.ndarray:
        if self.Z.d == 1:
            a = w[self._lo]
            return a + self._t * (w[self._lo + 1] - a)
        return np.einsum("ij,ij->i", w[self.idx], self.wts)

    def __call__(self, w: np.ndarray) -> float:
        v = self.scale * self._cell_latent(w)
        if self.link.kind == "exponential":
            if v.max() > 700.0:
                return -math.inf
            return float(self.counts @ v - self.cell_volume * np.exp(v).sum())
        lam = apply_link(self.link, v)
        if np.any(lam[self.occupied] == 0):
            return -math.inf
        with np.errstate(divide="ignore"):
            logs = np.where(self.occupied, np.log(lam), 0.0)
        return float(self.counts @ logs - self.cell_volume * lam.sum())


# ---------------------------------------------------------------------------
# persistence


def save_pattern(pattern: PointPattern, path) -> Path:
    """CSV: ``# key=value`` metadata lines, a header row, then one row per point."""
    path = Path(path)
    g = pattern.window
    buf = io.StringIO()
    buf.write(f"# D={g.D}\n# n={g.n!r}\n# cells_per_axis={g.cells_per_axis}\n")
    buf.write(f"# lower={g.lower!r}\n# upper={g.upper!r}\n# seed={pattern.seed}\n# count={pattern.count}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(g.D)])
    for p in pattern.points:
        w.writerow([repr(float(c)) for c in p])
    path.write_text(buf.getvalue())
    return path


def load_pattern(path) -> PointPattern:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            else:
                rows.append(line)
    reader = csv.reader(rows)
    next(reader)
    D = int(meta["D"])
    grid = SpatialGrid(D=D, n=float(meta["n"]), cells_per_axis=int(meta["cells_per_axis"]))
    pts = np.array([[float(c) for c in r] for r in reader], dtype=float).reshape(-1, D)
    seed = None if meta.get("seed", "None") == "None" else int(meta["seed"])
    return PointPattern(points=pts, window=grid, seed=seed)
