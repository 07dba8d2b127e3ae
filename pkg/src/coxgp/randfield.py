"""Stationary Gaussian random fields on regular grids.

Fields are simulated by circulant embedding of a Matérn covariance on a
padded torus. Grids are centred square windows of volume ``n`` in
``R^D``; field values live at cell centres.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "CovarianceModel",
    "SpatialGrid",
    "FieldRealization",
    "EmbeddingReport",
    "EmbeddingFailure",
    "ResolutionWarning",
    "matern_cov",
    "window_from_n",
    "sample_field",
    "check_embedding",
]

CLOSED_FORM_NU = (0.5, 1.5, 2.5)
CLIP_TOLERANCE = 1e-10
MAX_PAD_FACTOR = 8


class EmbeddingFailure(RuntimeError):
    """Circulant spectrum stays negative beyond tolerance after maximal padding."""

    def __init__(self, min_eigenvalue: float, pad_factor: int):
        self.min_eigenvalue = min_eigenvalue
        self.pad_factor = pad_factor
        super().__init__(
            f"circulant embedding not nonnegative definite: min eigenvalue "
            f"{min_eigenvalue:.3e} at pad factor {pad_factor}"
        )


class ResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CovarianceModel:
    """Unit-variance Matérn covariance."""

    nu: float
    lengthscale: float
    family: str = "matern"
    variance: float = 1.0

    def __post_init__(self):
        if self.family != "matern":
            raise ValueError(f"unsupported covariance family {self.family!r}")
        if self.variance != 1.0:
            raise ValueError("covariate fields are standardized: variance must be 1")
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not (self.lengthscale > 0 and math.isfinite(self.lengthscale)):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")

    def __call__(self, r):
        return matern_cov(r, self)


@dataclass(frozen=True)
class SpatialGrid:
    """Regular grid on the centred square window ``[-L/2, L/2]^D`` with ``L = n**(1/D)``.

    Cells are indexed in C order over the ``D`` axes; node coordinates are
    cell centres.
    """

    D: int
    n: float
    cells_per_axis: int

    def __post_init__(self):
        if self.D < 1:
            raise ValueError("ambient dimension must be >= 1")
        if not (self.n > 0 and math.isfinite(self.n)):
            raise ValueError(f"window volume n must be positive, got {self.n}")
        if self.cells_per_axis < 1:
            raise ValueError("cells_per_axis must be >= 1")

    @property
    def extent(self) -> float:
        return self.n ** (1.0 / self.D)

    @property
    def spacing(self) -> float:
        return self.extent / self.cells_per_axis

    @property
    def lower(self) -> float:
        return -0.5 * self.extent

    @property
    def upper(self) -> float:
        return 0.5 * self.extent

    @property
    def volume(self) -> float:
        return float(self.n)

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.D

    @property
    def num_cells(self) -> int:
        return self.cells_per_axis**self.D

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.D

    def axis_centers(self) -> np.ndarray:
        return self.lower + (np.arange(self.cells_per_axis) + 0.5) * self.spacing

    def nodes(self) -> np.ndarray:
        """Cell centres, shape ``(num_cells, D)``."""
        axes = [self.axis_centers()] * self.D
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def locate(self, x) -> np.ndarray:
        """Flat cell index for each point in ``x`` (shape ``(k, D)``)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.D:
            raise ValueError(f"expected points of dimension {self.D}, got {x.shape[-1]}")
        if not np.all(self.contains(x)):
            raise ValueError("point outside the observation window")
        idx = np.floor((x - self.lower) / self.spacing).astype(np.int64)
        np.clip(idx, 0, self.cells_per_axis - 1, out=idx)
        return np.ravel_multi_index(tuple(idx.T), self.shape)

    def to_dict(self) -> dict:
        return {"D": self.D, "n": self.n, "cells_per_axis": self.cells_per_axis}


@dataclass(frozen=True)
class FieldRealization:
    grid: SpatialGrid
    values: np.ndarray
    seed: int

    def __post_init__(self):
        if self.values.shape != (self.grid.num_cells,):
            raise ValueError("field values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


@dataclass(frozen=True)
class EmbeddingReport:
    min_eigenvalue: float
    pad_factor_used: int
    embedding_shape: tuple[int, ...]
    clipped: int


def _matern_closed(r, nu, ell):
    if nu == 0.5:
        return np.exp(-r / ell)
    if nu == 1.5:
        s = math.sqrt(3.0) * r / ell
        return (1.0 + s) * np.exp(-s)
    s = math.sqrt(5.0) * r / ell
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _matern_bessel(r, nu, ell):
    r = np.asarray(r, dtype=float)
    x = math.sqrt(2.0 * nu) * r / ell
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    coef = 2.0 ** (1.0 - nu) / special.gamma(nu)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        vals = coef * xp**nu * special.kv(nu, xp)
    # kv underflows to 0 for large argument; x**nu * 0 stays 0
    out[pos] = np.where(np.isfinite(vals), vals, 0.0)
    return out


def matern_cov(r, model: CovarianceModel, *, closed_form: bool = True):
    """Matérn covariance at distance ``r`` (scalar or array).

    Closed forms are used for ``nu`` in {1/2, 3/2, 5/2} unless
    ``closed_form=False``; otherwise the modified Bessel function of the
    second kind.
    """
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("distance must be finite")
    if np.any(arr < 0):
        raise ValueError("distance must be nonnegative")
    if closed_form and model.nu in CLOSED_FORM_NU:
        out = _matern_closed(arr, model.nu, model.lengthscale)
    else:
        out = _matern_bessel(arr, model.nu, model.lengthscale)
    out = model.variance * out
    if np.ndim(r) == 0:
        return float(out)
    return out


def window_from_n(n: float, D: int, cells_per_axis: int, lengthscale: float | None = None) -> SpatialGrid:
    """Grid over ``[-n**(1/D)/2, n**(1/D)/2]^D`` with ``cells_per_axis`` cells per axis.

    If ``lengthscale`` is given and fewer than 4 cells fall within one
    lengthscale, a :class:`ResolutionWarning` is issued.
    """
    grid = SpatialGrid(D=int(D), n=float(n), cells_per_axis=int(cells_per_axis))
    if lengthscale is not None and lengthscale / grid.spacing < 4:
        warnings.warn(
            f"{lengthscale / grid.spacing:.2f} cells per lengthscale; at least 4 recommended",
            ResolutionWarning,
            stacklevel=2,
        )
    return grid


def _torus_lags(grid: SpatialGrid, M: int) -> np.ndarray:
    j = np.arange(M)
    lag = np.minimum(j, M - j) * grid.spacing
    if grid.D == 1:
        return lag
    mesh = np.meshgrid(*([lag] * grid.D), indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


@functools.lru_cache(maxsize=64)
def _embedding(model: CovarianceModel, grid: SpatialGrid):
    m = grid.cells_per_axis
    base = max(2 * (m - 1), 1)
    pad = 1
    while True:
        M = base * pad
        c = matern_cov(_torus_lags(grid, M), model)
        lam = np.real(np.fft.fftn(c))
        lam_max = float(lam.max())
        lam_min = float(lam.min())
        if lam_min >= -CLIP_TOLERANCE * lam_max:
            clipped = int(np.count_nonzero(lam < 0))
            lam = np.where(lam < 0, 0.0, lam)
            lam.setflags(write=False)
            return lam, EmbeddingReport(lam_min, pad, lam.shape, clipped)
        if pad >= MAX_PAD_FACTOR:
            raise EmbeddingFailure(lam_min, pad)
        pad *= 2


def check_embedding(model: CovarianceModel, grid: SpatialGrid) -> EmbeddingReport:
    """Circulant spectrum diagnostics for ``(model, grid)``; never raises on negativity."""
    try:
        return _embedding(model, grid)[1]
    except EmbeddingFailure as exc:
        m = grid.cells_per_axis
        M = max(2 * (m - 1), 1) * exc.pad_factor
        return EmbeddingReport(exc.min_eigenvalue, exc.pad_factor, (M,) * grid.D, 0)


def sample_field(model: CovarianceModel, grid: SpatialGrid, seed: int) -> FieldRealization:
    """Draw one centred Gaussian field with covariance ``model`` at the grid nodes.

    Deterministic in ``(model, grid, seed)``.
    """
    lam, _ = _embedding(model, grid)
    rng = np.random.default_rng(seed)
    N = lam.size
    noise = rng.standard_normal(lam.shape) + 1j * rng.standard_normal(lam.shape)
    y = np.fft.fftn(np.sqrt(lam / N) * noise)
    crop = tuple(slice(0, grid.cells_per_axis) for _ in range(grid.D))
    values = np.ascontiguousarray(np.real(y)[crop]).ravel()
    return FieldRealization(grid=grid, values=values, seed=int(seed))
