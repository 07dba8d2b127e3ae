"""L1 distances on the unit cube, the covariate-weighted empirical distance,
their gap, and log-log rate regression."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .covariates import CovariateField

__all__ = [
    "RateReport",
    "DEFAULT_QUADRATURE",
    "quadrature_nodes",
    "l1_distance",
    "empirical_distance",
    "delta_diagnostic",
    "rate_regression",
    "theoretical_slope",
    "save_rate_report",
]

DEFAULT_QUADRATURE = {1: 512, 2: 128}


def quadrature_nodes(d: int, cells: int | None = None) -> np.ndarray:
    """Midpoints of a regular partition of ``[0,1]^d``, shape ``(cells**d, d)``."""
    if cells is None:
        cells = DEFAULT_QUADRATURE.get(d, 32)
    axis = (np.arange(cells) + 0.5) / cells
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def _values(f, z: np.ndarray) -> np.ndarray:
    if callable(f):
        return np.asarray(f(z), dtype=float).reshape(len(z))
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(len(z), float(arr))
    if arr.size != len(z):
        raise ValueError(f"grid function has {arr.size} values, quadrature has {len(z)}")
    return arr.ravel()


def _mean(v: np.ndarray) -> float:
    # shifted mean: exact for constant input, so constant comparisons agree bit-for-bit
    if v.size == 0:
        raise ValueError("empty quadrature")
    c = v.flat[0]
    return float(c + np.mean(v - c))


def l1_distance(rho_a, rho_b, d: int = 1, cells: int | None = None) -> float:
    """Midpoint-rule ``∫_{[0,1]^d} |rho_a - rho_b|``.

    Each argument is a callable on ``(k, d)`` arrays, a constant, or an array
    of values on :func:`quadrature_nodes`.
    """
    for f in (rho_a, rho_b):
        fd = getattr(f, "d", d)
        if fd != d:
            raise ValueError(f"function on [0,1]^{fd} compared in dimension {d}")
    z = quadrature_nodes(d, cells)
    return _mean(np.abs(_values(rho_a, z) - _values(rho_b, z)))


def empirical_distance(rho_a, rho_b, Z: CovariateField) -> float:
    """``(1/|W|) Σ_c |rho_a(Z_c) - rho_b(Z_c)| h^D`` over the covariate grid."""
    return _mean(np.abs(_values(rho_a, Z.values) - _values(rho_b, Z.values)))


def delta_diagnostic(rho_a, rho_b, Z: CovariateField, cells: int | None = None) -> float:
    """Signed gap between the L1 distance and its covariate-weighted counterpart."""
    return l1_distance(rho_a, rho_b, Z.d, cells) - empirical_distance(rho_a, rho_b, Z)


def theoretical_slope(beta: float, d: int) -> float:
    return -beta / (2.0 * beta + d)


@dataclass
class RateReport:
    n_values: list[float]
    median_errors: list[float]
    errors: list[list[float]]
    fitted_slope: float
    slope_stderr: float
    intercept: float
    beta: float
    d: int
    theoretical_slope: float = field(init=False)
    epsilon_n: list[float] = field(init=False)

    def __post_init__(self):
        if not (len(self.n_values) == len(self.median_errors) == len(self.errors)):
            raise ValueError("rate report columns differ in length")
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError("n_values must be strictly increasing")
        self.theoretical_slope = theoretical_slope(self.beta, self.d)
        self.epsilon_n = [n**self.theoretical_slope for n in self.n_values]

    @property
    def slope_gap(self) -> float:
        return self.fitted_slope - self.theoretical_slope

    def medians_strictly_decreasing(self) -> bool:
        m = self.median_errors
        return all(b < a for a, b in zip(m, m[1:]))


def rate_regression(n_values: Sequence[float], errors, beta: float, d: int) -> RateReport:
    """OLS of log(median error) on log(n).

    ``errors[i]`` is either one error or a sequence of replicate errors at
    ``n_values[i]``.
    """
    reps = [list(np.atleast_1d(np.asarray(e, dtype=float))) for e in errors]
    if len(reps) != len(n_values):
        raise ValueError("one error entry per n required")
    if len(set(n_values)) < 3:
        raise ValueError("at least 3 distinct n values required")
    if any(not (x > 0) for r in reps for x in r):
        raise ValueError("errors must be positive")
    order = np.argsort(n_values)
    n_sorted = [float(n_values[i]) for i in order]
    reps = [reps[i] for i in order]
    med = [float(np.median(r)) for r in reps]
    x = np.log(n_sorted)
    y = np.log(med)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else math.nan
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(s2 / sxx) if sxx > 0 else math.nan
    return RateReport(
        n_values=n_sorted,
        median_errors=med,
        errors=reps,
        fitted_slope=float(coef[1]),
        slope_stderr=stderr,
        intercept=float(coef[0]),
        beta=float(beta),
        d=int(d),
    )


def save_rate_report(report: RateReport, path) -> Path:
    """One row per (n, replicate), then a summary row with ``n=summary``."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "replicate", "l1_error", "median_error", "epsilon_n", "fitted_slope", "slope_stderr",
                "theoretical_slope"])
    for n, errs, med, eps in zip(report.n_values, report.errors, report.median_errors, report.epsilon_n):
        for r, e in enumerate(errs):
            w.writerow([repr(n), r, repr(e), repr(med), repr(eps), "", "", ""])
    w.writerow(["summary", "", "", "", "", repr(report.fitted_slope), repr(report.slope_stderr),
                repr(report.theoretical_slope)])
    path.write_text(buf.getvalue())
    return path
