"""Observed covariates: normal-CDF transforms of latent Gaussian fields.

Binary container layout (``.cvf``), all integers little-endian::

    bytes 0..3    magic b"CVF1"
    bytes 4..7    uint32 header length H
    bytes 8..8+H  UTF-8 JSON header: {"D", "n", "cells_per_axis", "d",
                  "latent_seeds", "clamped", "dtype": "<f8"}
    remainder     num_cells * d float64 values, little-endian, C order
                  (cell index major, channel minor)
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special, stats

from .randfield import FieldRealization, SpatialGrid

__all__ = [
    "CovariateField",
    "ErgodicityReport",
    "phi",
    "build_covariates",
    "covariate_lookup",
    "ergodicity_diagnostic",
    "save_covariates",
    "load_covariates",
]

log = logging.getLogger(__name__)

EPS = 1e-15
MAGIC = b"CVF1"


def phi(x):
    """Standard normal CDF. Raises ``ValueError`` on non-finite input."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("phi requires finite input")
    out = special.ndtr(arr)
    return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class CovariateField:
    grid: SpatialGrid
    values: np.ndarray  # (num_cells, d)
    latent_seeds: tuple[int, ...]
    clamped: int = 0

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.num_cells:
            raise ValueError("covariate array must have shape (num_cells, d)")
        if not (np.all(self.values > 0) and np.all(self.values < 1)):
            raise ValueError("covariate values must lie strictly inside (0, 1)")
        if len(self.latent_seeds) != self.d:
            raise ValueError("one latent seed per channel required")
        self.values.setflags(write=False)

    @property
    def d(self) -> int:
        return self.values.shape[1]


def build_covariates(latents: list[FieldRealization]) -> CovariateField:
    """Apply ``phi`` channel-wise to ``d`` latent fields sharing one grid."""
    if not latents:
        raise ValueError("at least one latent field required")
    grid = latents[0].grid
    for f in latents[1:]:
        if f.grid != grid:
            raise ValueError("latent fields live on different grids")
    z = np.stack([phi(f.values) for f in latents], axis=1)
    n_clamped = int(np.count_nonzero((z < EPS) | (z > 1 - EPS)))
    if n_clamped:
        log.info("clamped %d covariate values to [%g, 1-%g]", n_clamped, EPS, EPS)
        z = np.clip(z, EPS, 1 - EPS)
    return CovariateField(grid=grid, values=z, latent_seeds=tuple(f.seed for f in latents), clamped=n_clamped)


def covariate_lookup(field: CovariateField, x) -> np.ndarray:
    """Covariate value of the cell containing each point (piecewise constant).

    ``x`` is a single point of shape ``(D,)`` or an array ``(k, D)``.
    """
    xa = np.asarray(x, dtype=float)
    idx = field.grid.locate(xa)
    out = field.values[idx]
    return out[0] if xa.ndim == 1 else out


@dataclass(frozen=True)
class ErgodicityReport:
    ks_per_channel: tuple[float, ...]
    spatial_mean_drift: float
    drift_per_channel: tuple[float, ...]


def ergodicity_diagnostic(field: CovariateField) -> ErgodicityReport:
    """KS distance of each channel's spatial distribution to Uniform(0,1), and
    the difference of channel means between the lower and upper halves of the
    window along the first axis."""
    ks = tuple(float(stats.kstest(field.values[:, h], "uniform").statistic) for h in range(field.d))
    x0 = field.grid.nodes()[:, 0]
    lower = x0 < 0
    if lower.all() or not lower.any():
        drift = tuple(0.0 for _ in range(field.d))
    else:
        drift = tuple(
            float(field.values[lower, h].mean() - field.values[~lower, h].mean()) for h in range(field.d)
        )
    worst = max(drift, key=abs)
    return ErgodicityReport(ks_per_channel=ks, spatial_mean_drift=worst, drift_per_channel=drift)


def save_covariates(field: CovariateField, path) -> Path:
    path = Path(path)
    header = dict(field.grid.to_dict(), d=field.d, latent_seeds=list(field.latent_seeds),
                  clamped=field.clamped, dtype="<f8")
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    return path


def load_covariates(path) -> CovariateField:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a covariate container")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    grid = SpatialGrid(D=header["D"], n=header["n"], cells_per_axis=header["cells_per_axis"])
    payload = np.frombuffer(data[8 + hlen :], dtype="<f8")
    if payload.size != grid.num_cells * header["d"]:
        raise ValueError(f"{path}: payload has {payload.size} values, expected {grid.num_cells * header['d']}")
    values = payload.astype(float).reshape(grid.num_cells, header["d"])
    return CovariateField(grid=grid, values=values, latent_seeds=tuple(header["latent_seeds"]),
                          clamped=header.get("clamped", 0))
