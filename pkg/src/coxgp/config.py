"""Experiment configuration.

Config files are flat YAML mappings whose keys are the
:class:`ExperimentConfig` field names. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .coxmodel import GROUND_TRUTHS, GroundTruthSpec
from .inference import ChainConfig
from .prior import LinkFunction, PriorSpec
from .randfield import CovarianceModel

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "DEFAULT_N_GRID"]

log = logging.getLogger(__name__)

DEFAULT_N_GRID = [2.0**k for k in range(7, 13)]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    ambient_dim: int = 1
    d: int = 1
    beta: float = 1.0
    alpha: float | None = None
    n_grid: list = field(default_factory=lambda: list(DEFAULT_N_GRID))
    replicates: int = 10
    covariate_lengthscale: float = 1.0
    covariate_nu: float = 0.5
    prior_lengthscale: float = 0.2
    link: str = "exponential"
    lambda_max: float | None = None
    ground_truth: str = "sine"
    cells_per_lengthscale: int = 8
    cube_cells_per_axis: int = 64
    quadrature_cells: int | None = None
    iterations: int = 20000
    burn_in: int = 5000
    thinning: int = 10
    target_accept: float = 0.3
    adapt_window: int = 100
    master_seed: int = 20240601

    def __post_init__(self):
        try:
            self._validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self):
        if self.ambient_dim < 1 or self.d < 1:
            raise ConfigError("ambient_dim and d must be >= 1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(self.beta))
        elif self.alpha != self.beta:
            log.warning("alpha=%g differs from beta=%g: off-theorem configuration", self.alpha, self.beta)
        grid = [float(v) for v in self.n_grid]
        if not grid or any(v <= 0 or not math.isfinite(v) for v in grid):
            raise ConfigError("n_grid entries must be positive")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("n_grid must be strictly increasing")
        object.__setattr__(self, "n_grid", grid)
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.ground_truth not in GROUND_TRUTHS:
            raise ConfigError(f"unknown ground_truth {self.ground_truth!r}")
        if self.cells_per_lengthscale < 1:
            raise ConfigError("cells_per_lengthscale must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        # construct the derived objects once so bad values fail here
        self.link_function
        self.prior_spec
        self.truth
        self.chain
        self.covariate_model

    @property
    def link_function(self) -> LinkFunction:
        return LinkFunction(self.link, self.lambda_max)

    @property
    def prior_spec(self) -> PriorSpec:
        return PriorSpec(alpha=float(self.alpha), d=self.d, lengthscale=self.prior_lengthscale,
                         link=self.link_function, cube_cells_per_axis=self.cube_cells_per_axis)

    @property
    def truth(self) -> GroundTruthSpec:
        return GroundTruthSpec(self.ground_truth, float(self.beta), self.d, self.link_function)

    @property
    def chain(self) -> ChainConfig:
        return ChainConfig(iterations=self.iterations, burn_in=self.burn_in, thinning=self.thinning,
                           target_accept=self.target_accept, adapt_window=self.adapt_window)

    @property
    def covariate_model(self) -> CovarianceModel:
        return CovarianceModel(nu=self.covariate_nu, lengthscale=self.covariate_lengthscale)

    def cells_per_axis(self, n: float) -> int:
        extent = float(n) ** (1.0 / self.ambient_dim)
        return max(1, math.ceil(extent * self.cells_per_lengthscale / self.covariate_lengthscale))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path=None, **overrides) -> ExperimentConfig:
    data = {}
    if path is not None:
        p = Path(path)
        try:
            raw = yaml.safe_load(p.read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: config must be a flat mapping")
        data.update(raw)
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**data)
