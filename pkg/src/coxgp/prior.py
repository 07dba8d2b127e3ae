"""Rescaled log-Gaussian priors on intensity functions over ``[0,1]^d``.

The base process is a Matérn Gaussian process with smoothness
``nu = alpha - d/2`` on a regular grid of the unit cube, realized by dense
Cholesky. A draw is ``rho(z) = link(n**(-d/(4 alpha + 2 d)) * W(z))`` with
``W`` multilinearly interpolated between grid nodes.
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, spatial, special

from .randfield import CovarianceModel, matern_cov

__all__ = [
    "LinkFunction",
    "PriorSpec",
    "IntensityFunction",
    "BasePrior",
    "LinkSaturationWarning",
    "rescale_factor",
    "apply_link",
    "inverse_link",
    "cube_nodes",
    "interpolation_weights",
    "base_prior",
    "sample_prior",
    "evaluate_intensity",
]

log = logging.getLogger(__name__)

EXP_CAP_ARG = 700.0
JITTER = 1e-10


class LinkSaturationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LinkFunction:
    kind: str = "exponential"
    lambda_max: float | None = None

    def __post_init__(self):
        if self.kind not in ("exponential", "scaled_sigmoid"):
            raise ValueError(f"unknown link {self.kind!r}")
        if self.kind == "scaled_sigmoid":
            if self.lambda_max is None or not self.lambda_max > 0:
                raise ValueError("scaled_sigmoid link needs a positive lambda_max")
        elif self.lambda_max is not None:
            raise ValueError("lambda_max only applies to the scaled_sigmoid link")

    @property
    def lipschitz(self) -> float:
        """Global Lipschitz constant (infinite for the exponential link)."""
        return math.inf if self.kind == "exponential" else self.lambda_max / 4.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda_max": self.lambda_max}


def apply_link(link: LinkFunction, v):
    """Map latent values to positive intensities.

    The exponential link saturates at ``exp(700)`` with a
    :class:`LinkSaturationWarning`.
    """
    arr = np.asarray(v, dtype=float)
    if link.kind == "exponential":
        if np.any(arr > EXP_CAP_ARG):
            warnings.warn(f"exp link saturated at exp({EXP_CAP_ARG})", LinkSaturationWarning, stacklevel=2)
            arr = np.minimum(arr, EXP_CAP_ARG)
        out = np.exp(arr)
    else:
        out = link.lambda_max * special.expit(arr)
    return float(out) if np.ndim(v) == 0 else out


def inverse_link(link: LinkFunction, y):
    arr = np.asarray(y, dtype=float)
    if link.kind == "exponential":
        out = np.log(arr)
    else:
        u = arr / link.lambda_max
        out = np.log(u) - np.log1p(-u)
    return float(out) if np.ndim(y) == 0 else out


def rescale_factor(n: float, alpha: float, d: int) -> float:
    """``n ** (-d / (4 alpha + 2 d))``."""
    if not (n > 0 and alpha > 0 and d > 0):
        raise ValueError("n, alpha and d must be positive")
    return float(n) ** (-d / (4.0 * alpha + 2.0 * d))


@dataclass(frozen=True)
class PriorSpec:
    alpha: float
    d: int = 1
    lengthscale: float = 0.2
    link: LinkFunction = field(default_factory=LinkFunction)
    cube_cells_per_axis: int = 64
    matern_nu: float | None = None

    def __post_init__(self):
        nu = self.alpha - self.d / 2.0
        if self.matern_nu is None:
            object.__setattr__(self, "matern_nu", nu)
        elif self.matern_nu != nu:
            raise ValueError(f"matern_nu must equal alpha - d/2 = {nu}, got {self.matern_nu}")
        if not self.matern_nu > 0:
            raise ValueError(f"alpha={self.alpha} must exceed d/2={self.d / 2} for a Matérn base prior")
        if self.cube_cells_per_axis < 2:
            raise ValueError("cube grid needs at least 2 nodes per axis")
        if self.cube_cells_per_axis**self.d > 4096:
            raise ValueError("cube grid limited to 4096 nodes")

    @property
    def covariance(self) -> CovarianceModel:
        return CovarianceModel(nu=self.matern_nu, lengthscale=self.lengthscale)

    @property
    def num_nodes(self) -> int:
        return self.cube_cells_per_axis**self.d


def cube_nodes(m: int, d: int) -> np.ndarray:
    """Regular grid ``{0, 1/(m-1), ..., 1}^d`` in C order, shape ``(m**d, d)``."""
    axis = np.linspace(0.0, 1.0, m)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def interpolation_weights(z, m: int, d: int):
    """Multilinear interpolation stencil on the ``m**d`` cube grid.

    Returns ``(idx, wts)`` of shape ``(k, 2**d)`` so that the interpolant of
    node values ``w`` at ``z[i]`` is ``(w[idx[i]] * wts[i]).sum()``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[-1] != d:
        raise ValueError(f"expected points in [0,1]^{d}, got dimension {z.shape[-1]}")
    u = np.clip(z, 0.0, 1.0) * (m - 1)
    lo = np.minimum(np.floor(u).astype(np.int64), m - 2)
    t = u - lo
    corners = list(itertools.product((0, 1), repeat=d))
    idx = np.empty((z.shape[0], len(corners)), dtype=np.int64)
    wts = np.empty((z.shape[0], len(corners)))
    for c, bits in enumerate(corners):
        flat = np.zeros(z.shape[0], dtype=np.int64)
        wt = np.ones(z.shape[0])
        for axis, b in enumerate(bits):
            flat = flat * m + lo[:, axis] + b
            wt = wt * (t[:, axis] if b else 1.0 - t[:, axis])
        idx[:, c] = flat
        wts[:, c] = wt
    return idx, wts


@dataclass(frozen=True, eq=False)
class IntensityFunction:
    """``rho(z) = link(scale * W(z))`` with ``W`` interpolated from node values."""

    latent: np.ndarray
    scale: float
    link: LinkFunction
    d: int = 1

    def __post_init__(self):
        m = round(self.latent.size ** (1.0 / self.d))
        if m**self.d != self.latent.size or m < 2:
            raise ValueError("latent size is not a full cube grid")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def m(self) -> int:
        return round(self.latent.size ** (1.0 / self.d))

    def latent_at(self, z) -> np.ndarray:
        idx, wts = interpolation_weights(z, self.m, self.d)
        return np.einsum("ij,ij->i", self.latent[idx], wts)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1 and self.d == 1:
            z = z[:, None]
        return apply_link(self.link, self.scale * self.latent_at(z))

    def on_nodes(self) -> np.ndarray:
        return apply_link(self.link, self.scale * self.latent)


def evaluate_intensity(rho: IntensityFunction, z) -> float:
    """Evaluate ``rho`` at one point of the cube; points outside are clamped with a warning."""
    z = np.asarray(z, dtype=float).reshape(1, rho.d)
    if np.any(z < 0) or np.any(z > 1):
        log.warning("intensity evaluated outside [0,1]^%d at %s; clamping", rho.d, z.ravel())
        z = np.clip(z, 0.0, 1.0)
    return float(rho(z)[0])


class BasePrior:
    """Cholesky-factored Matérn prior on the cube grid; immutable after construction."""

    def __init__(self, spec: PriorSpec):
        self.spec = spec
        self.nodes = cube_nodes(spec.cube_cells_per_axis, spec.d)
        dist = spatial.distance.cdist(self.nodes, self.nodes)
        K = matern_cov(dist, spec.covariance)
        try:
            L = linalg.cholesky(K, lower=True)
        except linalg.LinAlgError:
            log.warning("prior covariance not numerically PD; adding jitter %g", JITTER)
            L = linalg.cholesky(K + JITTER * np.eye(len(K)), lower=True)
        L.setflags(write=False)
        self.cov = K
        self.factor = L
        if spec.matern_nu <= 1:
            log.info("Matérn nu=%g: base draws are not C^1 (nominal smoothness < 1)", spec.matern_nu)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return self.factor @ rng.standard_normal(self.factor.shape[0])


@functools.lru_cache(maxsize=16)
def base_prior(spec: PriorSpec) -> BasePrior:
    return BasePrior(spec)


def sample_prior(spec: PriorSpec, n: float, seed: int) -> IntensityFunction:
    rng = np.random.default_rng(seed)
    w = base_prior(spec).draw(rng)
    return IntensityFunction(latent=w, scale=rescale_factor(n, spec.alpha, spec.d), link=spec.link, d=spec.d)
