"""Preconditioned Crank-Nicolson sampling of the latent function and
posterior summaries."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .metrics import l1_distance, quadrature_nodes
from .prior import BasePrior, IntensityFunction, cube_nodes, rescale_factor

__all__ = [
    "ChainState",
    "ChainConfig",
    "ChainResult",
    "ChainAbort",
    "CacheIncoherence",
    "PosteriorSummary",
    "ZeroLikelihood",
    "pcn_step",
    "run_chain",
    "posterior_summary",
    "save_trace",
]

log = logging.getLogger(__name__)

SPOT_CHECK_EVERY = 1000
MIN_ACCEPTANCE = 0.01


class ChainAbort(RuntimeError):
    pass


class CacheIncoherence(RuntimeError):
    pass


class ZeroLikelihood:
    """Flat likelihood; a pCN chain targeting it samples the base prior."""

    def __call__(self, w) -> float:
        return 0.0


@dataclass
class ChainState:
    latent: np.ndarray
    cached_loglik: float
    step: float = 0.2
    accepted: int = 0
    iteration: int = 0


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20000
    burn_in: int = 5000
    thinning: int = 10
    target_accept: float = 0.3
    adapt_window: int = 100
    initial_step: float = 0.2

    def __post_init__(self):
        if self.iterations <= self.burn_in:
            raise ValueError("iterations must exceed burn_in")
        if self.thinning < 1 or self.adapt_window < 1:
            raise ValueError("thinning and adapt_window must be >= 1")
        if not 0 < self.initial_step <= 1:
            raise ValueError("initial_step must lie in (0, 1]")

    @property
    def num_samples(self) -> int:
        return -(-(self.iterations - self.burn_in) // self.thinning)


def pcn_step(state: ChainState, loglik: Callable, prior: BasePrior, rng: np.random.Generator) -> bool:
    """One pCN move ``w' = sqrt(1-s^2) w + s xi``, ``xi`` a base-prior draw.

    Updates ``state`` in place and returns whether the proposal was accepted.
    """
    s = state.step
    xi = prior.draw(rng)
    proposal = math.sqrt(1.0 - s * s) * state.latent + s * xi
    ll = loglik(proposal)
    u = rng.random()
    state.iteration += 1
    if not math.isfinite(ll):
        log.debug("iteration %d: non-finite proposal log-likelihood, rejected", state.iteration)
        return False
    log_ratio = ll - state.cached_loglik
    if log_ratio >= 0 or math.log(u) < log_ratio:
        state.latent = proposal
        state.cached_loglik = ll
        state.accepted += 1
        return True
    return False


@dataclass
class ChainResult:
    samples: list[IntensityFunction]
    loglik: np.ndarray
    accepted: np.ndarray
    step: np.ndarray
    acceptance_rate: float
    final_step: float


def run_chain(
    config: ChainConfig,
    loglik: Callable,
    prior: BasePrior,
    n: float,
    seed: int,
    *,
    spot_check: Callable | None = None,
    initial: np.ndarray | None = None,
) -> ChainResult:
    """Run a pCN chain, adapting the step size during burn-in only.

    ``spot_check(latent)``, when given, recomputes the log-likelihood through
    an independent path every 1000 iterations; disagreement beyond ``1e-8``
    raises :class:`CacheIncoherence`.
    """
    rng = np.random.default_rng(seed)
    spec = prior.spec
    scale = rescale_factor(n, spec.alpha, spec.d)
    w0 = np.zeros(prior.factor.shape[0]) if initial is None else np.array(initial, dtype=float)
    ll0 = loglik(w0)
    if not math.isfinite(ll0):
        raise ChainAbort("initial state has non-finite log-likelihood")
    state = ChainState(latent=w0, cached_loglik=ll0, step=config.initial_step)

    T = config.iterations
    trace_ll = np.empty(T)
    trace_acc = np.zeros(T, dtype=bool)
    trace_step = np.empty(T)
    samples: list[IntensityFunction] = []
    window_acc = 0
    for it in range(T):
        acc = pcn_step(state, loglik, prior, rng)
        trace_ll[it] = state.cached_loglik
        trace_acc[it] = acc
        trace_step[it] = state.step
        if it < config.burn_in:
            window_acc += acc
            if (it + 1) % config.adapt_window == 0:
                rate = window_acc / config.adapt_window
                factor = 1.1 if rate > config.target_accept else 0.9
                state.step = min(1.0, state.step * factor)
                window_acc = 0
        elif (it - config.burn_in) % config.thinning == 0:
            samples.append(IntensityFunction(latent=state.latent.copy(), scale=scale, link=spec.link, d=spec.d))
        if spot_check is not None and (it + 1) % SPOT_CHECK_EVERY == 0:
            ref = spot_check(state.latent)
            if not math.isclose(ref, state.cached_loglik, rel_tol=1e-8, abs_tol=1e-8):
                raise CacheIncoherence(
                    f"iteration {it + 1}: cached log-likelihood {state.cached_loglik!r} != recomputed {ref!r}"
                )

    post = trace_acc[config.burn_in :]
    rate = float(post.mean())
    if rate < MIN_ACCEPTANCE:
        raise ChainAbort(
            f"post-burn-in acceptance {rate:.4f} below {MIN_ACCEPTANCE}; final step {state.step:.3g}"
        )
    return ChainResult(samples, trace_ll, trace_acc, trace_step, rate, state.step)


def save_trace(result: ChainResult, path) -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "loglik", "accepted", "step"])
    for i, (ll, a, s) in enumerate(zip(result.loglik, result.accepted, result.step), start=1):
        w.writerow([i, repr(float(ll)), int(a), repr(float(s))])
    path.write_text(buf.getvalue())
    return path


@dataclass
class PosteriorSummary:
    nodes: np.ndarray
    mean_latent: np.ndarray
    mean_intensity: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    credible_l1_radius: float
    num_samples: int
    l1_error_of_mean: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "nodes": self.nodes.tolist(),
            "mean_latent": self.mean_latent.tolist(),
            "mean_intensity": self.mean_intensity.tolist(),
            "q05": self.q05.tolist(),
            "q95": self.q95.tolist(),
            "credible_l1_radius": self.credible_l1_radius,
            "num_samples": self.num_samples,
            "extras": self.extras,
        }
        if self.l1_error_of_mean is not None:
            out["l1_error_of_mean"] = self.l1_error_of_mean
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PosteriorSummary":
        arr = lambda k: np.asarray(data[k], dtype=float)  # noqa: E731
        return cls(
            nodes=arr("nodes"),
            mean_latent=arr("mean_latent"),
            mean_intensity=arr("mean_intensity"),
            q05=arr("q05"),
            q95=arr("q95"),
            credible_l1_radius=float(data["credible_l1_radius"]),
            num_samples=int(data["num_samples"]),
            l1_error_of_mean=data.get("l1_error_of_mean"),
            extras=dict(data.get("extras", {})),
        )


def posterior_summary(
    samples: Sequence[IntensityFunction],
    truth: Callable | None = None,
    *,
    quadrature_cells: int | None = None,
    min_samples: int = 50,
    credible_level: float = 0.9,
) -> PosteriorSummary:
    """Posterior mean, 5%/95% bands on the cube grid, and L1 functionals.

    The posterior mean intensity is the average of the sampled intensity
    functions. The credible radius is the smallest ``r`` such that at least
    ``credible_level`` of the samples lie within L1 distance ``r`` of it.
    """
    if len(samples) < min_samples:
        raise ValueError(f"posterior summary needs at least {min_samples} samples, got {len(samples)}")
    first = samples[0]
    d = first.d
    latents = np.stack([s.latent for s in samples])
    node_vals = np.stack([s.on_nodes() for s in samples])
    z = quadrature_nodes(d, quadrature_cells)
    quad_vals = np.stack([s(z) for s in samples])
    mean_quad = quad_vals.mean(axis=0)

    dists = np.mean(np.abs(quad_vals - mean_quad), axis=1)
    k = math.ceil(credible_level * len(samples))
    radius = float(np.sort(dists)[k - 1])

    l1_err = None
    if truth is not None:
        l1_err = l1_distance(mean_quad, truth, d, quadrature_cells)

    return PosteriorSummary(
        nodes=cube_nodes(first.m, d),
        mean_latent=latents.mean(axis=0),
        mean_intensity=node_vals.mean(axis=0),
        q05=np.quantile(node_vals, 0.05, axis=0),
        q95=np.quantile(node_vals, 0.95, axis=0),
        credible_l1_radius=radius,
        num_samples=len(samples),
        l1_error_of_mean=l1_err,
    )
