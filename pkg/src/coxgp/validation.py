"""Self-checks runnable from the CLI (``coxgp validate``).

Each suite returns a list of :class:`Check` records carrying the measured
statistics; failures are report entries, never exceptions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .covariates import CovariateField, build_covariates, phi
from .coxmodel import CoxLikelihood, PointPattern, log_likelihood, sample_points, total_mass
from .inference import ChainConfig, ZeroLikelihood, run_chain
from .metrics import delta_diagnostic, empirical_distance, l1_distance
from .prior import IntensityFunction, PriorSpec, base_prior, rescale_factor, sample_prior
from .randfield import CovarianceModel, check_embedding, matern_cov, sample_field, window_from_n

__all__ = ["Check", "SUITES", "run_validate"]


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = bool(self.passed)
        return d


def _se(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(len(x)))


def _batch_se(x, batches=50) -> float:
    x = np.asarray(x, dtype=float)
    k = len(x) // batches
    return _se(x[: k * batches].reshape(batches, k).mean(axis=1))


def _within(suite, name, estimate, target, se, k=3.0) -> Check:
    ok = abs(estimate - target) <= k * se
    return Check(suite, name, ok, {"estimate": estimate, "target": target, "se": se, "k": k})


# ---------------------------------------------------------------------------


def suite_fields(replicates: int = 10_000) -> list[Check]:
    out = []
    r = np.linspace(0, 8, 801)
    for nu in (0.5, 1.5, 2.5):
        m = CovarianceModel(nu, 1.0)
        gap = float(np.max(np.abs(matern_cov(r, m) - matern_cov(r, m, closed_form=False))))
        out.append(Check("fields", f"closed_vs_bessel_nu{nu}", gap < 1e-8, {"max_abs_diff": gap}))

    model = CovarianceModel(0.5, 1.0)
    grid = window_from_n(16, 1, 32)  # spacing 0.5
    rep = check_embedding(model, grid)
    out.append(Check("fields", "exponential_embedding", rep.min_eigenvalue >= -1e-10 and rep.pad_factor_used == 1,
                     {"min_eigenvalue": rep.min_eigenvalue, "pad_factor_used": rep.pad_factor_used}))

    X = np.stack([sample_field(model, grid, s).values for s in range(replicates)])
    base = 8
    for lag in (0.0, 0.5, 1.0, 2.0):
        prod = X[:, base] * X[:, base + int(round(lag / grid.spacing))]
        out.append(_within("fields", f"covariance_lag_{lag:g}", float(prod.mean()), math.exp(-lag), _se(prod)))

    a = sample_field(model, grid, 7).values
    b = sample_field(model, grid, 7).values
    out.append(Check("fields", "seed_determinism", a.tobytes() == b.tobytes()))
    return out


def suite_covariates(replicates: int = 10_000) -> list[Check]:
    out = [
        Check("covariates", "phi_zero", phi(0.0) == 0.5, {"value": phi(0.0)}),
        Check("covariates", "phi_975", abs(phi(1.959964) - 0.975) < 1e-6, {"value": phi(1.959964)}),
    ]
    model = CovarianceModel(0.5, 1.0)
    grid = window_from_n(8, 1, 16)
    z = np.array([build_covariates([sample_field(model, grid, s)]).values[5, 0] for s in range(replicates)])
    D = float(stats.kstest(z, "uniform").statistic)
    crit = float(stats.kstwo.ppf(0.99, replicates))
    out.append(Check("covariates", "single_site_uniform", D < crit, {"ks": D, "critical_1pct": crit}))

    const = CovariateField(grid, np.full((grid.num_cells, 1), 0.5), (0,))
    ks = float(stats.kstest(const.values[:, 0], "uniform").statistic)
    out.append(Check("covariates", "point_mass_ks", ks == 0.5, {"ks": ks}))
    return out


def suite_likelihood(replicates: int = 10_000) -> list[Check]:
    out = []
    model = CovarianceModel(0.5, 1.0)
    grid = window_from_n(100, 1, 200)
    Z = build_covariates([sample_field(model, grid, 3)])
    pat = sample_points(np.full(grid.num_cells, 1.3), grid, 4)
    ll = log_likelihood(lambda z: np.ones(len(z)), pat, Z)
    out.append(Check("likelihood", "unit_rate_is_minus_n", abs(ll + 100) <= 1e-9 * 100, {"loglik": ll}))

    g3 = window_from_n(3, 1, 3)
    Z3 = CovariateField(g3, np.array([[0.2], [0.5], [0.9]]), (0,))
    table = {0.2: 0.7, 0.5: 1.9, 0.9: 3.2}
    toy = log_likelihood(lambda z: np.array([table[float(v)] for v in z[:, 0]]),
                         PointPattern(np.array([[-1.0], [1.2]]), g3), Z3)
    expected = math.log(0.7) + math.log(3.2) - 5.8
    out.append(Check("likelihood", "three_cell_toy", abs(toy - expected) < 1e-12, {"value": toy, "expected": expected}))

    spec = PriorSpec(alpha=1.0, cube_cells_per_axis=16)
    rho = sample_prior(spec, 100, 5)
    lam = rho(Z.values)
    p = sample_points(lam, grid, 6)
    c = 0.37
    shifted = IntensityFunction(rho.latent + c / rho.scale, rho.scale, rho.link)
    lhs = log_likelihood(shifted, p, Z) - log_likelihood(rho, p, Z)
    rhs = c * p.count - (math.exp(c) - 1) * total_mass(lam, grid)
    out.append(Check("likelihood", "additive_constant_identity", abs(lhs - rhs) < 1e-9, {"lhs": lhs, "rhs": rhs}))

    L = CoxLikelihood(p, Z, 16, rho.link, rho.scale)
    fast, slow = L(rho.latent), log_likelihood(rho, p, Z)
    out.append(Check("likelihood", "cached_path_agrees", math.isclose(fast, slow, rel_tol=1e-12),
                     {"cached": fast, "direct": slow}))

    ones = np.ones(grid.num_cells)
    counts = np.array([sample_points(ones, grid, 10**6 + s).count for s in range(replicates)], dtype=float)
    out.append(_within("likelihood", "poisson_mean", float(counts.mean()), 100.0, math.sqrt(100 / replicates)))
    disp = float(counts.var(ddof=1) / counts.mean())
    out.append(Check("likelihood", "poisson_dispersion", abs(disp - 1) < 0.05, {"dispersion": disp}))
    return out


def _toy_quadrature(spec, n, Z, counts, lattice=40, half_width=5.0):
    nodes = np.linspace(0, 1, 3)
    K = matern_cov(np.abs(nodes[:, None] - nodes[None, :]), spec.covariance)
    axis = np.linspace(-half_width, half_width, lattice)
    W = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    logprior = stats.multivariate_normal(np.zeros(3), K).logpdf(W)
    z = Z.values[:, 0]
    # hat-function weights of each cell on the three nodes
    H = np.stack([np.interp(z, nodes, np.eye(3)[j]) for j in range(3)], axis=1)
    V = rescale_factor(n, spec.alpha, 1) * W @ H.T
    logpost = logprior + V @ counts - Z.grid.cell_volume * np.exp(V).sum(axis=1)
    p = np.exp(logpost - logpost.max())
    p /= p.sum()
    return p @ W


def suite_sampler() -> list[Check]:
    out = []
    prior = base_prior(PriorSpec(alpha=1.0, cube_cells_per_axis=8))
    res = run_chain(ChainConfig(iterations=100_000, burn_in=2000, thinning=1), ZeroLikelihood(), prior, 1.0, 11)
    W = np.stack([s.latent for s in res.samples])
    for j in (0, 7):
        x2 = W[:, j] ** 2
        out.append(_within("sampler", f"prior_reversibility_var_node{j}", float(x2.mean()), 1.0, _batch_se(x2)))

    spec = PriorSpec(alpha=1.0, lengthscale=0.5, cube_cells_per_axis=3)
    n = 4.0
    g = window_from_n(n, 1, 8)
    Z = CovariateField(g, np.array([[0.05], [0.2], [0.3], [0.45], [0.6], [0.7], [0.85], [0.95]]), (0,))
    pattern = PointPattern(g.nodes()[[0, 1, 1, 4, 6, 6, 6, 7]], g)
    oracle = _toy_quadrature(spec, n, Z, pattern.cell_counts().astype(float))
    L = CoxLikelihood.for_prior(pattern, Z, spec, n)
    res = run_chain(ChainConfig(iterations=200_000, burn_in=5000, thinning=1), L, base_prior(spec), n, 5)
    W = np.stack([s.latent for s in res.samples])
    for j in range(3):
        out.append(_within("sampler", f"toy_posterior_mean_node{j}", float(W[:, j].mean()), float(oracle[j]),
                           _batch_se(W[:, j])))
    return out


def suite_metrics() -> list[Check]:
    out = []
    rng = np.random.default_rng(0)
    spec = PriorSpec(alpha=1.0)
    grid = window_from_n(128, 1, 512)
    Z = build_covariates([sample_field(CovarianceModel(0.5, 1.0), grid, 9)])
    worst = -math.inf
    for s in range(10):
        a, b, c = (sample_prior(spec, 50, int(rng.integers(2**32))) for _ in range(3))
        for dist in (l1_distance, lambda x, y: empirical_distance(x, y, Z)):
            worst = max(worst, dist(a, c) - dist(a, b) - dist(b, c))
    out.append(Check("metrics", "triangle_inequality", worst <= 1e-9, {"max_violation": worst}))
    out.append(Check("metrics", "constant_l1", l1_distance(3.0, 1.25) == 1.75))
    out.append(Check("metrics", "constant_empirical", empirical_distance(3.0, 1.25, Z) == 1.75))
    out.append(Check("metrics", "delta_constants_zero", delta_diagnostic(3.0, 1.25, Z) == 0.0))
    rho = sample_prior(spec, 50, 1)
    out.append(Check("metrics", "delta_identical_zero", delta_diagnostic(rho, rho, Z) == 0.0))
    lin = l1_distance(lambda z: z[:, 0], 0.0)
    out.append(Check("metrics", "linear_integral", abs(lin - 0.5) < 1e-6, {"value": lin}))
    return out


SUITES = {
    "fields": suite_fields,
    "covariates": suite_covariates,
    "likelihood": suite_likelihood,
    "sampler": suite_sampler,
    "metrics": suite_metrics,
}


def run_validate(suite: str = "all") -> list[Check]:
    if suite == "all":
        return [c for name in SUITES for c in SUITES[name]()]
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[suite]()
