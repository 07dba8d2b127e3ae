import math

import numpy as np
import pytest
from scipy import stats

from coxgp.covariates import CovariateField, build_covariates
from coxgp.coxmodel import (
    CoxLikelihood,
    GroundTruthSpec,
    ModelError,
    PointPattern,
    intensity_field,
    load_pattern,
    log_likelihood,
    sample_points,
    save_pattern,
    total_mass,
)
from coxgp.prior import IntensityFunction, LinkFunction, PriorSpec, sample_prior
from coxgp.randfield import CovarianceModel, sample_field, window_from_n


def _covariates(n=50.0, D=1, cells=100, d=1, seed=0):
    g = window_from_n(n, D, cells)
    model = CovarianceModel(0.5, 1.0)
    return build_covariates([sample_field(model, g, seed + h) for h in range(d)])


def const(c):
    return lambda z: np.full(np.atleast_2d(z).shape[0], float(c))


class TestIntensityField:
    def test_constant(self):
        Z = _covariates()
        assert np.all(intensity_field(const(2.5), Z) == 2.5)

    def test_exp_link_zero_latent(self):
        Z = _covariates()
        rho = IntensityFunction(np.zeros(16), 1.0, LinkFunction())
        assert np.all(intensity_field(rho, Z) == 1.0)

    def test_matches_direct(self):
        Z = _covariates()
        rho = sample_prior(PriorSpec(alpha=1.0), 50, seed=3)
        lam = intensity_field(rho, Z)
        cells = np.random.default_rng(0).choice(Z.grid.num_cells, 100)
        centers = Z.grid.nodes()[cells]
        from coxgp.covariates import covariate_lookup

        direct = rho(covariate_lookup(Z, centers))
        np.testing.assert_array_equal(lam[cells], direct)

    def test_negative_rejected(self):
        with pytest.raises(ModelError):
            intensity_field(const(-1), _covariates())
        with pytest.raises(ModelError):
            intensity_field(const(math.inf), _covariates())


class TestTotalMass:
    def test_unit(self):
        g = window_from_n(37.3, 2, 17)
        assert total_mass(np.ones(g.num_cells), g) == pytest.approx(37.3, rel=1e-9)

    def test_zero(self):
        g = window_from_n(10, 1, 10)
        assert total_mass(np.zeros(10), g) == 0

    def test_refinement(self):
        truth = GroundTruthSpec("sine", 1.0)
        g1 = window_from_n(256, 1, 2048)
        g2 = window_from_n(256, 1, 4096)
        model = CovarianceModel(0.5, 1.0)
        # same latent field at two resolutions: coarse cells average pairs of fine ones is not exact,
        # so compare the fine field against itself subsampled
        fine = sample_field(model, g2, 1)
        Zf = build_covariates([fine])
        Zc = CovariateField(g1, Zf.values[::2].copy(), Zf.latent_seeds)
        a = total_mass(intensity_field(truth, Zc), g1)
        b = total_mass(intensity_field(truth, Zf), g2)
        assert abs(a - b) / b < 0.01


class TestSamplePoints:
    def test_zero(self):
        g = window_from_n(10, 1, 10)
        assert sample_points(np.zeros(10), g, 0).count == 0

    def test_points_inside_cells(self):
        g = window_from_n(25, 2, 5)
        lam = np.arange(25, dtype=float)
        p = sample_points(lam, g, 1)
        assert np.all(g.contains(p.points))
        assert p.cell_counts()[0] == 0

    def test_deterministic(self):
        g = window_from_n(100, 1, 50)
        a = sample_points(np.ones(50), g, 9).points
        assert a.tobytes() == sample_points(np.ones(50), g, 9).points.tobytes()

    def test_poisson_mean_and_dispersion(self):
        g = window_from_n(100, 1, 200)
        counts = np.array([sample_points(np.ones(200), g, s).count for s in range(10_000)])
        se = math.sqrt(100 / 10_000)
        assert abs(counts.mean() - 100) < 3 * se
        assert abs(counts.var(ddof=1) / counts.mean() - 1) < 0.05

    def test_small_mass_chi_squared(self):
        g = window_from_n(2, 1, 4)
        lam = np.array([0.2, 0.5, 1.0, 0.3])
        mass = total_mass(lam, g)
        counts = np.array([sample_points(lam, g, s).count for s in range(10_000)])
        kmax = 4
        obs = np.array([np.sum(counts == k) for k in range(kmax)] + [np.sum(counts >= kmax)])
        p = np.append(stats.poisson.pmf(np.arange(kmax), mass), stats.poisson.sf(kmax - 1, mass))
        assert stats.chisquare(obs, p * len(counts)).pvalue > 0.001

    def test_invalid(self):
        g = window_from_n(2, 1, 2)
        with pytest.raises(ModelError):
            sample_points(np.array([1.0, math.nan]), g, 0)


class TestLogLikelihood:
    def test_unit_rate(self):
        Z = _covariates(n=64.0, cells=128)
        p = sample_points(np.full(128, 2.0), Z.grid, 4)
        assert log_likelihood(const(1.0), p, Z) == pytest.approx(-64.0, rel=1e-9)

    def test_empty_constant(self):
        Z = _covariates(n=30.0, cells=60)
        p = PointPattern(np.empty((0, 1)), Z.grid)
        assert log_likelihood(const(3.0), p, Z) == pytest.approx(-90.0, rel=1e-12)

    def test_three_cell_toy(self):
        g = window_from_n(3, 1, 3)  # cells [-1.5,-.5], [-.5,.5], [.5,1.5]
        Z = CovariateField(g, np.array([[0.2], [0.5], [0.9]]), (0,))
        table = {0.2: 0.7, 0.5: 1.9, 0.9: 3.2}
        rho = lambda z: np.array([table[float(v)] for v in np.atleast_2d(z)[:, 0]])  # noqa: E731
        p = PointPattern(np.array([[-1.0], [1.2]]), g)
        expected = math.log(0.7) + math.log(3.2) - (0.7 + 1.9 + 3.2) * 1.0
        assert log_likelihood(rho, p, Z) == pytest.approx(expected, abs=1e-12)

    def test_zero_intensity_at_point(self):
        g = window_from_n(2, 1, 2)
        Z = CovariateField(g, np.array([[0.2], [0.7]]), (0,))
        rho = lambda z: np.where(np.atleast_2d(z)[:, 0] < 0.5, 0.0, 1.0)  # noqa: E731
        assert log_likelihood(rho, PointPattern(np.array([[-0.5]]), g), Z) == -math.inf

    def test_adding_point(self):
        Z = _covariates()
        rho = sample_prior(PriorSpec(alpha=1.0), 50, seed=1)
        p = sample_points(intensity_field(rho, Z), Z.grid, 2)
        x = np.array([[3.3]])
        p2 = PointPattern(np.vstack([p.points, x]), Z.grid)
        from coxgp.covariates import covariate_lookup

        gain = math.log(rho(covariate_lookup(Z, x))[0])
        assert log_likelihood(rho, p2, Z) - log_likelihood(rho, p, Z) == pytest.approx(gain, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_additive_constant_identity(self, seed):
        Z = _covariates(seed=10 * seed)
        spec = PriorSpec(alpha=1.0, cube_cells_per_axis=16)
        rho = sample_prior(spec, 50, seed)
        p = sample_points(intensity_field(rho, Z), Z.grid, seed)
        c = np.random.default_rng(seed).normal()
        shifted = IntensityFunction(rho.latent + c / rho.scale, rho.scale, rho.link)
        integral = total_mass(intensity_field(rho, Z), Z.grid)
        lhs = log_likelihood(shifted, p, Z) - log_likelihood(rho, p, Z)
        rhs = c * p.count - (math.exp(c) - 1) * integral
        assert lhs == pytest.approx(rhs, abs=1e-9)
        L = CoxLikelihood(p, Z, 16, rho.link, rho.scale)
        assert L(shifted.latent) - L(rho.latent) == pytest.approx(rhs, abs=1e-9)


class TestCoxLikelihood:
    @pytest.mark.parametrize("d,D,link", [
        (1, 1, LinkFunction()),
        (2, 1, LinkFunction()),
        (1, 2, LinkFunction()),
        (1, 1, LinkFunction("scaled_sigmoid", 4.0)),
        (2, 2, LinkFunction("scaled_sigmoid", 3.0)),
    ])
    def test_matches_generic(self, d, D, link):
        Z = _covariates(n=40.0, D=D, cells=40 if D == 1 else 12, d=d)
        spec = PriorSpec(alpha=max(1.0, d / 2 + 0.5), d=d, link=link, cube_cells_per_axis=9)
        for seed in range(3):
            rho = sample_prior(spec, 40, seed)
            p = sample_points(intensity_field(rho, Z), Z.grid, seed + 50)
            L = CoxLikelihood.for_prior(p, Z, spec, 40)
            assert L(rho.latent) == pytest.approx(log_likelihood(rho, p, Z), rel=1e-12, abs=1e-10)


class TestGroundTruth:
    def test_beta_constraint(self):
        with pytest.raises(ValueError):
            GroundTruthSpec("sine", beta=1.0, d=1 + 2)  # beta must exceed min(1, 3/2) = 1
        GroundTruthSpec("sine", beta=0.6, d=1)

    @pytest.mark.parametrize("name", ["sine", "series", "constant"])
    def test_bounded_positive(self, name):
        t = GroundTruthSpec(name, beta=1.5, d=2)
        z = np.random.default_rng(0).random((1000, 2))
        rho = t(z)
        assert np.all(rho > 0) and np.all(np.isfinite(rho))

    def test_zero_stub(self):
        t = GroundTruthSpec("zero")
        assert np.all(t(np.linspace(0, 1, 11)) == 0)

    def test_unknown(self):
        with pytest.raises(ValueError):
            GroundTruthSpec("nope")


def test_pattern_csv_roundtrip(tmp_path):
    g = window_from_n(20, 2, 8)
    p = sample_points(np.full(64, 1.5), g, 77)
    path = save_pattern(p, tmp_path / "points.csv")
    back = load_pattern(path)
    assert back.window == g and back.seed == 77
    assert back.points.tobytes() == p.points.tobytes()
    text = path.read_text()
    assert "# seed=77" in text and "x0,x1" in text
