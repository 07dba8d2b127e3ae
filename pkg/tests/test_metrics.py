import math

import numpy as np
import pytest

from coxgp.covariates import build_covariates
from coxgp.coxmodel import GroundTruthSpec
from coxgp.metrics import (
    delta_diagnostic,
    empirical_distance,
    l1_distance,
    quadrature_nodes,
    rate_regression,
    save_rate_report,
)
from coxgp.prior import IntensityFunction, LinkFunction, PriorSpec, sample_prior
from coxgp.randfield import CovarianceModel, sample_field, window_from_n


def _Z(n, seed, cells_per_unit=4, ell=1.0):
    g = window_from_n(n, 1, int(cells_per_unit * n))
    return build_covariates([sample_field(CovarianceModel(0.5, ell), g, seed)])


class TestL1:
    def test_constants(self):
        assert l1_distance(2.5, 0.75) == 1.75
        assert l1_distance(lambda z: np.full(len(z), 3.0), 1.0, d=2) == 2.0

    def test_identical(self):
        rho = sample_prior(PriorSpec(alpha=1.0), 10, 1)
        assert l1_distance(rho, rho) == 0.0

    def test_linear(self):
        assert l1_distance(lambda z: z[:, 0], 0.0) == pytest.approx(0.5, abs=1e-6)

    def test_refinement_doubling(self):
        truth = GroundTruthSpec("sine")
        rho = sample_prior(PriorSpec(alpha=1.0), 100, 3)
        a = l1_distance(rho, truth)
        b = l1_distance(rho, truth, cells=1024)
        assert abs(a - b) < 1e-4

    def test_dimension_mismatch(self):
        rho = IntensityFunction(np.zeros(9), 1.0, LinkFunction(), d=2)
        with pytest.raises(ValueError):
            l1_distance(rho, 1.0, d=1)

    def test_grid_function(self):
        z = quadrature_nodes(1)
        assert l1_distance(z[:, 0], 0.0) == pytest.approx(0.5, abs=1e-12)


class TestMetricAxioms:
    @pytest.mark.parametrize("seed", range(10))
    def test_triangle_symmetry(self, seed):
        spec = PriorSpec(alpha=1.0)
        a, b, c = (sample_prior(spec, 50, 3 * seed + k) for k in range(3))
        Z = _Z(64, seed)
        for dist in (lambda x, y: l1_distance(x, y), lambda x, y: empirical_distance(x, y, Z)):
            ab, bc, ac = dist(a, b), dist(b, c), dist(a, c)
            assert ab >= 0 and dist(b, a) == pytest.approx(ab, abs=1e-12)
            assert ac <= ab + bc + 1e-9

    @pytest.mark.parametrize("seed", range(10))
    def test_empirical_below_sup(self, seed):
        spec = PriorSpec(alpha=1.0)
        a, b = sample_prior(spec, 50, seed), sample_prior(spec, 50, seed + 100)
        Z = _Z(64, seed)
        sup = np.max(np.abs(a(Z.values) - b(Z.values)))
        assert empirical_distance(a, b, Z) <= sup + 1e-12


class TestEmpirical:
    def test_constants_any_Z(self):
        for seed in range(3):
            assert empirical_distance(4.0, 1.5, _Z(32, seed)) == 2.5

    def test_identical(self):
        rho = sample_prior(PriorSpec(alpha=1.0), 10, 1)
        assert empirical_distance(rho, rho, _Z(32, 0)) == 0.0

    def test_converges_to_l1(self):
        a = GroundTruthSpec("sine")
        b = lambda z: np.exp(0.5 * np.cos(2 * np.pi * z[:, 0]))  # noqa: E731
        target = l1_distance(a, b)
        med = []
        for n in (2**8, 2**10, 2**12):
            med.append(np.median([abs(empirical_distance(a, b, _Z(n, 31 * n + r)) - target) for r in range(20)]))
        assert med[0] > med[1] > med[2]


class TestDelta:
    def test_constants_exact(self):
        Z = _Z(50, 2)
        assert delta_diagnostic(0.3, 7.1, Z) == 0.0

    def test_identical_exact(self):
        rho = sample_prior(PriorSpec(alpha=1.0), 10, 1)
        assert delta_diagnostic(rho, rho, _Z(50, 2)) == 0.0

    def test_signed(self):
        a = GroundTruthSpec("sine")
        Z = _Z(64, 5)
        assert delta_diagnostic(a, 1.0, Z) == pytest.approx(l1_distance(a, 1.0) - empirical_distance(a, 1.0, Z))


class TestRateRegression:
    def test_exact_power_law(self):
        ns = [2.0**k for k in range(7, 13)]
        rep = rate_regression(ns, [3.7 * n ** (-1 / 3) for n in ns], beta=1.0, d=1)
        assert rep.fitted_slope == pytest.approx(-1 / 3, abs=1e-12)
        assert rep.slope_stderr < 1e-10

    @pytest.mark.parametrize("beta,d", [(1.0, 1), (2.0, 2)])
    def test_theoretical(self, beta, d):
        rep = rate_regression([1, 2, 4], [1, 0.5, 0.25], beta, d)
        assert rep.theoretical_slope == -1 / 3

    def test_epsilon(self):
        rep = rate_regression([64, 128, 256], [1, 0.5, 0.25], 1.0, 1)
        assert rep.epsilon_n[0] == pytest.approx(0.25, rel=1e-14)

    def test_medians_used(self):
        rep = rate_regression([10, 20, 40], [[1, 5, 2], [1, 1, 3], [0.5]], 1.0, 1)
        assert rep.median_errors == [2.0, 1.0, 0.5]

    def test_errors(self):
        with pytest.raises(ValueError):
            rate_regression([1, 2, 4], [1, 0, 1], 1.0, 1)
        with pytest.raises(ValueError):
            rate_regression([1, 1, 2], [1, 1, 1], 1.0, 1)

    def test_csv(self, tmp_path):
        rep = rate_regression([10, 20, 40], [[1, 2], [0.8, 0.7], [0.5, 0.4]], 1.0, 1)
        lines = save_rate_report(rep, tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 1 + 6 + 1
        assert lines[-1].startswith("summary,")
        assert float(lines[-1].split(",")[-1]) == -1 / 3
        assert math.isclose(float(lines[-1].split(",")[5]), rep.fitted_slope)
