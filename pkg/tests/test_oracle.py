import math

import numpy as np
import pytest
from scipy import integrate

from aesbo import acquisition as acq
from aesbo import gp, oracle
from aesbo.errors import InsufficientSamplesError, InvalidArgumentError
from aesbo.sampling import OptimumSample

SMALL = oracle.OracleConfig(num_solution_samples=10, num_function_draws=4000, grid_size=60,
                            quadrature_points=128)


def demo_model(noise=0.0, seed=0):
    return oracle.demo_problem(oracle.LandscapeSetup(noise_variance=noise), seed)[0]


class TestLocalMaxima:
    @pytest.mark.parametrize("values, want", [
        ([0, 1, 0], 1),
        ([1, 0, 1], 0),
        ([0, 1, 0, 1, 0], 2),
        ([0, 1, 1, 1, 0], 1),
        ([0, 1, 1, 2, 0], 1),
        ([3, 3, 3], 0),
        ([0, 1, 2, 3], 0),
    ])
    def test_counts(self, values, want):
        assert oracle.count_local_maxima(values) == want

    def test_sine(self):
        x = np.linspace(0, 10 * np.pi, 1000)
        assert oracle.count_local_maxima(np.sin(x)) == 5

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            oracle.count_local_maxima([1, 2])


class TestDraws:
    def test_moments(self):
        model = demo_model()
        grid = np.linspace(-5, 5, 25)
        pool = oracle.posterior_draws(model, grid, 20000, seed=1)
        pred = gp.predict(model, grid[:, None])
        np.testing.assert_allclose(pool.values.mean(0), pred.mean, atol=0.03)
        np.testing.assert_allclose(pool.values.var(0), pred.variance, atol=0.03)

    def test_solution_samples_are_grid_maxima(self):
        model = demo_model()
        grid = np.linspace(-5, 5, 50)
        samples = oracle.solution_samples(model, grid, 20, seed=2)
        pool = oracle.posterior_draws(model, grid, 20, seed=2)
        assert [s.y_star for s in samples] == list(pool.max_y)
        assert all(s.x_star[0] in grid for s in samples)

    def test_needs_1d(self):
        model = gp.prior_model([[0, 1], [0, 1]], gp.GpHyperparams([1.0, 1.0], 1.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            oracle.posterior_draws(model, [0.5], 10)


class TestCompatibility:
    def pool(self):
        return oracle.DrawPool(np.array([0.0, 1.0]), np.array([[1.0, 0.0]] * 40 + [[0.0, 5.0]] * 5))

    def test_filters(self):
        idx = oracle.compatible_indices(self.pool(), OptimumSample(np.array([0.0]), 1.0), 0.1, 0.1)
        assert len(idx) == 40 and idx.max() == 39

    def test_widening(self):
        # y* is 0.35 away: tolerance 0.1 -> 0.2 -> 0.4 admits the draws
        idx = oracle.compatible_indices(self.pool(), OptimumSample(np.array([0.0]), 1.35), 0.1, 0.1)
        assert len(idx) == 40

    def test_insufficient(self):
        with pytest.raises(InsufficientSamplesError):
            oracle.compatible_indices(self.pool(), OptimumSample(np.array([1.0]), 5.0), 0.1, 0.1)


class TestOracle:
    def test_conditional_density_normalized(self):
        model = demo_model()
        s = oracle.solution_samples(model, np.linspace(-5, 5, SMALL.grid_size), 1, seed=3)[0]
        dens = oracle.oracle_conditional_density(model, s, 0.5, SMALL, noise_variance=0.01)
        assert integrate.trapezoid(dens(dens.ygrid), dens.ygrid) == pytest.approx(1.0, abs=1e-3)
        assert dens.mean() <= s.y_star + 1e-9

    def test_uninformative_sample_gives_zero(self):
        # Tolerances wider than the draws: every draw is compatible, so the
        # conditional equals the marginal (up to KDE smoothing).
        model = demo_model(noise=0.1)
        cfg = oracle.OracleConfig(num_function_draws=4000, grid_size=40, tol_x=10.0, tol_y=100.0,
                                  max_kde_points=4000)
        res = oracle.oracle_aes_grid(model, [OptimumSample(np.array([0.0]), 0.0)], [0.5], cfg, 0.1)
        assert np.max(np.abs(res.values)) < 0.02

    def test_matches_approximation_roughly(self):
        model = demo_model(noise=0.0, seed=1)
        samples = oracle.solution_samples(model, np.linspace(-5, 5, SMALL.grid_size), 10, seed=4)
        res = oracle.oracle_aes_grid(model, samples, [0.5], SMALL, 1e-8)
        ctx = acq.build_context(model, samples, 1e-8)
        approx = acq.aes_values(ctx, res.grid[:, None], [0.5])[:, 0]
        assert np.corrcoef(approx, res.values[:, 0])[0, 1] > 0.8

    def test_oracle_aes_point(self):
        model = demo_model(noise=0.1)
        samples = oracle.solution_samples(model, np.linspace(-5, 5, SMALL.grid_size), 5, seed=5)
        v = oracle.oracle_aes(model, 1.0, 0.5, SMALL, 0.1, samples)
        assert v >= 0 and math.isfinite(v)

    def test_bad_config(self):
        with pytest.raises(InvalidArgumentError):
            oracle.OracleConfig(tol_x=0)
        with pytest.raises(InvalidArgumentError):
            oracle.OracleConfig(bandwidth="scott")
        with pytest.raises(InvalidArgumentError):
            oracle.OracleConfig(quadrature_points=10)

    def test_compare_shapes(self):
        cfg = oracle.OracleConfig(num_solution_samples=8, num_function_draws=3000, grid_size=40,
                                  quadrature_points=96)
        setup = oracle.LandscapeSetup(alphas=(0.2, 0.5, 0.8), raw_candidates=20)
        comp = oracle.oracle_compare(setup, (0.2, 0.5, 0.8), cfg, seed=0)
        assert comp.labels == ["aes:0.2", "aes:0.5", "aes:0.8", "ensemble"]
        assert comp.approximate.shape == comp.oracle.shape == (40, 4)
        assert np.all((comp.fraction_below >= 0) & (comp.fraction_below <= 1))


def test_mutual_information_identity():
    model = demo_model(noise=0.1)
    h, k = oracle.discretized_mutual_information(model, 0.3, 0.1, num_draws=2000, seed=0)
    assert h > 0 and abs(h - k) < 1e-3
    with pytest.raises(InvalidArgumentError):
        oracle.discretized_mutual_information(model, 0.3, 0.0)


class TestLandscape:
    SETUP = oracle.LandscapeSetup(num_samples=4, num_features=256, grid_size=200, alphas=(0.1, 0.5, 0.9),
                                  raw_candidates=30)

    def test_report(self):
        rep = oracle.landscape(self.SETUP, seed=0)
        assert set(rep.values_per_method) == {"jes", "ensemble"}
        for k, v in rep.values_per_method.items():
            assert v.shape == (200,) and np.all(v >= 0)
            assert rep.local_maxima_counts[k] == oracle.count_local_maxima(v)

    def test_experiment_deterministic(self):
        a = oracle.landscape_experiment(self.SETUP, 2, seed=3)
        b = oracle.landscape_experiment(self.SETUP, 2, seed=3)
        assert a.counts == b.counts
        lo, hi = a.interval("jes")
        assert lo <= a.mean("jes") <= hi

    def test_demo_training_data(self):
        model, f = oracle.demo_problem(self.SETUP, 0)
        assert len(model.data) == 8
        np.testing.assert_allclose(model.data.outputs, f(model.data.inputs))


def test_sine_on_three_periods():
    assert oracle.count_local_maxima(np.sin(np.linspace(0, 6 * np.pi, 1000))) == 3


def test_density_at_sampled_optimum():
    model = demo_model(seed=2)
    grid = np.linspace(-5, 5, SMALL.grid_size)
    s = oracle.solution_samples(model, grid, 1, seed=8)[0]
    dens = oracle.oracle_conditional_density(model, s, s.x_star[0], SMALL)
    mean = integrate.trapezoid(dens.ygrid * dens(dens.ygrid), dens.ygrid)
    assert abs(mean - s.y_star) < 0.1


def test_density_without_truncation():
    # An uninformative sample admits every draw, so the KDE tracks the posterior.
    model = demo_model(seed=2)
    cfg = oracle.OracleConfig(num_function_draws=4000, grid_size=60, tol_x=10.0, tol_y=100.0,
                              max_kde_points=4000)
    dens = oracle.oracle_conditional_density(model, OptimumSample(np.array([0.0]), 0.0), 2.5, cfg)
    assert abs(dens.mean() - gp.predict(model, [[2.5]]).mean[0]) < 0.1


def test_prior_with_unreachable_optimum():
    model = gp.prior_model([[-5, 5]], gp.GpHyperparams([1.0], 1.0, 1e-6))
    cfg = oracle.OracleConfig(num_function_draws=3000, grid_size=40, tol_x=10.0, tol_y=1e3, max_kde_points=3000)
    res = oracle.oracle_aes_grid(model, [OptimumSample(np.array([0.0]), 1e3)] * 3, [0.5], cfg, 0.1)
    assert np.max(np.abs(res.values)) < 0.05


def test_skipped_samples_are_counted():
    model = demo_model()
    bad = OptimumSample(np.array([0.0]), 50.0)
    good = oracle.solution_samples(model, np.linspace(-5, 5, SMALL.grid_size), 2, seed=1)
    res = oracle.oracle_aes_grid(model, [bad, *good], [0.5], SMALL, 0.01)
    assert res.skipped == 1
    with pytest.raises(InsufficientSamplesError):
        oracle.oracle_aes_grid(model, [bad], [0.5], SMALL, 0.01)


def test_single_rep_landscape_deterministic():
    setup = TestLandscape.SETUP
    assert oracle.landscape_experiment(setup, 1, 4).counts == oracle.landscape_experiment(setup, 1, 4).counts
