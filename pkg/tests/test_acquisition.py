import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from aesbo import acquisition as acq
from aesbo import gp, sampling
from aesbo.alpha import GaussianNatural, alpha_integral_factor, gaussian_alpha_divergence, quad_alpha_integral
from aesbo.errors import DomainError, InvalidArgumentError, NumericError
from aesbo.sampling import OptimumSample

# mpmath values from tests/oracles/generate.py; truncation of N(0, 1) above beta.
TRUNCATED = {
    -2: (-2.3732155328228409, 0.11427910041408126),
    -1: (-1.5251352761609812, 0.19909766557034879),
    0: (-0.7978845608028654, 0.36338022763241866),
    1: (-0.28759997093917836, 0.6296862857766054),
    2: (-0.05524786267898996, 0.8864519483114236),
}
JES_SINGLE = 0.5061527669386269
MES_TOY = 0.4322587578669215


def far_sample_context(noise):
    # x* is 1000 lengthscales away so conditioning on it changes nothing.
    model = gp.prior_model([[0, 2000]], gp.GpHyperparams([1.0], 1.0, 1e-6))
    return acq.build_context(model, [OptimumSample(np.array([2000.0]), 0.0)], noise_variance=noise)


def fitted_context(S=8, seed=0, dim=2, n=10):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, dim))
    y = np.sin(5 * X).sum(1)
    model = gp.build_model(gp.Dataset(X, y, np.tile([0.0, 1.0], (dim, 1))),
                           gp.GpHyperparams(np.full(dim, 0.3), 1.0, 1e-4))
    samples = sampling.draw_optimum_set(model, S, M=256, seed=seed)
    return acq.build_context(model, samples)


@pytest.mark.parametrize("beta", sorted(TRUNCATED))
def test_truncated_moments_oracle(beta):
    tr = acq.truncated_moments(0.0, 1.0, float(beta))
    m, v = TRUNCATED[beta]
    assert tr.mean_tr == pytest.approx(m, rel=1e-12)
    assert tr.var_tr == pytest.approx(v, rel=1e-10)


def test_truncated_moments_scaled():
    tr = acq.truncated_moments(2.0, 4.0, 2.0 + 2 * 1.0)
    m, v = TRUNCATED[1]
    assert tr.mean_tr == pytest.approx(2.0 + 2 * m, rel=1e-12)
    assert tr.var_tr == pytest.approx(4 * v, rel=1e-10)


def test_truncated_moments_match_scipy():
    beta = np.linspace(-30, 8, 200)
    tr = acq.truncated_moments(np.zeros_like(beta), np.ones_like(beta), beta)
    np.testing.assert_allclose(tr.mean_tr, stats.truncnorm.mean(-np.inf, beta), rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(tr.var_tr, stats.truncnorm.var(-np.inf, beta), rtol=1e-6, atol=1e-12)


def test_truncated_moments_deep_tail():
    beta = np.array([-60.0, -1e3, -1e6])
    tr = acq.truncated_moments(np.zeros(3), np.ones(3), beta)
    np.testing.assert_allclose(tr.mean_tr, beta, rtol=1e-3)
    assert np.all(tr.var_tr > 0) and np.all(tr.var_tr <= 1.0 / beta**2 * 1.01)


def test_truncated_moments_degenerate_variance():
    tr = acq.truncated_moments(np.array([1.0, -1.0]), np.array([0.0, 1e-14]), np.array([0.5, 0.5]))
    np.testing.assert_array_equal(tr.mean_tr, [0.5, -1.0])
    assert np.all(tr.var_tr >= 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 10), st.floats(-40, 10))
def test_truncation_shrinks_variance(mean, var, beta):
    tr = acq.truncated_moments(mean, var, mean + beta * math.sqrt(var))
    assert 0.0 <= tr.var_tr <= var * (1 + 1e-12)
    assert tr.mean_tr <= mean + 1e-12


def test_jes_single_sample():
    assert acq.jes_value(far_sample_context(0.0), [1.0]) == pytest.approx(JES_SINGLE, rel=1e-10)


def test_mes_toy():
    assert acq.mes_value(far_sample_context(0.1), [1.0]) == pytest.approx(MES_TOY, rel=1e-10)


def test_aes_single_sample_matches_divergence():
    ctx = far_sample_context(0.05)
    m, v = TRUNCATED[0]
    for a in (0.1, 0.5, 0.9):
        want = gaussian_alpha_divergence((m, v + 0.05), (0.0, 1.05), a)
        assert acq.aes_value(ctx, [1.0], a) == pytest.approx(want, rel=1e-10)


def test_context_matches_reference_path():
    ctx = fitted_context()
    X = np.random.default_rng(3).uniform(size=(20, 2))
    nat = ctx.conditioned_naturals(X)
    for s, sample in enumerate(ctx.samples):
        ref = acq.conditional_naturals(ctx.model, sample, X)
        m_ref, v_ref = ref.to_moments()
        m, v = GaussianNatural(nat.eta1[:, s], nat.eta2[:, s]).to_moments()
        np.testing.assert_allclose(m, m_ref, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(v, v_ref, rtol=1e-4, atol=1e-8)


def test_aes_matches_natural_form():
    ctx = fitted_context()
    X = np.random.default_rng(4).uniform(size=(10, 2))
    m, V, m_tr, V_tr = ctx.predictive_moments(X)
    eta = GaussianNatural.from_moments(m[:, None], V[:, None])
    star = GaussianNatural.from_moments(m_tr, V_tr)
    for a in (0.2, 0.7):
        ref = np.mean(1 - alpha_integral_factor(eta, star, a), axis=1) / (a * (1 - a))
        np.testing.assert_allclose(acq.aes_values(ctx, X, [a])[:, 0], ref, rtol=1e-6, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000))
def test_acquisitions_nonnegative(seed):
    ctx = fitted_context(S=4, seed=seed)
    X = np.random.default_rng(seed).uniform(size=(40, 2))
    assert np.all(acq.aes_values(ctx, X, acq.DEFAULT_ALPHAS) >= 0)
    assert np.all(acq.jes_values(ctx, X) >= 0)
    assert np.all(acq.mes_values(ctx, X) >= 0)


def test_aes_near_one_is_averaged_kl():
    ctx = fitted_context(S=16)
    X = np.random.default_rng(5).uniform(size=(100, 2))
    m, V, m_tr, V_tr = ctx.predictive_moments(X)
    kl = 0.5 * np.mean(np.log(V[:, None] / V_tr) + V_tr / V[:, None] + (m[:, None] - m_tr) ** 2 / V[:, None] - 1,
                       axis=1)
    a = acq.aes_values(ctx, X, [0.999])[:, 0]
    np.testing.assert_allclose(a, kl, rtol=2e-2, atol=1e-6)
    # JES drops the mean-shift and variance-ratio terms, so the two differ.
    assert np.max(np.abs(a - acq.jes_values(ctx, X))) > 1e-6


def test_alpha_domain_checked():
    ctx = fitted_context(S=2)
    with pytest.raises(DomainError):
        acq.aes_values(ctx, [[0.5, 0.5]], [1.0])


def test_needs_samples():
    model = gp.prior_model([[0, 1]], gp.GpHyperparams([1.0], 1.0, 0.0))
    with pytest.raises(InvalidArgumentError):
        acq.jes_values(acq.build_context(model, []), [[0.5]])


def test_wrong_dimension():
    with pytest.raises(InvalidArgumentError):
        acq.jes_values(fitted_context(S=2), [[0.5, 0.5, 0.5]])


def test_noiseless_acquisition_small_at_data():
    ctx = fitted_context(S=8)
    ctx_nl = acq.build_context(ctx.model, ctx.samples, noise_variance=acq.NOISELESS_VARIANCE)
    at_data = acq.jes_values(ctx_nl, ctx.model.data.inputs)
    elsewhere = acq.jes_values(ctx_nl, np.random.default_rng(0).uniform(size=(200, 2)))
    assert at_data.max() < elsewhere.max()


class TestOptimizer:
    def test_finds_quadratic_max(self):
        def fn(X):
            return -np.sum((X - [0.3, -0.2]) ** 2, axis=1)

        x, v = acq.optimize_acquisition(fn, [[-1, 1], [-1, 1]], seed=0)
        np.testing.assert_allclose(x, [0.3, -0.2], atol=1e-4)
        assert v == pytest.approx(0.0, abs=1e-8)

    def test_never_below_best_raw(self):
        cfg = acq.AcqOptimizerConfig(raw_candidates=50, restarts=3)

        def fn(X):
            return np.sin(20 * X[:, 0]) * np.cos(13 * X[:, 1])

        x, v = acq.optimize_acquisition(fn, [[0, 1], [0, 1]], cfg, seed=3)
        raw = np.random.default_rng(3).uniform([0, 0], [1, 1], size=(50, 2))
        assert v >= fn(raw).max() - 1e-12
        assert v == pytest.approx(fn(x[None])[0])

    def test_all_nonfinite(self):
        with pytest.raises(NumericError):
            acq.optimize_acquisition(lambda X: np.full(len(X), np.nan), [[0, 1]])

    def test_deterministic(self):
        ctx = fitted_context(S=4)

        def fn(X):
            return acq.jes_values(ctx, X)

        assert np.array_equal(acq.optimize_acquisition(fn, ctx.model.data.bounds, seed=1)[0],
                              acq.optimize_acquisition(fn, ctx.model.data.bounds, seed=1)[0])

    def test_random_acquisition_in_bounds(self):
        x = acq.random_acquisition([[2, 3], [-1, 0]], seed=0)
        assert 2 <= x[0] <= 3 and -1 <= x[1] <= 0


class TestEnsemble:
    def test_components_normalized(self):
        ctx = fitted_context(S=8)
        spec = acq.ensemble_prepare(ctx, (0.1, 0.5, 0.9), seed=0)
        assert len(spec.alphas) == 3
        vals = acq.aes_values(ctx, spec.maximizers, spec.alphas)
        np.testing.assert_allclose(np.diag(vals), spec.weights, rtol=1e-12)
        # every component is at most 1 at every maximizer found
        assert np.all(vals / spec.weights <= 1 + 1e-12)

    def test_ensemble_value_bounded_by_count(self):
        ctx = fitted_context(S=8)
        spec = acq.ensemble_prepare(ctx, (0.2, 0.8), seed=1)
        X = np.random.default_rng(0).uniform(size=(300, 2))
        v = acq.ensemble_values(spec, ctx, X)
        assert np.all(v >= 0) and v.max() <= 2.0 + 0.05

    def test_flat_components_dropped(self):
        model = gp.prior_model([[0, 1]], gp.GpHyperparams([1.0], 1.0, 0.0))
        # y* far above the prior: truncation removes nothing.
        ctx = acq.build_context(model, [OptimumSample(np.array([50.0]), 1e3)], conditioned=False)
        spec = acq.ensemble_prepare(ctx, (0.5,), seed=0)
        assert spec.alphas == ()
        assert np.all(acq.ensemble_values(spec, ctx, [[0.2], [0.4]]) == 0)


def test_truncation_far_in_tail_is_identity():
    tr = acq.truncated_moments(0.7, 2.0, 0.7 + 40 * math.sqrt(2.0))
    assert tr.mean_tr == pytest.approx(0.7, abs=1e-9) and tr.var_tr == pytest.approx(2.0, abs=1e-9)


def test_conditioned_at_sampled_optimum_is_sharp():
    ctx = fitted_context(S=4)
    exact = acq.build_context(ctx.model, ctx.samples, noise_variance=0.0)
    assert np.all(np.diag(exact.predictive_moments(ctx.x_star)[3]) <= 1e-6)
    nat = acq.build_context(ctx.model, ctx.samples, acq.NOISELESS_VARIANCE).conditioned_naturals(ctx.x_star)
    assert np.all(np.diag(nat.eta2) >= 1e6)


def test_far_from_everything_is_truncated_prior():
    model = gp.prior_model([[0, 1000]], gp.GpHyperparams([1.0], 1.0, 0.0))
    ctx = acq.build_context(model, [OptimumSample(np.array([0.0]), 0.5)], noise_variance=0.0)
    nat = ctx.conditioned_naturals([[900.0]])
    m, v = GaussianNatural(nat.eta1[:, 0], nat.eta2[:, 0]).to_moments()
    tr = acq.truncated_moments(0.0, 1.0, 0.5)
    assert m[0] == pytest.approx(tr.mean_tr, abs=1e-9) and v[0] == pytest.approx(tr.var_tr, abs=1e-9)


def test_no_information_gives_zero():
    ctx = far_sample_context(0.1)
    high = acq.build_context(ctx.model, [OptimumSample(np.array([2000.0]), 1e3)], noise_variance=0.1)
    assert acq.aes_value(high, [1.0], 0.4) == pytest.approx(0.0, abs=1e-12)
    assert acq.jes_value(high, [1.0]) == pytest.approx(0.0, abs=1e-12)
    assert acq.mes_value(high, [1.0]) == pytest.approx(0.0, abs=1e-12)


def test_aes_matches_per_sample_quadrature():
    model = oracle_demo_model()
    samples = sampling.draw_optimum_set(model, 32, seed=0)
    ctx = acq.build_context(model, samples, noise_variance=0.01)
    x = np.array([[0.7]])
    m, V, m_tr, V_tr = ctx.predictive_moments(x)
    inner = [quad_alpha_integral(m[0], V[0], m_tr[0, s], V_tr[0, s], 0.5) for s in range(32)]
    want = (1 - np.mean(inner)) / 0.25
    assert acq.aes_value(ctx, x, 0.5) == pytest.approx(want, abs=1e-8)


def oracle_demo_model():
    from aesbo import oracle

    return oracle.demo_problem(oracle.LandscapeSetup(), 0)[0]


def test_continuity_in_alpha():
    ctx = fitted_context(S=16)
    X = np.random.default_rng(7).uniform(size=(100, 2))
    a, b = acq.aes_values(ctx, X, [0.999, 0.995]).T
    assert np.max(np.abs(a - b) / np.maximum(a, 1e-12)) <= 0.05
    grid = np.linspace(0.1, 0.9, 9)
    d1 = np.abs(np.diff(acq.aes_values(ctx, X, np.stack([grid, grid + 1e-3], 1).ravel()).reshape(100, 9, 2), axis=2))
    d2 = np.abs(np.diff(acq.aes_values(ctx, X, np.stack([grid, grid + 1e-5], 1).ravel()).reshape(100, 9, 2), axis=2))
    assert d2.max() < d1.max() / 10


def test_jes_noise_damping():
    ctx = fitted_context(S=8)
    X = np.random.default_rng(8).uniform(size=(50, 2))
    quiet = acq.jes_values(acq.build_context(ctx.model, ctx.samples, noise_variance=0.0), X)
    loud = acq.jes_values(acq.build_context(ctx.model, ctx.samples, noise_variance=1.0), X)
    assert np.all(loud < quiet)


class TestEnsembleExamples:
    def test_singleton(self):
        ctx = fitted_context(S=8)
        spec = acq.ensemble_prepare(ctx, (0.3,), seed=0)
        X = np.random.default_rng(0).uniform(size=(20, 2))
        np.testing.assert_allclose(acq.ensemble_values(spec, ctx, X), acq.aes_values(ctx, X, [0.3])[:, 0] / spec.weights[0])
        assert acq.ensemble_value(spec, ctx, spec.maximizers[0]) == pytest.approx(1.0)

    def test_equal_components(self):
        ctx = fitted_context(S=8)
        spec = acq.ensemble_prepare(ctx, (0.3, 0.3, 0.3), seed=0)
        assert np.ptp(spec.weights) == 0
        x = np.array([[0.4, 0.6]])
        assert acq.ensemble_value(spec, ctx, x) == pytest.approx(3 * acq.aes_value(ctx, x, 0.3) / spec.weights[0])

    def test_component_maximizers_match_dense_grid(self):
        model = oracle_demo_model()
        samples = sampling.draw_optimum_set(model, 32, seed=1)
        ctx = acq.build_context(model, samples, acq.NOISELESS_VARIANCE)
        spec = acq.ensemble_prepare(ctx, acq.DEFAULT_ALPHAS, seed=2)
        grid = np.linspace(-5, 5, 2000)[:, None]
        vals = acq.aes_values(ctx, grid, spec.alphas)
        grid_best = grid[np.argmax(vals, axis=0), 0]
        assert np.all(spec.weights >= vals.max(axis=0) - 1e-6)
        assert np.max(np.abs(spec.maximizers[:, 0] - grid_best)) <= 0.01 * 10

    def test_zero_everywhere(self):
        ctx = fitted_context(S=4)
        spec = acq.EnsembleSpec((0.5,), np.array([1.0]), np.zeros((1, 2)))
        zero_ctx = acq.build_context(ctx.model, [OptimumSample(np.zeros(2), 1e6)], conditioned=False)
        assert acq.ensemble_value(spec, zero_ctx, [[0.5, 0.5]]) == pytest.approx(0.0, abs=1e-12)


class TestOptimizerExamples:
    def test_linear_goes_to_boundary(self):
        x, _ = acq.optimize_acquisition(lambda X: X @ np.array([1.0, -2.0]), [[0, 1], [0, 1]], seed=0)
        np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-8)

    def test_more_restarts(self):
        ctx = fitted_context(S=4)
        cfg = acq.AcqOptimizerConfig(raw_candidates=200, restarts=5)
        x, v = acq.optimize_acquisition(lambda X: acq.jes_values(ctx, X), ctx.model.data.bounds, cfg, seed=0)
        assert np.all((x >= 0) & (x <= 1)) and v >= 0

    def test_random_uniformity(self):
        pts = np.array([acq.random_acquisition([[0, 1]] * 3, seed=s) for s in range(2000)])
        big = np.random.default_rng(0).uniform(size=(100_000, 3))
        np.testing.assert_allclose(pts.mean(0), 0.5, atol=0.03)
        np.testing.assert_allclose(big.mean(0), 0.5, atol=0.01)

    def test_random_degenerate_and_seeded(self):
        assert acq.random_acquisition([[0.3, 0.3]], seed=1)[0] == 0.3
        np.testing.assert_array_equal(acq.random_acquisition([[0, 1]], 5), acq.random_acquisition([[0, 1]], 5))
