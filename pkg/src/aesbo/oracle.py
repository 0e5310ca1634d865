"""Brute-force acquisition oracle and landscape analysis for 1D problems.

The oracle replaces the truncated-Gaussian approximation of
``p(y | D, x, x*, y*)`` with a kernel density estimate built from exact joint
posterior draws on a grid whose argmax and max are close to ``(x*, y*)``.
The integral over ``y`` is then done by quadrature.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import integrate, stats
from scipy.special import logsumexp

from . import acquisition as acq
from . import gp, sampling
from .alpha import check_alpha
from .errors import InsufficientSamplesError, InvalidArgumentError
from .sampling import OptimumSample

logger = logging.getLogger(__name__)

MIN_COMPATIBLE = 30


@dataclass(frozen=True)
class OracleConfig:
    """Settings of the brute-force oracle.

    Tolerances are relative: ``tol_x`` to the input range, ``tol_y`` to the
    prior standard deviation ``sqrt(amplitude)``.  ``bandwidth`` is
    ``"silverman"`` or a fixed positive number.
    """

    num_solution_samples: int = 500
    num_function_draws: int = 20000
    grid_size: int = 200
    tol_x: float = 0.02
    tol_y: float = 0.05
    bandwidth: Union[str, float] = "silverman"
    quadrature_points: int = 256
    max_widenings: int = 4
    max_kde_points: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.tol_x <= 0 or self.tol_y <= 0:
            raise InvalidArgumentError("tolerances must be positive")
        if self.quadrature_points < 64:
            raise InvalidArgumentError("quadrature_points must be >= 64")
        if self.bandwidth != "silverman" and not (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0):
            raise InvalidArgumentError("bandwidth must be 'silverman' or a positive number")


@dataclass
class DrawPool:
    """Joint posterior draws of ``f`` on a 1D grid."""

    grid: np.ndarray  # (G,)
    values: np.ndarray  # (N, G)

    @property
    def argmax_x(self) -> np.ndarray:
        return self.grid[np.argmax(self.values, axis=1)]

    @property
    def max_y(self) -> np.ndarray:
        return np.max(self.values, axis=1)


def _check_1d(model: gp.GpModel):
    if model.dim != 1:
        raise InvalidArgumentError("the oracle is only defined for one-dimensional problems")


def posterior_draws(model: gp.GpModel, grid, num: int, seed: int = 0) -> DrawPool:
    """Exact joint draws from the latent posterior on ``grid``."""
    _check_1d(model)
    grid = np.asarray(grid, dtype=float).ravel()
    mean = gp.predict(model, grid[:, None]).mean
    cov = gp.posterior_covariance(model, grid[:, None], grid[:, None])
    cov = 0.5 * (cov + cov.T)
    L, _ = gp.cholesky_with_jitter(cov)
    z = np.random.default_rng(seed).standard_normal((num, len(grid)))
    return DrawPool(grid, mean + z @ L.T)


def solution_samples(model: gp.GpModel, grid, num: int, seed: int = 0) -> list[OptimumSample]:
    """``(x*, y*)`` as grid argmax and max of exact posterior draws."""
    pool = posterior_draws(model, grid, num, seed)
    return [OptimumSample(np.array([x]), float(y)) for x, y in zip(pool.argmax_x, pool.max_y)]


def compatible_indices(pool: DrawPool, sample: OptimumSample, tol_x: float, tol_y: float,
                       max_widenings: int = 4) -> np.ndarray:
    """Indices of draws whose argmax and max lie near ``sample``.

    Both tolerances double until at least 30 draws qualify.
    """
    x_star = float(np.asarray(sample.x_star).ravel()[0])
    ax, my = pool.argmax_x, pool.max_y
    for _ in range(max_widenings + 1):
        idx = np.flatnonzero((np.abs(ax - x_star) <= tol_x) & (np.abs(my - sample.y_star) <= tol_y))
        if idx.size >= MIN_COMPATIBLE:
            return idx
        tol_x, tol_y = 2.0 * tol_x, 2.0 * tol_y
    raise InsufficientSamplesError(
        f"only {idx.size} compatible draws near x*={x_star:.4g}, y*={sample.y_star:.4g}"
    )


def _bandwidth(values: np.ndarray, rule, floor: float) -> np.ndarray:
    """Per-column bandwidth for the KDE of ``values`` (draws x points)."""
    if rule != "silverman":
        return np.full(values.shape[1], float(rule))
    n = values.shape[0]
    sd = values.std(axis=0, ddof=1)
    iqr = stats.iqr(values, axis=0) / 1.349
    spread = np.where(iqr > 0, np.minimum(sd, iqr), sd)
    return np.maximum(0.9 * spread * n ** (-0.2), floor)


@dataclass
class ConditionalDensity:
    """KDE of ``y`` at one input, as a callable log density and its quadrature grid."""

    centers: np.ndarray
    width: float
    ygrid: np.ndarray

    def logpdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        d = (y[..., None] - self.centers) / self.width
        return logsumexp(-0.5 * d * d, axis=-1) - math.log(len(self.centers) * self.width * math.sqrt(2 * math.pi))

    def __call__(self, y):
        return np.exp(self.logpdf(y))

    def mean(self) -> float:
        return float(self.centers.mean())


def _quadrature_grid(lo_u, hi_u, lo_c, hi_c, q):
    """Merged uniform grid over ``[lo_u, hi_u]`` and core grid over ``[lo_c, hi_c]``; shape ``(G, 2q)``."""
    t = np.linspace(0.0, 1.0, q)
    u = lo_u[:, None] + t * (hi_u - lo_u)[:, None]
    c = lo_c[:, None] + t * (hi_c - lo_c)[:, None]
    return np.sort(np.concatenate([u, c], axis=1), axis=1)


def _trapezoid_logs(logf, ygrid):
    """``log ∫ exp(logf) dy`` along the last axis with the trapezoid rule."""
    dy = np.diff(ygrid, axis=-1)
    pair = np.logaddexp(logf[..., 1:], logf[..., :-1]) - math.log(2.0)
    with np.errstate(divide="ignore"):
        return logsumexp(pair + np.log(dy), axis=-1)


def _kde_setup(model, pool, sample, cfg, noise_variance, rng):
    idx = compatible_indices(
        pool, sample, cfg.tol_x * _range(model), cfg.tol_y * math.sqrt(model.hyperparams.amplitude),
        cfg.max_widenings,
    )
    if idx.size > cfg.max_kde_points:
        idx = np.sort(rng.choice(idx, cfg.max_kde_points, replace=False))
    vals = pool.values[idx]  # (n, G)
    floor = 1e-3 * math.sqrt(model.hyperparams.amplitude)
    h = _bandwidth(vals, cfg.bandwidth, floor)
    width = np.sqrt(h * h + noise_variance)
    return vals, width


def _kde_logpdf(ygrid, vals, width, block: int = 16):
    """Log KDE density at ``ygrid (G, Q)`` with centers ``vals (n, G)`` and widths ``(G,)``."""
    G = ygrid.shape[0]
    out = np.empty_like(ygrid)
    norm = np.log(vals.shape[0] * width * math.sqrt(2 * math.pi))
    for a in range(0, G, block):
        b = min(a + block, G)
        d = (ygrid[a:b, :, None] - vals.T[a:b, None, :]) / width[a:b, None, None]
        with np.errstate(divide="ignore"):
            out[a:b] = np.log(np.exp(-0.5 * d * d).sum(axis=2))
    return out - norm[:, None]


def _range(model) -> float:
    b = model.data.bounds
    return float(b[0, 1] - b[0, 0])


def oracle_conditional_density(model: gp.GpModel, sample: OptimumSample, x: float, cfg: OracleConfig = OracleConfig(),
                               noise_variance: float = 0.0, pool: Optional[DrawPool] = None) -> ConditionalDensity:
    """KDE of ``p(y | D, x, x*, y*)`` from compatible posterior draws.

    ``x`` is snapped to the nearest pool grid point.
    """
    _check_1d(model)
    if pool is None:
        lo, hi = model.data.bounds[0]
        pool = posterior_draws(model, np.linspace(lo, hi, cfg.grid_size), cfg.num_function_draws, cfg.seed)
    j = int(np.argmin(np.abs(pool.grid - float(np.asarray(x).ravel()[0]))))
    vals, width = _kde_setup(model, pool, sample, cfg, noise_variance, np.random.default_rng(cfg.seed))
    centers = vals[:, j]
    w = float(width[j])
    ygrid = _quadrature_grid(
        np.array([centers.min() - 12 * w]), np.array([centers.max() + 12 * w]),
        np.array([centers.min() - 6 * w]), np.array([centers.max() + 6 * w]), cfg.quadrature_points,
    )[0]
    return ConditionalDensity(centers, w, ygrid)


@dataclass
class OracleResult:
    grid: np.ndarray
    alphas: tuple
    values: np.ndarray  # (G, A)
    skipped: int = 0


def oracle_aes_grid(model: gp.GpModel, samples, alphas, cfg: OracleConfig = OracleConfig(),
                    noise_variance: float = 0.0, pool: Optional[DrawPool] = None) -> OracleResult:
    """Oracle AES for every pool grid point and every alpha.

    ``noise_variance`` is the observation noise of ``y``.  Samples without
    enough compatible draws are skipped and counted.
    """
    _check_1d(model)
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    check_alpha(alphas)
    if pool is None:
        lo, hi = model.data.bounds[0]
        pool = posterior_draws(model, np.linspace(lo, hi, cfg.grid_size), cfg.num_function_draws, cfg.seed)
    pred = gp.predict(model, pool.grid[:, None])
    m, V = pred.mean, pred.variance + noise_variance
    sd = np.sqrt(V)
    rng = np.random.default_rng(cfg.seed + 1)
    q = cfg.quadrature_points
    total = np.zeros((len(pool.grid), len(alphas)))
    used = skipped = 0
    for s in samples:
        try:
            vals, width = _kde_setup(model, pool, s, cfg, noise_variance, rng)
        except InsufficientSamplesError as exc:
            logger.debug("oracle skipped a sample: %s", exc)
            skipped += 1
            continue
        vmin, vmax = vals.min(axis=0), vals.max(axis=0)
        ygrid = _quadrature_grid(
            np.minimum(m - 10 * sd, vmin - 8 * width), np.maximum(m + 10 * sd, vmax + 8 * width),
            vmin - 6 * width, vmax + 6 * width, q,
        )  # (G, Q)
        log_cond = _kde_logpdf(ygrid, vals, width)
        log_marg = stats.norm.logpdf(ygrid, m[:, None], sd[:, None])
        for k, a in enumerate(alphas):
            total[:, k] += np.exp(_trapezoid_logs((1 - a) * log_marg + a * log_cond, ygrid))
        used += 1
    if used == 0:
        raise InsufficientSamplesError("no solution sample had enough compatible draws")
    values = (1.0 - total / used) / ((1.0 - alphas) * alphas)
    return OracleResult(pool.grid, tuple(alphas.tolist()), values, skipped)


def oracle_aes(model: gp.GpModel, x: float, alpha: float, cfg: OracleConfig = OracleConfig(),
               noise_variance: float = 0.0, samples=None) -> float:
    """Oracle AES at the pool grid point nearest ``x``."""
    _check_1d(model)
    lo, hi = model.data.bounds[0]
    grid = np.linspace(lo, hi, cfg.grid_size)
    if samples is None:
        samples = solution_samples(model, grid, cfg.num_solution_samples, cfg.seed + 7)
    res = oracle_aes_grid(model, samples, [alpha], cfg, noise_variance)
    j = int(np.argmin(np.abs(res.grid - float(np.asarray(x).ravel()[0]))))
    return float(res.values[j, 0])


# ---------------------------------------------------------------------------
# landscapes


def count_local_maxima(values) -> int:
    """Strict interior local maxima, with each plateau counted at most once."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 3:
        raise InvalidArgumentError("need at least three grid values")
    keep = np.concatenate([[True], v[1:] != v[:-1]])
    u = v[keep]  # runs of equal values collapsed
    if u.size < 3:
        return 0
    return int(np.sum((u[1:-1] > u[:-2]) & (u[1:-1] > u[2:])))


@dataclass(frozen=True)
class LandscapeSetup:
    """Reproduction recipe for 1D landscapes.

    A function is drawn from a GP prior with fixed hyperparameters on
    ``[low, high]``, observed at ``n_train`` uniform points, and the model
    uses the same hyperparameters.
    """

    low: float = -5.0
    high: float = 5.0
    n_train: int = 8
    lengthscale: float = 1.0
    amplitude: float = 1.0
    noise_variance: float = 0.0
    num_samples: int = 32
    num_features: int = sampling.DEFAULT_NUM_FEATURES
    grid_size: int = 1000
    alphas: tuple = acq.DEFAULT_ALPHAS
    raw_candidates: int = 200
    restarts: int = 1

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[self.low, self.high]])

    @property
    def noiseless(self) -> bool:
        return self.noise_variance == 0

    def hyperparams(self) -> gp.GpHyperparams:
        nv = self.noise_variance if self.noise_variance > 0 else 1e-6
        return gp.GpHyperparams(np.array([self.lengthscale]), self.amplitude, nv)


@dataclass
class LandscapeReport:
    grid: np.ndarray
    values_per_method: dict = field(default_factory=dict)
    local_maxima_counts: dict = field(default_factory=dict)


def demo_problem(setup: LandscapeSetup, seed: int):
    """Training data and fitted-by-construction model for one repetition."""
    ss = np.random.SeedSequence(seed)
    f_ss, x_ss, n_ss = ss.spawn(3)
    hp = setup.hyperparams()
    basis = sampling.build_rff(hp, 2048, int(f_ss.generate_state(1)[0]))
    f = sampling.PosteriorFunctionSample(basis, np.random.default_rng(f_ss).standard_normal(2048))
    X = np.random.default_rng(x_ss).uniform(setup.low, setup.high, (setup.n_train, 1))
    y = f(X)
    if not setup.noiseless:
        y = y + np.random.default_rng(n_ss).normal(0.0, math.sqrt(setup.noise_variance), len(y))
    model = gp.build_model(gp.Dataset(X, y, setup.bounds), hp)
    return model, f


def acquisition_noise(setup: LandscapeSetup) -> float:
    return acq.NOISELESS_VARIANCE if setup.noiseless else setup.noise_variance


def landscape(setup: LandscapeSetup, seed: int) -> LandscapeReport:
    """JES and ensemble values on the evaluation grid for one repetition."""
    model, _ = demo_problem(setup, seed)
    ss = np.random.SeedSequence(seed).spawn(5)[3:]
    samples = sampling.draw_optimum_set(model, setup.num_samples, setup.num_features, int(ss[0].generate_state(1)[0]))
    ctx = acq.build_context(model, samples, acquisition_noise(setup))
    opt = acq.AcqOptimizerConfig(raw_candidates=setup.raw_candidates, restarts=setup.restarts)
    spec = acq.ensemble_prepare(ctx, setup.alphas, opt, int(ss[1].generate_state(1)[0]))
    grid = np.linspace(setup.low, setup.high, setup.grid_size)
    values = {
        "jes": acq.jes_values(ctx, grid[:, None]),
        "ensemble": acq.ensemble_values(spec, ctx, grid[:, None]),
    }
    counts = {k: count_local_maxima(v) for k, v in values.items()}
    return LandscapeReport(grid, values, counts)


@dataclass
class LandscapeSummary:
    counts: dict  # method -> list of per-rep counts

    def mean(self, method) -> float:
        return float(np.mean(self.counts[method]))

    def stderr(self, method) -> float:
        c = np.asarray(self.counts[method], dtype=float)
        return float(c.std(ddof=1) / math.sqrt(len(c))) if len(c) > 1 else 0.0

    def interval(self, method, k: float = 2.0):
        m, s = self.mean(method), self.stderr(method)
        return m - k * s, m + k * s


def landscape_experiment(setup: LandscapeSetup, reps: int, seed: int = 0, mapper=map) -> LandscapeSummary:
    """Local-maxima counts over ``reps`` repetitions; rep ``r`` uses ``seed + r * 2**32``."""
    seeds = [seed + r * 2**32 for r in range(reps)]
    reports = list(mapper(_landscape_counts, [setup] * reps, seeds))
    methods = reports[0].keys() if reports else ()
    return LandscapeSummary({k: [r[k] for r in reports] for k in methods})


def _landscape_counts(setup, seed):
    return landscape(setup, seed).local_maxima_counts


# ---------------------------------------------------------------------------
# mutual-information identity


def discretized_mutual_information(model: gp.GpModel, x: float, noise_variance: float, num_draws: int = 4000,
                                   grid_size: int = 50, quadrature_points: int = 4001, seed: int = 0):
    """Mutual information between ``y(x)`` and a discretized optimum location.

    The optimum location is the grid argmax of exact posterior draws, and
    ``p(y | x* = k)`` is the Gaussian mixture of the draws with that argmax.
    Returns ``(entropy_form, kl_form)``: ``H[y] - E_k H[y | k]`` and
    ``E_k KL(p(y | k) || p(y))``, both by quadrature in ``y``.
    """
    _check_1d(model)
    if noise_variance <= 0:
        raise InvalidArgumentError("the discretized identity needs positive noise")
    lo, hi = model.data.bounds[0]
    grid = np.linspace(lo, hi, grid_size)
    grid = np.union1d(grid, [float(x)])
    j = int(np.argmin(np.abs(grid - float(x))))
    pool = posterior_draws(model, grid, num_draws, seed)
    f = pool.values[:, j]
    states, label = np.unique(np.argmax(pool.values, axis=1), return_inverse=True)
    pi = np.bincount(label) / num_draws
    sd = math.sqrt(noise_variance)
    y = np.linspace(f.min() - 10 * sd, f.max() + 10 * sd, quadrature_points)
    dens = stats.norm.pdf(y[:, None], f[None, :], sd)  # (Q, N)
    cond = np.stack([dens[:, label == k].mean(axis=1) for k in range(len(states))], axis=0)  # (K, Q)
    marg = pi @ cond

    def entropy(p):
        return -integrate.trapezoid(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), y, axis=-1)

    entropy_form = float(entropy(marg) - pi @ entropy(cond))
    ratio = np.where(cond > 0, cond * (np.log(np.where(cond > 0, cond, 1.0)) - np.log(marg)), 0.0)
    kl_form = float(pi @ integrate.trapezoid(ratio, y, axis=-1))
    return entropy_form, kl_form


# ---------------------------------------------------------------------------
# approximation vs oracle


@dataclass
class OracleComparison:
    grid: np.ndarray
    labels: list  # "aes:<alpha>" or "ensemble"
    approximate: np.ndarray  # (G, L)
    oracle: np.ndarray  # (G, L)
    spearman: np.ndarray  # (L,)
    fraction_below: np.ndarray  # (L,)
    skipped: int = 0


def oracle_compare(setup: LandscapeSetup, alphas=(0.2, 0.5, 0.8), cfg: OracleConfig = OracleConfig(),
                   seed: int = 0, include_ensemble: bool = True) -> OracleComparison:
    """Approximate vs oracle AES on the pool grid of one demo problem.

    Both use the same exact solution samples, so the comparison isolates the
    truncated-Gaussian approximation of the conditional predictive.
    """
    model, _ = demo_problem(setup, seed)
    nv = acquisition_noise(setup)
    grid = np.linspace(setup.low, setup.high, cfg.grid_size)
    ss = np.random.SeedSequence(seed).spawn(7)
    pool = posterior_draws(model, grid, cfg.num_function_draws, int(ss[5].generate_state(1)[0]))
    samples = solution_samples(model, grid, cfg.num_solution_samples, int(ss[6].generate_state(1)[0]))
    all_alphas = tuple(alphas) + tuple(a for a in setup.alphas if include_ensemble and a not in alphas)
    orc = oracle_aes_grid(model, samples, all_alphas, cfg, nv, pool)
    ctx = acq.build_context(model, samples, nv)
    approx = acq.aes_values(ctx, grid[:, None], all_alphas)
    labels = [f"aes:{a:g}" for a in alphas]
    A, O = approx[:, : len(alphas)], orc.values[:, : len(alphas)]
    if include_ensemble:
        idx = [all_alphas.index(a) for a in setup.alphas]
        A = np.column_stack([A, (approx[:, idx] / approx[:, idx].max(axis=0)).sum(axis=1)])
        O = np.column_stack([O, (orc.values[:, idx] / orc.values[:, idx].max(axis=0)).sum(axis=1)])
        labels.append("ensemble")
    rho = np.array([stats.spearmanr(A[:, k], O[:, k]).statistic for k in range(A.shape[1])])
    below = np.mean(A <= O, axis=0)
    return OracleComparison(grid, labels, A, O, rho, below, orc.skipped)
