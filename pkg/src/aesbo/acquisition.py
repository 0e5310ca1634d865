"""Information-based acquisition functions and their maximizer.

All information acquisitions share one :class:`AcquisitionContext`: the
posterior model plus ``S`` sampled optima.  Conditioning the GP on each
noiseless ``(x*_s, y*_s)`` is a rank-one update of the base posterior, so the
context precomputes the per-sample terms once and every query batch costs one
triangular solve against the base Cholesky factor.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.special import log_ndtr

from .alpha import GaussianNatural, check_alpha, log_alpha_integral
from .errors import InvalidArgumentError, NumericError
from .gp import GpModel, condition_on_optimum, kernel_matrix, predict
from .sampling import OptimumSample

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.001, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.999)
NOISELESS_VARIANCE = 1e-8
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_TINY_VARIANCE = 1e-12
_ASYMPTOTIC_BETA = -50.0


# ---------------------------------------------------------------------------
# truncated Gaussian


@dataclass(frozen=True)
class TruncatedMoments:
    mean_tr: np.ndarray
    var_tr: np.ndarray
    beta: np.ndarray


def truncated_moments(mean, variance, y_star) -> TruncatedMoments:
    """Moments of ``N(mean, variance)`` with the density above ``y_star`` removed.

    Broadcasts over its arguments.  Variances at or below 1e-12 are treated as
    degenerate: the mean is clipped to ``y_star`` and the variance kept.
    """
    mean, variance, y_star = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(variance, dtype=float), np.asarray(y_star, dtype=float)
    )
    degenerate = variance <= _TINY_VARIANCE
    sd = np.sqrt(np.where(degenerate, 1.0, variance))
    beta = np.where(degenerate, np.inf, (y_star - mean) / sd)
    b = np.where(degenerate, 0.0, beta)
    ratio = np.atleast_1d(np.exp(-0.5 * b * b - _HALF_LOG_2PI - log_ndtr(b)))
    factor = 1.0 - ratio * (ratio + np.atleast_1d(b))
    ratio, factor = ratio.reshape(b.shape), factor.reshape(b.shape)
    # Far in the lower tail ratio ~ -beta and the expression above cancels;
    # use the asymptotic series of the inverse Mills ratio there.
    tail = b < _ASYMPTOTIC_BETA
    if np.any(tail):
        ratio, factor, b = np.atleast_1d(ratio), np.atleast_1d(factor), np.atleast_1d(b)
        tail = np.atleast_1d(tail)
        t2 = b[tail] ** 2
        ratio[tail] = -b[tail] - (1.0 - 2.0 / t2 + 10.0 / t2**2) / b[tail]
        factor[tail] = (1.0 - 6.0 / t2 + 50.0 / t2**2) / t2
        ratio, factor, b = ratio.reshape(mean.shape), factor.reshape(mean.shape), b.reshape(mean.shape)
    factor = np.clip(factor, 0.0, 1.0)
    mean_tr = np.where(degenerate, np.minimum(mean, y_star), mean - sd * ratio)
    var_tr = np.where(degenerate, np.maximum(variance, 0.0), variance * factor)
    out = TruncatedMoments(mean_tr, var_tr, beta)
    if out.mean_tr.ndim == 0:
        return TruncatedMoments(float(mean_tr), float(var_tr), float(beta))
    return out


# ---------------------------------------------------------------------------
# context


class AcquisitionContext:
    """Posterior model, sampled optima and noise level shared by acquisitions.

    ``noise_variance`` is the observation noise used in the predictive
    distributions of ``y``; ``None`` takes the model's fitted value.  With
    ``conditioned=False`` the sampled optima only truncate the unconditioned
    predictive, which is how max-value entropy search treats them.

    Treat instances as read-only.
    """

    def __init__(
        self,
        model: GpModel,
        samples: Sequence[OptimumSample],
        noise_variance: float | None = None,
        conditioned: bool = True,
    ):
        self.model = model
        self.samples = list(samples)
        self.noise_variance = float(model.noise_variance if noise_variance is None else noise_variance)
        self.conditioned = conditioned
        hp = model.hyperparams
        D = model.dim
        self.x_star = np.array([s.x_star for s in self.samples], dtype=float).reshape(-1, D)
        self.y_star = np.array([s.y_star for s in self.samples], dtype=float)
        self._has_data = len(model.data) > 0
        if self.samples:
            if self._has_data:
                self._v_star = linalg.solve_triangular(
                    model.chol, kernel_matrix(model.data.inputs, self.x_star, hp),
                    lower=True, check_finite=False,
                )
            base = predict(model, self.x_star)
            floor = 1e-10 * hp.amplitude
            self._c_star = np.maximum(base.variance, floor)
            self._m_star = base.mean

    @property
    def num_samples(self) -> int:
        return len(self.samples)

    def _base(self, X):
        hp = self.model.hyperparams
        if not self._has_data:
            N = len(X)
            return np.full(N, hp.mean_constant), np.full(N, hp.amplitude), None
        Ks = kernel_matrix(X, self.model.data.inputs, hp)
        mean = hp.mean_constant + Ks @ self.model.alpha_vec
        V = linalg.solve_triangular(self.model.chol, Ks.T, lower=True, check_finite=False)
        var = np.clip(hp.amplitude - np.einsum("ij,ij->j", V, V), 0.0, hp.amplitude)
        return mean, var, V

    def _points(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.model.dim:
            raise InvalidArgumentError(f"expected {self.model.dim}-dimensional points")
        return X

    def latent_moments(self, X):
        """``(mean, var)`` of ``f(x)`` and per-sample conditioned ``(mean_s, var_s)``.

        The per-sample arrays have shape ``(N, S)``.
        """
        X = self._points(X)
        mean, var, V = self._base(X)
        if not self.samples:
            raise InvalidArgumentError("information acquisitions need at least one sample")
        if not self.conditioned:
            shape = (len(X), self.num_samples)
            return mean, var, np.broadcast_to(mean[:, None], shape), np.broadcast_to(var[:, None], shape)
        cross = kernel_matrix(X, self.x_star, self.model.hyperparams)
        if V is not None:
            cross = cross - V.T @ self._v_star
        gain = cross / self._c_star
        mean_s = mean[:, None] + gain * (self.y_star - self._m_star)
        var_s = np.maximum(var[:, None] - gain * cross, 0.0)
        return mean, var, mean_s, var_s

    def predictive_moments(self, X):
        """Moments of ``y``: unconditioned ``(m, v + noise)`` and the per-sample
        truncated approximation ``(m_tr, v_tr + noise)``."""
        mean, var, mean_s, var_s = self.latent_moments(X)
        tr = truncated_moments(mean_s, var_s, self.y_star[None, :])
        nv = self.noise_variance
        return mean, var + nv, tr.mean_tr, tr.var_tr + nv

    def conditioned_naturals(self, X) -> GaussianNatural:
        """Natural parameters of every per-sample conditional; arrays ``(N, S)``."""
        _, _, m_tr, v_tr = self.predictive_moments(X)
        return GaussianNatural.from_moments(m_tr, v_tr)


def build_context(model, samples, noise_variance=None, conditioned=True) -> AcquisitionContext:
    return AcquisitionContext(model, samples, noise_variance, conditioned)


def conditional_naturals(model: GpModel, sample: OptimumSample, x, noise_variance: float | None = None) -> GaussianNatural:
    """Reference path for one sample: refit with ``(x*, y*)``, truncate, add noise."""
    nv = model.noise_variance if noise_variance is None else noise_variance
    cond = condition_on_optimum(model, sample)
    pred = predict(cond, x)
    tr = truncated_moments(pred.mean, pred.variance, sample.y_star)
    return GaussianNatural.from_moments(tr.mean_tr, tr.var_tr + nv)


# ---------------------------------------------------------------------------
# acquisition values


def _aes_from_moments(m, V, m_tr, V_tr, alphas):
    alphas = np.asarray(alphas, dtype=float)
    log_i = log_alpha_integral(
        m[:, None, None], V[:, None, None], m_tr[:, :, None], V_tr[:, :, None], alphas[None, None, :]
    )
    gap = np.mean(-np.expm1(log_i), axis=1)
    return np.maximum(gap / ((1.0 - alphas) * alphas), 0.0)


def aes_values(ctx: AcquisitionContext, X, alphas) -> np.ndarray:
    """AES at every row of ``X`` for every alpha; shape ``(N, len(alphas))``."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    check_alpha(alphas)
    m, V, m_tr, V_tr = ctx.predictive_moments(X)
    return _aes_from_moments(m, V, m_tr, V_tr, alphas)


def aes_value(ctx: AcquisitionContext, x, alpha: float) -> float:
    return float(aes_values(ctx, x, [alpha])[0, 0])


def jes_values(ctx: AcquisitionContext, X) -> np.ndarray:
    m, V, m_tr, V_tr = ctx.predictive_moments(X)
    return np.maximum(0.5 * np.mean(np.log(V[:, None]) - np.log(V_tr), axis=1), 0.0)


def jes_value(ctx: AcquisitionContext, x) -> float:
    return float(jes_values(ctx, x)[0])


def mes_values(ctx: AcquisitionContext, X) -> np.ndarray:
    """Entropy reduction when only ``y*_s`` is known (truncation, no conditioning)."""
    X = ctx._points(X)
    mean, var, _ = ctx._base(X)
    tr = truncated_moments(mean[:, None], var[:, None], ctx.y_star[None, :])
    nv = ctx.noise_variance
    return np.maximum(0.5 * np.mean(np.log(var[:, None] + nv) - np.log(tr.var_tr + nv), axis=1), 0.0)


def mes_value(ctx: AcquisitionContext, x) -> float:
    return float(mes_values(ctx, x)[0])


# ---------------------------------------------------------------------------
# maximizer


@dataclass(frozen=True)
class AcqOptimizerConfig:
    """Raw-candidate initialization followed by bounded L-BFGS-B.

    Starting points are drawn from the raw candidates with probabilities
    proportional to ``exp(z / temperature)`` over standardized values; the best
    raw candidate is always among them.
    """

    raw_candidates: int = 200
    restarts: int = 1
    maxiter: int = 200
    temperature: float = 1.0
    fd_step: float = 1e-6


def _select_starts(vals, k, temperature, rng):
    finite = np.isfinite(vals)
    best = int(np.nanargmax(np.where(finite, vals, -np.inf)))
    k = min(k, int(finite.sum()))
    if k <= 1:
        return [best]
    v = vals[finite]
    sd = v.std()
    z = np.zeros_like(vals)
    if sd > 0:
        z[finite] = (v - v.mean()) / sd
    w = np.where(finite, np.exp((z - z[finite].max()) / temperature), 0.0)
    idx = list(rng.choice(len(vals), size=k, replace=False, p=w / w.sum()))
    if best not in idx:
        idx[-1] = best
    return idx


def optimize_acquisition(
    fn: Callable[[np.ndarray], np.ndarray],
    bounds,
    config: AcqOptimizerConfig = AcqOptimizerConfig(),
    seed: int = 0,
):
    """Maximize a batched acquisition ``fn: (N, D) -> (N,)`` over a box.

    Returns ``(x_next, value)``.  The value is never below the best raw
    candidate; a failed local search falls back to that candidate.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    D = len(lo)
    rng = np.random.default_rng(seed)
    raw = rng.uniform(lo, hi, size=(config.raw_candidates, D))
    vals = np.asarray(fn(raw), dtype=float)
    if not np.any(np.isfinite(vals)):
        raise NumericError("acquisition is non-finite at every raw candidate")
    starts = _select_starts(vals, config.restarts, config.temperature, rng)
    best_i = int(np.nanargmax(np.where(np.isfinite(vals), vals, -np.inf)))
    best_x, best_v = raw[best_i].copy(), float(vals[best_i])

    h = config.fd_step * np.where(hi > lo, hi - lo, 1.0)
    probe = np.vstack([np.zeros(D), np.diag(h), -np.diag(h)])

    def neg_value_and_grad(x):
        v = np.asarray(fn(x[None, :] + probe), dtype=float)
        if not np.all(np.isfinite(v)):
            return np.inf, np.zeros(D)
        grad = (v[1 : D + 1] - v[D + 1 :]) / (2.0 * h)
        return -v[0], -grad

    free = hi > lo
    for i in starts:
        x0 = raw[i]
        if not free.any():
            break
        try:
            res = optimize.minimize(
                neg_value_and_grad, x0, jac=True, method="L-BFGS-B",
                bounds=list(zip(lo, hi)), options={"maxiter": config.maxiter},
            )
        except (ValueError, ArithmeticError) as exc:
            logger.warning("acquisition optimization failed, using raw candidate: %s", exc)
            continue
        x = np.clip(res.x, lo, hi)
        v = float(np.asarray(fn(x[None, :]))[0])
        if np.isfinite(v) and v > best_v:
            best_x, best_v = x, v
    return best_x, best_v


def random_acquisition(bounds, seed: int = 0) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float)
    return np.random.default_rng(seed).uniform(bounds[:, 0], bounds[:, 1])


# ---------------------------------------------------------------------------
# ensemble over alpha


@dataclass(frozen=True)
class EnsembleSpec:
    alphas: tuple
    weights: np.ndarray
    maximizers: np.ndarray


def ensemble_prepare(
    ctx: AcquisitionContext,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    optimizer: AcqOptimizerConfig = AcqOptimizerConfig(),
    seed: int = 0,
) -> EnsembleSpec:
    """Maximize each AES component to get its normalizing weight.

    Every component reuses the samples already held by ``ctx``.  Components
    whose maximum is at most 1e-12 are dropped with a warning.
    """
    check_alpha(np.asarray(alphas, dtype=float))
    bounds = ctx.model.data.bounds
    seeds = np.random.SeedSequence(seed).spawn(len(alphas))
    kept, weights, maximizers = [], [], []
    for alpha, ss in zip(alphas, seeds):
        x, w = optimize_acquisition(
            lambda X, a=alpha: aes_values(ctx, X, [a])[:, 0],
            bounds, optimizer, int(ss.generate_state(1)[0]),
        )
        if w <= 1e-12:
            logger.warning("dropping alpha=%g from the ensemble: flat acquisition (max %.3g)", alpha, w)
            continue
        kept.append(float(alpha))
        weights.append(w)
        maximizers.append(x)
    maximizers = np.array(maximizers).reshape(len(kept), ctx.model.dim)
    if kept:
        # A single restart can stall below a component's maximum; every
        # component's maximizer is a free extra candidate for the others.
        cross = aes_values(ctx, maximizers, kept)
        rows = np.argmax(cross, axis=0)
        better = cross[rows, np.arange(len(kept))] > np.array(weights)
        weights = np.where(better, cross[rows, np.arange(len(kept))], weights)
        maximizers = np.where(better[:, None], maximizers[rows], maximizers)
    return EnsembleSpec(tuple(kept), np.asarray(weights, dtype=float), maximizers)


def ensemble_values(spec: EnsembleSpec, ctx: AcquisitionContext, X) -> np.ndarray:
    if not spec.alphas:
        return np.zeros(len(ctx._points(X)))
    return aes_values(ctx, X, spec.alphas) @ (1.0 / spec.weights)


def ensemble_value(spec: EnsembleSpec, ctx: AcquisitionContext, x) -> float:
    return float(ensemble_values(spec, ctx, x)[0])
