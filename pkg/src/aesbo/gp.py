"""Gaussian-process regression with a Matérn-5/2 ARD kernel.

Models are immutable: :func:`fit` and :func:`build_model` return a new
:class:`GpModel`, and :func:`condition_on_optimum` returns another one with
the extra noiseless observation folded into the Cholesky factor.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .errors import DataError, DomainError, InvalidArgumentError, NumericError

logger = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)
# Added to the diagonal (relative to its mean) when a plain Cholesky fails.
JITTER_LADDER = tuple(10.0**e for e in range(-10, -3))
_VAR_FLOOR = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Observed (input, noisy output) pairs inside a box.

    ``bounds`` has shape ``(D, 2)`` with columns ``low, high``.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        bounds = np.array(self.bounds, dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2:
            raise InvalidArgumentError(f"bounds must have shape (D, 2), got {bounds.shape}")
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise InvalidArgumentError("bounds must satisfy low <= high")
        dim = bounds.shape[0]
        inputs = np.array(self.inputs, dtype=float).reshape(-1, dim)
        outputs = np.array(self.outputs, dtype=float).reshape(-1)
        if inputs.shape[0] != outputs.shape[0]:
            raise InvalidArgumentError(
                f"{inputs.shape[0]} inputs but {outputs.shape[0]} outputs"
            )
        if inputs.size:
            tol = 1e-9 * (1.0 + bounds[:, 1] - bounds[:, 0])
            if np.any(inputs < bounds[:, 0] - tol) or np.any(inputs > bounds[:, 1] + tol):
                raise InvalidArgumentError("every input must lie inside bounds")
        object.__setattr__(self, "bounds", _frozen(bounds))
        object.__setattr__(self, "inputs", _frozen(inputs))
        object.__setattr__(self, "outputs", _frozen(outputs))

    @classmethod
    def empty(cls, bounds) -> "Dataset":
        bounds = np.asarray(bounds, dtype=float)
        return cls(np.empty((0, bounds.shape[0])), np.empty(0), bounds)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def __len__(self) -> int:
        return self.outputs.shape[0]

    def append(self, x, y) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        y = np.asarray(y, dtype=float).reshape(-1)
        return Dataset(
            np.vstack([self.inputs, x]), np.concatenate([self.outputs, y]), self.bounds
        )


@dataclass(frozen=True)
class GpHyperparams:
    lengthscales: np.ndarray
    amplitude: float
    noise_variance: float
    mean_constant: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.array(self.lengthscales, dtype=float))
        if np.any(~np.isfinite(ls)) or np.any(ls <= 0):
            raise DomainError("lengthscales must be positive")
        if not self.amplitude > 0:
            raise DomainError("amplitude must be positive")
        if not self.noise_variance >= 0:
            raise DomainError("noise_variance must be non-negative")
        object.__setattr__(self, "lengthscales", _frozen(ls))
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "mean_constant", float(self.mean_constant))

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    def replace(self, **changes) -> "GpHyperparams":
        values = dict(
            lengthscales=self.lengthscales,
            amplitude=self.amplitude,
            noise_variance=self.noise_variance,
            mean_constant=self.mean_constant,
        )
        values.update(changes)
        return GpHyperparams(**values)


@dataclass(frozen=True)
class PredictiveGaussian:
    """Latent predictive moments; arrays for batched queries, floats otherwise."""

    mean: np.ndarray
    variance: np.ndarray
    with_noise_variance: np.ndarray
    out_of_bounds: np.ndarray = field(default=False)


@dataclass(frozen=True)
class GpModel:
    """A GP conditioned on ``data`` under fixed ``hyperparams``.

    ``noise_diag`` holds the per-observation noise variance; it equals
    ``hyperparams.noise_variance`` for real observations and 0 for noiseless
    pseudo-observations added by :func:`condition_on_optimum`.
    """

    data: Dataset
    hyperparams: GpHyperparams
    chol: np.ndarray
    alpha_vec: np.ndarray
    noise_diag: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.data.dim

    @property
    def noise_variance(self) -> float:
        return self.hyperparams.noise_variance


# ---------------------------------------------------------------------------
# kernel


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise InvalidArgumentError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


def _scaled_sq_diffs(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    diff = (X1[:, None, :] - X2[None, :, :]) / lengthscales
    return diff * diff


def _matern52_of_r(r: np.ndarray, amplitude: float) -> np.ndarray:
    return amplitude * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def kernel_matrix(X1, X2, hp: GpHyperparams) -> np.ndarray:
    """Matérn-5/2 ARD covariance between the rows of ``X1`` and ``X2``."""
    X1 = _as_points(X1, hp.dim)
    X2 = _as_points(X2, hp.dim)
    r = np.sqrt(_scaled_sq_diffs(X1, X2, hp.lengthscales).sum(-1))
    return _matern52_of_r(r, hp.amplitude)


def kernel_eval(x, x2, hp: GpHyperparams) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.shape != (hp.dim,):
        raise InvalidArgumentError(
            f"kernel_eval needs two vectors of length {hp.dim}, got {x.shape} and {x2.shape}"
        )
    return float(kernel_matrix(x, x2, hp)[0, 0])


def kernel_grad_x(x, X2, hp: GpHyperparams) -> np.ndarray:
    """Gradient of ``k(x, X2[j])`` with respect to ``x``; shape ``(len(X2), D)``."""
    x = _as_points(x, hp.dim)[0]
    X2 = _as_points(X2, hp.dim)
    ls2 = hp.lengthscales**2
    diff = x[None, :] - X2
    r = np.sqrt(((diff**2) / ls2).sum(-1))
    coef = -hp.amplitude * (5.0 / 3.0) * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)
    return coef[:, None] * diff / ls2


# ---------------------------------------------------------------------------
# linear algebra


def cholesky_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, climbing :data:`JITTER_LADDER` on failure."""
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    try:
        return linalg.cholesky(K, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    for rel in JITTER_LADDER:
        jitter = rel * scale
        try:
            L = linalg.cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        logger.debug("Cholesky needed jitter %.1e", jitter)
        return L, jitter
    raise NumericError("Cholesky failed after the full jitter ladder")


def build_model(data: Dataset, hp: GpHyperparams, noise_diag=None) -> GpModel:
    """Factorize ``K_n + diag(noise)`` for fixed hyperparameters."""
    if hp.dim != data.dim:
        raise InvalidArgumentError("hyperparameter and data dimensions differ")
    n = len(data)
    if noise_diag is None:
        noise_diag = np.full(n, hp.noise_variance)
    noise_diag = np.asarray(noise_diag, dtype=float).reshape(n)
    K = kernel_matrix(data.inputs, data.inputs, hp) + np.diag(noise_diag)
    L, jitter = cholesky_with_jitter(K)
    resid = data.outputs - hp.mean_constant
    alpha_vec = linalg.cho_solve((L, True), resid, check_finite=False) if n else np.zeros(0)
    return GpModel(data, hp, _frozen(L), _frozen(alpha_vec), _frozen(noise_diag), jitter)


def prior_model(bounds, hp: GpHyperparams) -> GpModel:
    return build_model(Dataset.empty(bounds), hp)


# ---------------------------------------------------------------------------
# prediction


def predict(model: GpModel, x) -> PredictiveGaussian:
    """Latent predictive mean and variance at one point or a batch of points."""
    single = np.ndim(x) == 1
    X = _as_points(x, model.dim)
    hp = model.hyperparams
    b = model.data.bounds
    oob = np.any((X < b[:, 0]) | (X > b[:, 1]), axis=1)
    if len(model.data) == 0:
        mean = np.full(len(X), hp.mean_constant)
        var = np.full(len(X), hp.amplitude)
    else:
        Ks = kernel_matrix(X, model.data.inputs, hp)
        mean = hp.mean_constant + Ks @ model.alpha_vec
        V = linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
        var = np.clip(hp.amplitude - np.einsum("ij,ij->j", V, V), 0.0, hp.amplitude)
    noisy = var + hp.noise_variance
    if single:
        return PredictiveGaussian(float(mean[0]), float(var[0]), float(noisy[0]), bool(oob[0]))
    return PredictiveGaussian(mean, var, noisy, oob)


def posterior_covariance(model: GpModel, X1, X2) -> np.ndarray:
    """Latent posterior covariance matrix between two point sets."""
    X1 = _as_points(X1, model.dim)
    X2 = _as_points(X2, model.dim)
    hp = model.hyperparams
    prior = kernel_matrix(X1, X2, hp)
    if len(model.data) == 0:
        return prior
    A = linalg.solve_triangular(
        model.chol, kernel_matrix(model.data.inputs, X1, hp), lower=True, check_finite=False
    )
    B = linalg.solve_triangular(
        model.chol, kernel_matrix(model.data.inputs, X2, hp), lower=True, check_finite=False
    )
    return prior - A.T @ B


def condition_on_optimum(model: GpModel, sample) -> GpModel:
    """Add ``(x*, y*)`` as a noiseless observation and refactorize."""
    x_star = np.asarray(sample.x_star, dtype=float).reshape(1, model.dim)
    data = model.data.append(x_star, float(sample.y_star))
    noise = np.concatenate([model.noise_diag, [0.0]])
    return build_model(data, model.hyperparams, noise)


# ---------------------------------------------------------------------------
# marginal likelihood and fitting


def _lml_and_grad(X, y, ls, amp, noise, mean, want_grad):
    n = len(y)
    s = _scaled_sq_diffs(X, X, ls)
    r = np.sqrt(s.sum(-1))
    e = np.exp(-SQRT5 * r)
    Kf = amp * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * e
    L, _ = cholesky_with_jitter(Kf + noise * np.eye(n))
    resid = y - mean
    a = linalg.cho_solve((L, True), resid, check_finite=False)
    lml = -0.5 * resid @ a - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI
    if not want_grad:
        return lml, None
    W = np.outer(a, a) - linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    common = amp * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e
    g_ls = 0.5 * np.einsum("ij,ijd->d", W * common, s)
    g_amp = 0.5 * np.sum(W * Kf)
    g_noise = 0.5 * noise * np.trace(W)
    g_mean = a.sum()
    return lml, np.concatenate([g_ls, [g_amp, g_noise, g_mean]])


def log_marginal_likelihood(data: Dataset, hp: GpHyperparams, return_grad: bool = False):
    """Gaussian log marginal likelihood of ``data.outputs`` under ``hp``.

    With ``return_grad`` the gradient is taken with respect to
    ``(log lengthscales..., log amplitude, log noise_variance, mean_constant)``.
    """
    if hp.dim != data.dim:
        raise InvalidArgumentError("hyperparameter and data dimensions differ")
    if len(data) == 0:
        return (0.0, np.zeros(hp.dim + 3)) if return_grad else 0.0
    lml, grad = _lml_and_grad(
        data.inputs,
        data.outputs,
        hp.lengthscales,
        hp.amplitude,
        hp.noise_variance,
        hp.mean_constant,
        return_grad,
    )
    return (float(lml), grad) if return_grad else float(lml)


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameter-fitting options.

    ``noise_variance`` fixes the noise instead of fitting it (known-noise mode).
    ``warm_start`` seeds the first optimizer start, e.g. with the previous
    iteration's hyperparameters.
    """

    restarts: int = 5
    seed: int = 0
    noise_variance: Optional[float] = None
    maxiter: int = 200
    warm_start: Optional[GpHyperparams] = None


def default_hyperparams(data: Dataset, noise_variance: Optional[float] = None) -> GpHyperparams:
    width = data.bounds[:, 1] - data.bounds[:, 0]
    width = np.where(width > 0, width, 1.0)
    mean = float(data.outputs[0]) if len(data) == 1 else 0.0
    noise = 1e-6 if noise_variance is None else noise_variance
    return GpHyperparams(0.2 * width, 1.0, noise, mean)


def fit(data: Dataset, config: FitConfig = FitConfig()) -> GpModel:
    """Maximum-marginal-likelihood fit with multi-start bounded L-BFGS-B."""
    if not np.all(np.isfinite(data.outputs)):
        raise DataError("outputs must be finite")
    fixed_noise = config.noise_variance
    if len(data) < 2:
        return build_model(data, default_hyperparams(data, fixed_noise))

    X, y = data.inputs, data.outputs
    D = data.dim
    width = data.bounds[:, 1] - data.bounds[:, 0]
    width = np.where(width > 0, width, 1.0)
    var_y = max(float(np.var(y)), _VAR_FLOOR)
    spread = float(np.ptp(y)) + math.sqrt(var_y)

    lo = np.concatenate(
        [np.log(1e-3 * width), [math.log(1e-3 * var_y), math.log(1e-8)], [y.min() - spread]]
    )
    hi = np.concatenate(
        [np.log(1e3 * width), [math.log(1e3 * var_y), math.log(var_y)], [y.max() + spread]]
    )
    free = np.ones(D + 3, dtype=bool)
    if fixed_noise is not None:
        free[D + 1] = False
        log_noise = math.log(max(fixed_noise, 1e-300))

    def unpack(theta):
        full = np.empty(D + 3)
        full[free] = theta
        if fixed_noise is not None:
            full[D + 1] = log_noise
        return full

    def objective(theta):
        full = unpack(theta)
        try:
            lml, grad = _lml_and_grad(
                X, y, np.exp(full[:D]), math.exp(full[D]),
                fixed_noise if fixed_noise is not None else math.exp(full[D + 1]),
                full[D + 2], True,
            )
        except NumericError:
            return 1e25, np.zeros(int(free.sum()))
        if not np.isfinite(lml):
            return 1e25, np.zeros(int(free.sum()))
        return -lml, -grad[free]

    if config.warm_start is not None:
        w = config.warm_start
        init = np.concatenate(
            [np.log(w.lengthscales), [math.log(w.amplitude), math.log(max(w.noise_variance, 1e-300))],
             [w.mean_constant]]
        )
    else:
        init = np.concatenate(
            [np.log(0.2 * width), [math.log(var_y), math.log(1e-3 * var_y)], [float(y.mean())]]
        )
    init = np.clip(init, lo, hi)

    rng = np.random.default_rng(config.seed)
    starts = [init]
    for _ in range(config.restarts):
        start = np.concatenate(
            [
                rng.uniform(np.log(0.02 * width), np.log(2.0 * width)),
                [rng.uniform(math.log(0.1 * var_y), math.log(10.0 * var_y)),
                 rng.uniform(math.log(1e-8), math.log(var_y))],
                [float(y.mean()) + 0.5 * math.sqrt(var_y) * rng.standard_normal()],
            ]
        )
        starts.append(np.clip(start, lo, hi))

    bounds = list(zip(lo[free], hi[free]))
    best_theta, best_val = init[free], objective(init[free])[0]
    init_val = best_val
    for start in starts:
        try:
            res = optimize.minimize(
                objective, start[free], jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": config.maxiter},
            )
        except (ValueError, FloatingPointError) as exc:  # pragma: no cover - defensive
            logger.debug("hyperparameter restart failed: %s", exc)
            continue
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, float(res.fun)
    if best_val >= 1e25:
        raise NumericError("no hyperparameter setting gave a valid Cholesky factor")
    logger.debug("LML improved from %.4g to %.4g", -init_val, -best_val)

    full = unpack(best_theta)
    hp = GpHyperparams(
        np.exp(full[:D]),
        math.exp(full[D]),
        fixed_noise if fixed_noise is not None else math.exp(full[D + 1]),
        full[D + 2],
    )
    return build_model(data, hp)
