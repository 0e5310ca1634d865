"""Approximate posterior samples of the optimum via random Fourier features.

A Matérn-5/2 kernel has a multivariate Student-t spectral density with five
degrees of freedom, so frequencies are drawn as ``z * sqrt(5 / chi2_5)``
scaled by the inverse lengthscales.  Posterior weights are drawn with a
pathwise (Matheron) update of a prior weight draw, which is exact for the
finite feature model and only needs an ``n x n`` solve.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.stats import qmc

from .errors import InvalidArgumentError
from .gp import GpHyperparams, GpModel, cholesky_with_jitter

DEFAULT_NUM_FEATURES = 1024
STUDENT_DOF = 5.0


@dataclass(frozen=True)
class RffBasis:
    frequencies: np.ndarray  # (M, D), already divided by the lengthscales
    phases: np.ndarray  # (M,)
    amplitude: float

    @property
    def num_features(self) -> int:
        return self.phases.shape[0]

    @property
    def scale(self) -> float:
        return float(np.sqrt(2.0 * self.amplitude / self.num_features))

    def features(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.scale * np.cos(X @ self.frequencies.T + self.phases)


@dataclass(frozen=True)
class PosteriorFunctionSample:
    basis: RffBasis
    weights: np.ndarray
    mean_constant: float = 0.0

    def __call__(self, X) -> np.ndarray:
        return self.basis.features(X) @ self.weights + self.mean_constant

    def gradient(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        z = X @ self.basis.frequencies.T + self.basis.phases
        return -self.basis.scale * (np.sin(z) * self.weights) @ self.basis.frequencies


@dataclass(frozen=True)
class OptimumSample:
    x_star: np.ndarray
    y_star: float


@dataclass(frozen=True)
class OptimizerBudget:
    """Search budget for maximizing a sampled function.

    ``num_candidates=None`` means ``1000 * D`` quasi-uniform candidates.
    """

    num_candidates: Optional[int] = None
    num_starts: int = 5
    max_steps: int = 100


def build_rff(hp: GpHyperparams, M: int = DEFAULT_NUM_FEATURES, seed: int = 0) -> RffBasis:
    if M < 1:
        raise InvalidArgumentError("need at least one feature")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((M, hp.dim))
    u = rng.chisquare(STUDENT_DOF, size=(M, 1))
    omega = z * np.sqrt(STUDENT_DOF / u)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=M)
    return RffBasis(omega / hp.lengthscales, phases, hp.amplitude)


def _posterior_weights(model: GpModel, basis: RffBasis, rng, num: int) -> np.ndarray:
    """``num`` weight-space posterior draws as columns of an ``(M, num)`` array."""
    M = basis.num_features
    w0 = rng.standard_normal((M, num))
    data = model.data
    if len(data) == 0:
        return w0
    Phi = basis.features(data.inputs)
    noise = model.noise_diag
    eps = rng.standard_normal((len(data), num)) * np.sqrt(noise)[:, None]
    L, _ = cholesky_with_jitter(Phi @ Phi.T + np.diag(noise))
    resid = (data.outputs - model.hyperparams.mean_constant)[:, None] - Phi @ w0 - eps
    return w0 + Phi.T @ linalg.cho_solve((L, True), resid, check_finite=False)


def sample_posterior_function(model: GpModel, basis: RffBasis, seed: int = 0) -> PosteriorFunctionSample:
    rng = np.random.default_rng(seed)
    w = _posterior_weights(model, basis, rng, 1)[:, 0]
    return PosteriorFunctionSample(basis, w, model.hyperparams.mean_constant)


def _candidates(bounds: np.ndarray, num: int, seed: int) -> np.ndarray:
    dim = bounds.shape[0]
    sobol = qmc.Sobol(dim, scramble=True, seed=seed)
    m = int(np.ceil(np.log2(max(num, 2))))
    pts = sobol.random_base2(m)[:num]
    return bounds[:, 0] + pts * (bounds[:, 1] - bounds[:, 0])


def _batched_ascent(basis, W, owner, X, bounds, mean_constant, max_steps):
    """Projected Levenberg-Marquardt ascent of many RFF functions at once.

    Row ``i`` of ``X`` climbs the function whose weights are ``W[:, owner[i]]``,
    using the analytic gradient and Hessian of the feature expansion.  Steps
    are only accepted when they improve the value, so the result never falls
    below the starting point.
    """
    lo, hi = bounds[:, 0], bounds[:, 1]
    D = X.shape[1]
    scale = float(np.max(np.where(hi > lo, hi - lo, 1.0)))
    Wq = W[:, owner].T  # (k, M)
    F = basis.frequencies
    outer = F[:, :, None] * F[:, None, :]  # (M, D, D)

    def value(P, rows):
        z = P @ F.T + basis.phases
        return basis.scale * np.einsum("km,km->k", np.cos(z), Wq[rows]) + mean_constant

    def derivatives(P, rows):
        z = P @ F.T + basis.phases
        c = np.cos(z) * Wq[rows]
        grad = -basis.scale * (np.sin(z) * Wq[rows]) @ F
        hess = -basis.scale * np.einsum("km,mij->kij", c, outer)
        return grad, hess

    X = X.copy()
    k = len(X)
    f = value(X, slice(None))
    damping = np.ones(k)
    active = np.ones(k, dtype=bool)
    stale = np.ones(k, dtype=bool)
    g = np.zeros((k, D))
    H = np.zeros((k, D, D))
    eye = np.eye(D)
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        upd = idx[stale[idx]]
        if upd.size:
            g[upd], H[upd] = derivatives(X[upd], upd)
            stale[upd] = False
        gi, Hi, Xi = g[idx], H[idx], X[idx]
        # Coordinates pinned at a bound with the gradient pointing outwards stay fixed.
        pinned = ((Xi >= hi) & (gi > 0)) | ((Xi <= lo) & (gi < 0))
        gi = np.where(pinned, 0.0, gi)
        curv = np.max(np.linalg.eigvalsh(Hi), axis=1)
        shift = np.maximum(curv, 0.0) + damping[idx] * (np.abs(curv) + 1e-12) + 1e-12
        A = -Hi + shift[:, None, None] * eye
        mask = pinned[:, :, None] | pinned[:, None, :]
        A = np.where(mask, eye, A)
        p = np.linalg.solve(A, gi[:, :, None])[:, :, 0]
        trial = np.clip(Xi + p, lo, hi)
        f_new = value(trial, idx)
        better = f_new > f[idx]
        moved = np.max(np.abs(trial - Xi), axis=1)
        X[idx[better]] = trial[better]
        f[idx[better]] = f_new[better]
        stale[idx[better]] = True
        damping[idx] = np.where(better, damping[idx] / 3.0, damping[idx] * 4.0)
        done = (moved <= 1e-10 * scale) | (damping[idx] > 1e8) | (np.abs(gi).max(axis=1) == 0)
        active[idx] = ~done
    return X, f


def _locate_batch(basis, W, mean_constant, bounds, budget: OptimizerBudget, seed: int, extra=None):
    """Maximize every column of ``W``; returns ``(x_star (S, D), y_star (S,))``."""
    bounds = np.asarray(bounds, dtype=float)
    dim = bounds.shape[0]
    if np.any(bounds[:, 1] < bounds[:, 0]):
        raise InvalidArgumentError("bounds must satisfy low <= high")
    num = budget.num_candidates if budget.num_candidates is not None else 1000 * dim
    cand = _candidates(bounds, num, seed)
    if extra is not None and len(extra):
        cand = np.vstack([cand, extra])
    vals = basis.features(cand) @ W + mean_constant  # (C, S)
    S = W.shape[1]
    best_idx = np.argmax(vals, axis=0)
    x_best = cand[best_idx]
    y_best = vals[best_idx, np.arange(S)]
    k = min(budget.num_starts, len(cand))
    if budget.max_steps <= 0 or k == 0:
        return x_best, y_best
    top = np.argsort(-vals, axis=0, kind="stable")[:k]  # (k, S)
    owner = np.repeat(np.arange(S)[None, :], k, axis=0).ravel()
    starts = cand[top.ravel()]
    X, f = _batched_ascent(basis, W, owner, starts, bounds, mean_constant, budget.max_steps)
    f = f.reshape(k, S)
    X = X.reshape(k, S, dim)
    j = np.argmax(f, axis=0)
    x_ref = X[j, np.arange(S)]
    y_ref = f[j, np.arange(S)]
    # Re-evaluate so y_star is exactly the sample value at x_star.
    y_ref = np.einsum("sm,ms->s", basis.features(x_ref), W) + mean_constant
    keep = y_ref >= y_best
    return np.where(keep[:, None], x_ref, x_best), np.where(keep, y_ref, y_best)


def locate_sample_optimum(
    sample: PosteriorFunctionSample, bounds, budget: OptimizerBudget = OptimizerBudget(), seed: int = 0
) -> OptimumSample:
    """Grid search over quasi-uniform candidates, then local refinement.

    Ties keep the first candidate found.
    """
    W = sample.weights[:, None]
    x, y = _locate_batch(sample.basis, W, sample.mean_constant, bounds, budget, seed)
    return OptimumSample(x[0], float(y[0]))


def draw_optimum_set(
    model: GpModel,
    S: int,
    M: int = DEFAULT_NUM_FEATURES,
    seed: int = 0,
    budget: OptimizerBudget = OptimizerBudget(),
) -> list[OptimumSample]:
    """Draw ``S`` samples of ``{x*, y*}`` from the posterior.

    All ``S`` functions share one feature basis and differ in their posterior
    weights; observed inputs are added to the candidate set.
    """
    if S < 0:
        raise InvalidArgumentError("S must be non-negative")
    if S == 0:
        return []
    ss = np.random.SeedSequence(seed)
    basis_seed, weight_seed, cand_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    basis = build_rff(model.hyperparams, M, basis_seed)
    W = _posterior_weights(model, basis, np.random.default_rng(weight_seed), S)
    xs, ys = _locate_batch(
        basis, W, model.hyperparams.mean_constant, model.data.bounds, budget, cand_seed,
        extra=model.data.inputs,
    )
    return [OptimumSample(xs[s].copy(), float(ys[s])) for s in range(S)]
