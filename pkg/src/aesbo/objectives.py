"""Objective functions: synthetic GP draws, classical benchmarks and noise.

Every objective is posed as a maximization.  Classical test functions that are
usually minimized are negated.  Known optima are always recomputed with
:func:`find_global_max` instead of being trusted as literals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .errors import InvalidArgumentError
from .gp import GpHyperparams
from .sampling import PosteriorFunctionSample, build_rff

Array = np.ndarray


@dataclass(frozen=True)
class Objective:
    """Deterministic function on a box.  ``func`` maps ``(N, D) -> (N,)``."""

    name: str
    dim: int
    bounds: Array
    func: Callable[[Array], Array] = field(repr=False)
    gradient: Optional[Callable[[Array], Array]] = field(default=None, repr=False)
    known_max: Optional[tuple] = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(self.func(x[None, :])[0])
        return self.func(x)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.bounds[:, 0]) and np.all(x <= self.bounds[:, 1]))

    def with_known_max(self, grid_size: Optional[int] = None, seed: int = 0) -> "Objective":
        x, f = find_global_max(self, grid_size, seed)
        return Objective(self.name, self.dim, self.bounds, self.func, self.gradient, (x, f))


class NoisyObjective:
    """Adds i.i.d. Gaussian noise to an :class:`Objective`.

    The noiseless value stays reachable through ``base`` for regret
    computation.
    """

    def __init__(self, base: Objective, noise_variance: float = 0.0, seed: int = 0):
        if noise_variance < 0:
            raise InvalidArgumentError("noise_variance must be non-negative")
        self.base = base
        self.noise_variance = float(noise_variance)
        self._rng = np.random.default_rng(seed)

    def observe(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.base.dim,):
            raise InvalidArgumentError(f"expected a point of dimension {self.base.dim}")
        if not self.base.contains(x):
            raise InvalidArgumentError("query point outside the objective bounds")
        y = self.base(x)
        if self.noise_variance > 0:
            y += float(self._rng.normal(0.0, np.sqrt(self.noise_variance)))
        return y


def find_global_max(obj: Objective, grid_size: Optional[int] = None, seed: int = 0, refine: int = 64):
    """Dense quasi-random grid followed by L-BFGS-B from the best grid points.

    ``grid_size=None`` uses ``D * 10000`` points.  Returns ``(x_opt, f_opt)``.
    """
    D = obj.dim
    n = grid_size if grid_size is not None else D * 10000
    lo, hi = obj.bounds[:, 0], obj.bounds[:, 1]
    pts = qmc.Sobol(D, scramble=True, seed=seed).random_base2(int(np.ceil(np.log2(max(n, 2)))))[:n]
    grid = lo + pts * (hi - lo)
    vals = np.concatenate([obj.func(chunk) for chunk in np.array_split(grid, max(1, n // 20000))])
    order = np.argsort(-vals, kind="stable")[:refine]
    best_x, best_f = grid[order[0]].copy(), float(vals[order[0]])

    def neg(x):
        return -float(obj.func(x[None, :])[0])

    jac = None
    if obj.gradient is not None:
        def jac(x):
            return -np.asarray(obj.gradient(x[None, :]))[0]

    for i in order:
        res = optimize.minimize(neg, grid[i], jac=jac, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                                options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-10})
        f = -float(res.fun)
        if f > best_f:
            best_x, best_f = np.clip(res.x, lo, hi), f
    return best_x, best_f


# ---------------------------------------------------------------------------
# synthetic


def make_synthetic_gp_objective(
    dim: int, seed: int = 0, hp: Optional[GpHyperparams] = None, M: int = 2048
) -> Objective:
    """A fixed random-feature prior draw on ``[0, 1]^dim``.

    Defaults to lengthscale 0.25 and amplitude 1.
    """
    if dim < 1:
        raise InvalidArgumentError("dim must be positive")
    if hp is None:
        hp = GpHyperparams(np.full(dim, 0.25), 1.0, 1e-6)
    if hp.dim != dim:
        raise InvalidArgumentError("hyperparameter dimension does not match dim")
    ss = np.random.SeedSequence(seed)
    basis_seed, weight_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    basis = build_rff(hp, M, basis_seed)
    w = np.random.default_rng(weight_seed).standard_normal(M)
    sample = PosteriorFunctionSample(basis, w, 0.0)
    bounds = np.tile([0.0, 1.0], (dim, 1))
    return Objective(f"synthetic{dim}d", dim, bounds, sample, sample.gradient)


# ---------------------------------------------------------------------------
# benchmarks
# Coefficients follow the standard published definitions of each test function.

_H3_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_H3_P = 1e-4 * np.array([[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]])

_H6_A = np.array([
    [10, 3, 17, 3.5, 1.7, 8],
    [0.05, 10, 17, 0.1, 8, 14],
    [3, 3.5, 1.7, 10, 17, 8],
    [17, 8, 0.05, 10, 0.1, 14],
])
_H6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])


def _hartmann(A, P, alpha):
    def f(X):
        d = X[:, None, :] - P[None, :, :]
        return np.exp(-np.einsum("nkd,kd->nk", d * d, A)) @ alpha

    def grad(X):
        d = X[:, None, :] - P[None, :, :]
        e = np.exp(-np.einsum("nkd,kd->nk", d * d, A)) * alpha
        return -2.0 * np.einsum("nk,nkd->nd", e, d * A[None])

    return f, grad


def _styblinski_tang(X):
    return -0.5 * np.sum(X**4 - 16.0 * X**2 + 5.0 * X, axis=1)


def _styblinski_tang_grad(X):
    return -0.5 * (4.0 * X**3 - 32.0 * X + 5.0)


def _cosine(X):
    return 0.1 * np.sum(np.cos(5.0 * np.pi * X), axis=1) - np.sum(X**2, axis=1)


def _cosine_grad(X):
    return -0.5 * np.pi * np.sin(5.0 * np.pi * X) - 2.0 * X


# Cheap stand-in for the neural-network tuning problems: a fixed mixture of
# Gaussian bumps over a 5D box with a smooth trend.
_NN_CENTERS = np.random.default_rng(20240).uniform(0.1, 0.9, size=(6, 5))
_NN_HEIGHTS = np.array([1.0, 0.8, 0.7, 0.6, 0.5, 0.9])
_NN_WIDTH = 0.15


def _nn_surrogate(X):
    d2 = ((X[:, None, :] - _NN_CENTERS[None]) ** 2).sum(-1)
    return np.exp(-0.5 * d2 / _NN_WIDTH**2) @ _NN_HEIGHTS - 0.2 * np.sum(X, axis=1)


def _nn_surrogate_grad(X):
    diff = X[:, None, :] - _NN_CENTERS[None]
    e = np.exp(-0.5 * (diff**2).sum(-1) / _NN_WIDTH**2) * _NN_HEIGHTS
    return -np.einsum("nk,nkd->nd", e, diff) / _NN_WIDTH**2 - 0.2


def _box(lo, hi, d):
    return np.tile([lo, hi], (d, 1)).astype(float)


_H3 = _hartmann(_H3_A, _H3_P, _H3_ALPHA)
_H6 = _hartmann(_H6_A, _H6_P, _H3_ALPHA)

_BENCHMARKS = {
    "hartmann3": lambda: Objective("hartmann3", 3, _box(0, 1, 3), *_H3),
    "hartmann6": lambda: Objective("hartmann6", 6, _box(0, 1, 6), *_H6),
    "styblinski_tang4": lambda: Objective("styblinski_tang4", 4, _box(-5, 5, 4), _styblinski_tang, _styblinski_tang_grad),
    "cosine8": lambda: Objective("cosine8", 8, _box(-1, 1, 8), _cosine, _cosine_grad),
    "nn_surrogate5": lambda: Objective("nn_surrogate5", 5, _box(0, 1, 5), _nn_surrogate, _nn_surrogate_grad),
}


@lru_cache(maxsize=None)
def benchmark(name: str) -> Objective:
    """Named benchmark with ``known_max`` filled in by the grid oracle."""
    if name not in _BENCHMARKS:
        raise InvalidArgumentError(f"unknown benchmark {name!r}; choose from {sorted(_BENCHMARKS)}")
    return _BENCHMARKS[name]().with_known_max()


def list_objectives() -> list[str]:
    return sorted(_BENCHMARKS) + ["synthetic<D>d (e.g. synthetic4d)"]


def check_objective_name(name: str) -> None:
    """Raise :class:`InvalidArgumentError` unless ``name`` resolves, without building it."""
    if name.startswith("synthetic") and name.endswith("d"):
        digits = name[len("synthetic"):-1]
        if digits.isdigit() and int(digits) >= 1:
            return
        raise InvalidArgumentError(f"bad synthetic objective name {name!r}")
    if name not in _BENCHMARKS:
        raise InvalidArgumentError(f"unknown objective {name!r}; choose from {list_objectives()}")


def get_objective(name: str, seed: int = 0) -> Objective:
    """Resolve a registry name.  ``syntheticNd`` builds a GP draw seeded by ``seed``."""
    check_objective_name(name)
    if name.startswith("synthetic"):
        return make_synthetic_gp_objective(int(name[len("synthetic"):-1]), seed).with_known_max()
    return benchmark(name)
