"""Alpha-divergence primitives for univariate Gaussians.

Gaussians are handled either in natural parameters ``(mean / var, 1 / var)``
with the log-normalizer ``g``, or directly in moments.  The moment form of
the ratio integral is the one used on hot paths: it avoids the cancellation
between large ``g`` terms that appears when one of the variances is tiny.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError

LOG_2PI = math.log(2.0 * math.pi)
ALPHA_MIN = 1e-4
ALPHA_MAX = 1.0 - 1e-4


@dataclass(frozen=True)
class GaussianNatural:
    eta1: float
    eta2: float

    def __post_init__(self):
        if not np.all(np.asarray(self.eta2) > 0):
            raise DomainError("eta2 must be positive")

    @classmethod
    def from_moments(cls, mean, variance) -> "GaussianNatural":
        variance = np.asarray(variance, dtype=float)
        if not np.all(variance > 0):
            raise DomainError("variance must be positive")
        return cls(np.asarray(mean) / variance, 1.0 / variance)

    def to_moments(self):
        var = 1.0 / np.asarray(self.eta2, dtype=float)
        return np.asarray(self.eta1) * var, var

    def mix(self, other: "GaussianNatural", alpha: float) -> "GaussianNatural":
        """Natural parameters of ``(1 - alpha) * self + alpha * other``."""
        return GaussianNatural(
            (1.0 - alpha) * self.eta1 + alpha * other.eta1,
            (1.0 - alpha) * self.eta2 + alpha * other.eta2,
        )


def check_alpha(alpha) -> None:
    a = np.asarray(alpha, dtype=float)
    if not np.all((a >= ALPHA_MIN) & (a <= ALPHA_MAX)):
        raise DomainError(f"alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}], got {alpha}")


def alpha_log(x, alpha):
    """Tsallis logarithm ``(x**(1 - alpha) - 1) / (1 - alpha)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("alpha_log is defined for x > 0 only")
    if alpha == 1:
        raise DomainError("alpha_log needs alpha != 1; use numpy.log")
    t = (1.0 - alpha) * np.log(x)
    out = np.expm1(t) / (1.0 - alpha)
    return float(out) if out.ndim == 0 else out


def log_normalizer(eta: GaussianNatural):
    eta1 = np.asarray(eta.eta1, dtype=float)
    eta2 = np.asarray(eta.eta2, dtype=float)
    if np.any(eta2 <= 0):
        raise DomainError("eta2 must be positive")
    out = 0.5 * LOG_2PI - 0.5 * np.log(eta2) + 0.5 * eta1 * eta1 / eta2
    return float(out) if out.ndim == 0 else out


def alpha_integral_factor(eta: GaussianNatural, eta_star: GaussianNatural, alpha):
    """``∫ p(y) (p*(y) / p(y))**alpha dy`` through the log-normalizer identity.

    ``eta`` parametrizes ``p`` and ``eta_star`` parametrizes ``p*``.
    """
    check_alpha(alpha)
    mixed = eta.mix(eta_star, alpha)
    expo = (
        (alpha - 1.0) * log_normalizer(eta)
        - alpha * log_normalizer(eta_star)
        + log_normalizer(mixed)
    )
    out = np.exp(np.minimum(expo, 0.0))
    return float(out) if np.ndim(out) == 0 else out


def log_alpha_integral(mean0, var0, mean1, var1, alpha):
    """Log of ``∫ N(y|mean0,var0)**(1-alpha) N(y|mean1,var1)**alpha dy``.

    Broadcasts over all arguments.  Equal to the log of
    :func:`alpha_integral_factor` for the matching natural parameters, but
    stable when one variance is orders of magnitude below the other.
    """
    var0 = np.asarray(var0, dtype=float)
    var1 = np.asarray(var1, dtype=float)
    blend = (1.0 - alpha) * var1 + alpha * var0
    log_norm = 0.5 * (alpha * np.log(var0) + (1.0 - alpha) * np.log(var1) - np.log(blend))
    diff = np.asarray(mean0, dtype=float) - np.asarray(mean1, dtype=float)
    out = log_norm - 0.5 * alpha * (1.0 - alpha) * diff * diff / blend
    return np.minimum(out, 0.0)


def gaussian_alpha_divergence(p, q, alpha) -> float:
    """Amari alpha-divergence ``D_alpha(p || q)`` between two Gaussians.

    ``p`` and ``q`` are ``(mean, variance)`` pairs.
    """
    check_alpha(alpha)
    (mp, vp), (mq, vq) = p, q
    if not (vp > 0 and vq > 0):
        raise DomainError("variances must be positive")
    # ∫ q^(1-alpha) p^alpha
    log_i = log_alpha_integral(mq, vq, mp, vp, alpha)
    return float(max(-np.expm1(log_i), 0.0) / ((1.0 - alpha) * alpha))


def gaussian_kl(p, q) -> float:
    """Closed-form ``KL(p || q)`` for ``(mean, variance)`` pairs."""
    (mp, vp), (mq, vq) = p, q
    return 0.5 * (math.log(vq / vp) + vp / vq + (mp - mq) ** 2 / vq - 1.0)


def gaussian_pdf(y, mean, variance):
    return np.exp(-0.5 * (y - mean) ** 2 / variance) / np.sqrt(2.0 * math.pi * variance)


def quad_alpha_integral(mean0, var0, mean1, var1, alpha, width: float = 12.0) -> float:
    """Adaptive-quadrature oracle for :func:`log_alpha_integral` (not logged).

    Integrates over the union of the ``±width`` standard-deviation windows of
    both Gaussians, with breakpoints at the two means.
    """
    s0, s1 = math.sqrt(var0), math.sqrt(var1)
    a = min(mean0 - width * s0, mean1 - width * s1)
    b = max(mean0 + width * s0, mean1 + width * s1)

    def integrand(y):
        # In log space: a density that underflows can still have a non-negligible small power.
        log0 = -0.5 * (y - mean0) ** 2 / var0 - 0.5 * math.log(2.0 * math.pi * var0)
        log1 = -0.5 * (y - mean1) ** 2 / var1 - 0.5 * math.log(2.0 * math.pi * var1)
        return math.exp((1.0 - alpha) * log0 + alpha * log1)

    pts = sorted({mean0, mean1})
    val, _ = integrate.quad(integrand, a, b, points=pts, epsabs=1e-13, epsrel=1e-12, limit=500)
    return val
