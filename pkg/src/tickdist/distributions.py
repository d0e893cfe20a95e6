"""Standardized innovation distributions: normal, Student-t, skew Student-t.

Every density here has zero mean and unit variance so it can standardize
volatility-model residuals directly.  The skewed variant follows the
Fernandez-Steel construction: a symmetric unit-variance t density is scaled
by xi on one side of the mode and by 1/xi on the other, then shifted and
rescaled back to zero mean / unit variance.  xi = 1 recovers the symmetric
t exactly, and large nu recovers the normal.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy import integrate, stats
from scipy.special import gammaln

_LOG_2PI = float(np.log(2.0 * np.pi))
_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


class Innovation(Enum):
    NORM = "norm"
    STD = "std"
    SSTD = "sstd"

    @classmethod
    def parse(cls, label: str) -> "Innovation":
        return cls(label.strip().lower())


def _check_nu(nu: float) -> float:
    if not nu > 2.0:
        raise ValueError(f"tail parameter nu must exceed 2, got {nu}")
    return float(nu)


def _check_xi(xi: float) -> float:
    if not xi > 0.0:
        raise ValueError(f"skew parameter xi must be positive, got {xi}")
    return float(xi)


def norm_logpdf(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return -0.5 * (_LOG_2PI + z * z)


def norm_cdf(z: np.ndarray) -> np.ndarray:
    return stats.norm.cdf(np.asarray(z, dtype=np.float64))


def std_logpdf(z: np.ndarray, nu: float) -> np.ndarray:
    """Log density of the unit-variance Student-t."""
    nu = _check_nu(nu)
    z = np.asarray(z, dtype=np.float64)
    const = gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0) - 0.5 * np.log(np.pi * (nu - 2.0))
    return const - 0.5 * (nu + 1.0) * np.log1p(z * z / (nu - 2.0))


def std_cdf(z: np.ndarray, nu: float) -> np.ndarray:
    nu = _check_nu(nu)
    return stats.t.cdf(np.asarray(z, dtype=np.float64) * np.sqrt(nu / (nu - 2.0)), df=nu)


def std_abs_moment(nu: float) -> float:
    """E|z| of the unit-variance Student-t."""
    nu = _check_nu(nu)
    return float(
        2.0 * np.sqrt(nu - 2.0) / (np.sqrt(np.pi) * (nu - 1.0)) * np.exp(gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0))
    )


def sstd_shift_scale(nu: float, xi: float) -> tuple[float, float]:
    """Mean and standard deviation of the raw skewed-t before standardization."""
    nu, xi = _check_nu(nu), _check_xi(xi)
    m1 = std_abs_moment(nu)
    mean = m1 * (xi - 1.0 / xi)
    var = (xi * xi + 1.0 / (xi * xi) - 1.0) - mean * mean
    if var <= 0.0:
        raise ValueError(f"degenerate skew-t variance for nu={nu}, xi={xi}")
    return mean, float(np.sqrt(var))


def sstd_logpdf(z: np.ndarray, nu: float, xi: float) -> np.ndarray:
    nu, xi = _check_nu(nu), _check_xi(xi)
    z = np.asarray(z, dtype=np.float64)
    m, s = sstd_shift_scale(nu, xi)
    x = s * z + m
    scaled = np.where(x < 0.0, x * xi, x / xi)
    return np.log(2.0 / (xi + 1.0 / xi)) + np.log(s) + std_logpdf(scaled, nu)


def sstd_cdf(z: np.ndarray, nu: float, xi: float) -> np.ndarray:
    nu, xi = _check_nu(nu), _check_xi(xi)
    z = np.asarray(z, dtype=np.float64)
    m, s = sstd_shift_scale(nu, xi)
    x = s * z + m
    xi2 = xi * xi
    lower = 2.0 / (1.0 + xi2) * std_cdf(x * xi, nu)
    upper = 1.0 / (1.0 + xi2) + 2.0 * xi2 / (1.0 + xi2) * (std_cdf(x / xi, nu) - 0.5)
    return np.where(x < 0.0, lower, upper)


def sstd_abs_moment(nu: float, xi: float) -> float:
    """E|z| of the standardized skew-t, by quadrature split at its kinks."""
    nu, xi = _check_nu(nu), _check_xi(xi)
    m, s = sstd_shift_scale(nu, xi)

    def integrand(z: float) -> float:
        return abs(z) * float(np.exp(sstd_logpdf(z, nu, xi)))

    kink = -m / s  # density mode; |z| kinks at 0
    a, b = sorted((0.0, kink))
    total = 0.0
    for lo, hi in ((-np.inf, a), (a, b), (b, np.inf)):
        if lo == hi:
            continue
        val, _ = integrate.quad(integrand, lo, hi, limit=200)
        total += val
    return float(total)


def abs_moment(innovation: Innovation, nu: float | None = None, xi: float | None = None) -> float:
    """E|z| of a standardized innovation (the EGARCH magnitude-term constant)."""
    if innovation is Innovation.NORM:
        return _SQRT_2_OVER_PI
    if innovation is Innovation.STD:
        return std_abs_moment(nu)
    return sstd_abs_moment(nu, xi)


def logpdf(z: np.ndarray, innovation: Innovation, nu: float | None = None, xi: float | None = None) -> np.ndarray:
    if innovation is Innovation.NORM:
        return norm_logpdf(z)
    if innovation is Innovation.STD:
        return std_logpdf(z, nu)
    return sstd_logpdf(z, nu, xi)


def cdf(z: np.ndarray, innovation: Innovation, nu: float | None = None, xi: float | None = None) -> np.ndarray:
    if innovation is Innovation.NORM:
        return norm_cdf(z)
    if innovation is Innovation.STD:
        return std_cdf(z, nu)
    return sstd_cdf(z, nu, xi)


def sample(
    innovation: Innovation,
    n: int,
    rng: np.random.Generator,
    nu: float | None = None,
    xi: float | None = None,
) -> np.ndarray:
    """Draw n standardized innovations."""
    if innovation is Innovation.NORM:
        return rng.standard_normal(n)
    nu = _check_nu(nu)
    base = rng.standard_t(nu, size=n) * np.sqrt((nu - 2.0) / nu)
    if innovation is Innovation.STD:
        return base
    xi = _check_xi(xi)
    m, s = sstd_shift_scale(nu, xi)
    flip = rng.random(n) < xi * xi / (1.0 + xi * xi)
    raw = np.where(flip, np.abs(base) * xi, -np.abs(base) / xi)
    return (raw - m) / s
