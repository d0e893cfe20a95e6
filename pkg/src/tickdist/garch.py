"""GARCH(1,1) volatility models fit by maximum likelihood.

Three conditional-variance recursions (standard, exponential, and
threshold-asymmetric) are crossed with three standardized innovation
densities (normal, Student t, skewed t), giving nine model labels such as
"SGARCH-norm" or "GJR-GARCH-sstd".  Fitting runs a Nelder-Mead simplex
over unconstrained reparameterized coordinates from several seeded starts;
a fit that never reaches a finite likelihood or fails to converge is
reported as a failed `GarchFit` rather than an exception.

Fitted models turn into three-class direction forecasts by integrating the
one-step-ahead return density over the price bands that round to a
downward move, no move, or an upward move of the minimum price increment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy import optimize
from scipy.special import expit, logit

from tickdist import distributions as dist
from tickdist.data import StockDataset
from tickdist.distributions import Innovation

MIN_OBS = 1000
N_STARTS = 3
SIMPLEX_XATOL = 1e-8
SIMPLEX_FATOL = 1e-8
SIMPLEX_MAXITER = 6000


class VarianceModel(Enum):
    SGARCH = "SGARCH"
    EGARCH = "EGARCH"
    GJR = "GJR-GARCH"

    @classmethod
    def parse(cls, label: str) -> "VarianceModel":
        norm = label.strip().upper()
        if norm in ("GJR", "GJRGARCH", "GJR-GARCH"):
            return cls.GJR
        return cls(norm)


@dataclass(frozen=True)
class GarchSpec:
    """A variance recursion paired with an innovation density, order (1,1)."""

    variance: VarianceModel
    innovation: Innovation

    @property
    def label(self) -> str:
        return f"{self.variance.value}-{self.innovation.value}"

    @classmethod
    def parse(cls, label: str) -> "GarchSpec":
        head, _, tail = label.strip().rpartition("-")
        if not head:
            raise ValueError(f"not a volatility model label: {label!r}")
        return cls(VarianceModel.parse(head), Innovation.parse(tail))


def all_specs() -> list[GarchSpec]:
    """The nine variance/innovation combinations in canonical order."""
    return [
        GarchSpec(v, d)
        for v in (VarianceModel.SGARCH, VarianceModel.EGARCH, VarianceModel.GJR)
        for d in (Innovation.NORM, Innovation.STD, Innovation.SSTD)
    ]


@dataclass(frozen=True)
class GarchParams:
    mu: float = 0.0
    omega: float = 1e-6
    alpha: float = 0.05
    beta: float = 0.90
    gamma: float = 0.0
    nu: Optional[float] = None
    xi: Optional[float] = None

    def validate(self, spec: GarchSpec) -> None:
        """Raise ValueError unless the parameters admit a stationary model."""
        if spec.variance is VarianceModel.EGARCH:
            if not abs(self.beta) < 1.0:
                raise ValueError(f"|beta| must be < 1, got {self.beta}")
        else:
            if not self.omega > 0.0:
                raise ValueError(f"omega must be positive, got {self.omega}")
            if self.alpha < 0.0 or self.beta < 0.0:
                raise ValueError("alpha and beta must be nonnegative")
            if spec.variance is VarianceModel.GJR:
                if self.gamma < 0.0:
                    raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
                if not self.alpha + self.beta + self.gamma / 2.0 < 1.0:
                    raise ValueError("alpha + beta + gamma/2 must be < 1")
            elif not self.alpha + self.beta < 1.0:
                raise ValueError("alpha + beta must be < 1")
        if spec.innovation is not Innovation.NORM:
            if self.nu is None or not self.nu > 2.0:
                raise ValueError(f"nu must exceed 2, got {self.nu}")
        if spec.innovation is Innovation.SSTD:
            if self.xi is None or not self.xi > 0.0:
                raise ValueError(f"xi must be positive, got {self.xi}")


@njit(cache=True)
def _sgarch_sigma2(eps, omega, alpha, beta, s2_init):
    n = eps.shape[0]
    out = np.empty(n)
    out[0] = s2_init
    for t in range(1, n):
        e = eps[t - 1]
        e2 = e * e
        out[t] = omega + alpha * e2 + beta * out[t - 1]
    return out


@njit(cache=True)
def _gjr_sigma2(eps, omega, alpha, beta, gamma, s2_init):
    # the gamma term is added after the symmetric part so that gamma = 0
    # reproduces the standard recursion bit for bit
    n = eps.shape[0]
    out = np.empty(n)
    out[0] = s2_init
    for t in range(1, n):
        e = eps[t - 1]
        e2 = e * e
        base = omega + alpha * e2 + beta * out[t - 1]
        if e < 0.0:
            base = base + gamma * e2
        out[t] = base
    return out


@njit(cache=True)
def _egarch_sigma2(eps, omega, alpha, gamma, beta, lns2_init, abs_moment):
    n = eps.shape[0]
    out = np.empty(n)
    lns2 = lns2_init
    out[0] = math.exp(lns2)
    for t in range(1, n):
        s2 = out[t - 1]
        if not s2 > 0.0 or s2 == np.inf:
            for u in range(t, n):
                out[u] = np.nan
            return out
        z = eps[t - 1] / math.sqrt(s2)
        lns2 = omega + alpha * z + gamma * (abs(z) - abs_moment) + beta * lns2
        out[t] = math.exp(lns2)
    return out


def conditional_variance(
    spec: GarchSpec, params: GarchParams, eps: np.ndarray, s2_init: float
) -> np.ndarray:
    """Variance path sigma2[t] for eps[t], seeded with sigma2[0] = s2_init.

    Each entry depends only on innovations strictly before its own index,
    so the path never looks ahead.
    """
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    if spec.variance is VarianceModel.SGARCH:
        return _sgarch_sigma2(eps, params.omega, params.alpha, params.beta, s2_init)
    if spec.variance is VarianceModel.GJR:
        return _gjr_sigma2(eps, params.omega, params.alpha, params.beta, params.gamma, s2_init)
    moment = dist.abs_moment(spec.innovation, params.nu, params.xi)
    return _egarch_sigma2(
        eps, params.omega, params.alpha, params.gamma, params.beta, math.log(s2_init), moment
    )


def neg_log_likelihood(
    spec: GarchSpec,
    params: GarchParams,
    returns: np.ndarray,
    s2_init: Optional[float] = None,
) -> float:
    """Negative log likelihood summed over every observation.

    The variance seed defaults to the sample variance of the demeaned
    returns; the t = 0 term uses that seed directly.  Invalid parameters or
    a degenerate variance path give +inf so optimizers reject them.
    """
    try:
        params.validate(spec)
    except ValueError:
        return np.inf
    eps = np.asarray(returns, dtype=np.float64) - params.mu
    if s2_init is None:
        s2_init = float(np.var(eps))
    if not np.isfinite(s2_init) or s2_init <= 0.0:
        return np.inf
    sigma2 = conditional_variance(spec, params, eps, s2_init)
    if not np.isfinite(sigma2).all() or (sigma2 <= 0.0).any():
        return np.inf
    sigma = np.sqrt(sigma2)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ll = dist.logpdf(eps / sigma, spec.innovation, params.nu, params.xi) - np.log(sigma)
        total = float(np.sum(ll))
    return -total if np.isfinite(total) else np.inf


def _softmax3(a: float, b: float) -> np.ndarray:
    w = np.array([a, b, 0.0])
    w = np.exp(w - w.max())
    return w / w.sum()


def _unpack(spec: GarchSpec, theta: np.ndarray) -> GarchParams:
    """Unconstrained coordinates -> valid parameters (surjective onto the
    stationary region, so the simplex can roam freely)."""
    theta = np.asarray(theta, dtype=np.float64)
    v = spec.variance
    if v is VarianceModel.SGARCH:
        p = float(expit(theta[2]))
        share = float(expit(theta[3]))
        params = GarchParams(
            mu=float(theta[0]),
            omega=float(np.exp(theta[1])),
            alpha=p * share,
            beta=p * (1.0 - share),
        )
        k = 4
    elif v is VarianceModel.GJR:
        p = float(expit(theta[2]))
        w = _softmax3(float(theta[3]), float(theta[4]))
        params = GarchParams(
            mu=float(theta[0]),
            omega=float(np.exp(theta[1])),
            alpha=p * float(w[0]),
            beta=p * float(w[1]),
            gamma=2.0 * p * float(w[2]),
        )
        k = 5
    else:
        params = GarchParams(
            mu=float(theta[0]),
            omega=float(theta[1]),
            alpha=float(theta[2]),
            gamma=float(theta[3]),
            beta=float(np.tanh(theta[4])),
        )
        k = 5
    if spec.innovation is not Innovation.NORM:
        params = replace(params, nu=2.0 + float(np.exp(theta[k])))
        k += 1
    if spec.innovation is Innovation.SSTD:
        params = replace(params, xi=float(np.exp(theta[k])))
    return params


def _pack(spec: GarchSpec, params: GarchParams) -> np.ndarray:
    v = spec.variance
    if v is VarianceModel.SGARCH:
        p = params.alpha + params.beta
        theta = [params.mu, np.log(params.omega), logit(p), logit(params.alpha / p)]
    elif v is VarianceModel.GJR:
        p = params.alpha + params.beta + params.gamma / 2.0
        w = np.array([params.alpha, params.beta, params.gamma / 2.0]) / p
        w = np.maximum(w, 1e-8)
        theta = [
            params.mu,
            np.log(params.omega),
            logit(p),
            np.log(w[0] / w[2]),
            np.log(w[1] / w[2]),
        ]
    else:
        theta = [params.mu, params.omega, params.alpha, params.gamma, np.arctanh(params.beta)]
    if spec.innovation is not Innovation.NORM:
        theta.append(np.log(params.nu - 2.0))
    if spec.innovation is Innovation.SSTD:
        theta.append(np.log(params.xi))
    return np.asarray(theta, dtype=np.float64)


def _start_params(spec: GarchSpec, returns: np.ndarray) -> GarchParams:
    mu = float(np.mean(returns))
    var = float(np.var(returns - mu))
    if spec.variance is VarianceModel.EGARCH:
        params = GarchParams(mu=mu, omega=0.05 * math.log(var), alpha=-0.05, gamma=0.10, beta=0.95)
    elif spec.variance is VarianceModel.GJR:
        params = GarchParams(mu=mu, omega=var * 0.05, alpha=0.03, beta=0.90, gamma=0.04)
    else:
        params = GarchParams(mu=mu, omega=var * 0.05, alpha=0.05, beta=0.90)
    if spec.innovation is not Innovation.NORM:
        params = replace(params, nu=8.0)
    if spec.innovation is Innovation.SSTD:
        params = replace(params, xi=1.0)
    return params


class FitStatus(Enum):
    CONVERGED = "converged"
    FAILED = "failed"


@dataclass
class GarchFit:
    """Outcome of one model fit; failure is a value, not an exception."""

    spec: GarchSpec
    status: FitStatus
    reason: Optional[str] = None
    params: Optional[GarchParams] = None
    loglik: float = math.nan
    sigma2: Optional[np.ndarray] = None
    n_obs: int = 0

    @property
    def ok(self) -> bool:
        return self.status is FitStatus.CONVERGED


def _failed(spec: GarchSpec, reason: str, n_obs: int = 0) -> GarchFit:
    return GarchFit(spec=spec, status=FitStatus.FAILED, reason=reason, n_obs=n_obs)


def fit_mle(
    spec: GarchSpec,
    returns: Sequence[float],
    seed: int = 0,
    min_obs: int = MIN_OBS,
    n_starts: int = N_STARTS,
) -> GarchFit:
    """Maximize the likelihood with Nelder-Mead from `n_starts` seeded starts.

    The first start uses textbook coefficient values around the sample
    moments; later starts jitter those coordinates.  The best finite
    optimum wins.  Short series, degenerate variance, a likelihood that is
    never finite, or an unconverged simplex all yield a failed fit.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError("returns must be one-dimensional")
    if len(r) < min_obs:
        return _failed(spec, f"needs at least {min_obs} observations, got {len(r)}", len(r))
    if not np.isfinite(r).all():
        return _failed(spec, "returns contain non-finite values", len(r))
    if np.var(r) <= 0.0:
        return _failed(spec, "returns have zero variance", len(r))

    def objective(theta: np.ndarray) -> float:
        if not np.isfinite(theta).all():
            return np.inf
        try:
            return neg_log_likelihood(spec, _unpack(spec, theta), r)
        except (FloatingPointError, OverflowError, ValueError):
            return np.inf

    theta0 = _pack(spec, _start_params(spec, r))
    best = None
    for i in range(n_starts):
        if i == 0:
            start = theta0
        else:
            rng = np.random.default_rng([seed, i])
            start = theta0 + rng.normal(0.0, 0.25 * i, size=theta0.shape)
        res = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={
                "xatol": SIMPLEX_XATOL,
                "fatol": SIMPLEX_FATOL,
                "maxiter": SIMPLEX_MAXITER,
                "maxfev": 2 * SIMPLEX_MAXITER,
            },
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        return _failed(spec, "likelihood was never finite", len(r))
    if not best.success:
        return _failed(spec, f"simplex did not converge: {best.message}", len(r))
    params = _unpack(spec, best.x)
    eps = r - params.mu
    sigma2 = conditional_variance(spec, params, eps, float(np.var(eps)))
    return GarchFit(
        spec=spec,
        status=FitStatus.CONVERGED,
        params=params,
        loglik=-float(best.fun),
        sigma2=sigma2,
        n_obs=len(r),
    )


def forecast_class_probs(
    innovation: Innovation,
    prev_price_ticks: int,
    mu: float,
    sigma2: float,
    nu: Optional[float] = None,
    xi: Optional[float] = None,
) -> np.ndarray:
    """Direction probabilities (down, flat, up) for the next transaction.

    The next price rounds to at least one tick below, within one tick of,
    or at least one tick above the previous price `P`; in log-return terms
    the band edges are ln((P-1)/P) and ln((P+1)/P) with the tick as price
    unit.  Requires P > 1 tick so the downward band exists.
    """
    p = float(prev_price_ticks)
    if not p > 1.0:
        raise ValueError(f"previous price must exceed one tick, got {prev_price_ticks}")
    if not sigma2 > 0.0 or not math.isfinite(sigma2):
        raise ValueError(f"variance must be positive and finite, got {sigma2}")
    sigma = math.sqrt(sigma2)
    z_low = (math.log((p - 1.0) / p) - mu) / sigma
    z_high = (math.log((p + 1.0) / p) - mu) / sigma
    f_low = float(dist.cdf(z_low, innovation, nu, xi))
    f_high = float(dist.cdf(z_high, innovation, nu, xi))
    return np.array([f_low, max(f_high - f_low, 0.0), 1.0 - f_high])


def forecast_test_probs(fit: GarchFit, dataset: StockDataset) -> np.ndarray:
    """Three-class forecasts [n_test, 3] over a stock's test transactions.

    The fitted variance recursion is rolled forward through the test period
    one step at a time without refitting: the path is re-seeded with the
    training-period variance, reproduces the fitted path over the training
    prefix, and then consumes each realized test return as it arrives.
    """
    if not fit.ok:
        raise ValueError(f"cannot forecast from a failed fit ({fit.reason})")
    params = fit.params
    eps = dataset.returns - params.mu
    cut = dataset.train_return_count
    if not 0 < cut <= len(eps):
        raise ValueError(f"train boundary {cut} outside return series of length {len(eps)}")
    s2_init = float(np.var(eps[:cut]))
    sigma2 = conditional_variance(fit.spec, params, eps, s2_init)
    prev = dataset.test_prev_prices().astype(np.float64)
    if len(prev) == 0:
        return np.empty((0, 3))
    if np.any(prev <= 1.0):
        raise ValueError("test period contains a price at or below one tick")
    sigma = np.sqrt(sigma2[cut : cut + len(prev)])
    r_low = np.log((prev - 1.0) / prev)
    r_high = np.log((prev + 1.0) / prev)
    f_low = dist.cdf((r_low - params.mu) / sigma, fit.spec.innovation, params.nu, params.xi)
    f_high = dist.cdf((r_high - params.mu) / sigma, fit.spec.innovation, params.nu, params.xi)
    probs = np.stack([f_low, np.maximum(f_high - f_low, 0.0), 1.0 - f_high], axis=1)
    if not np.isfinite(probs).all():
        raise ValueError("non-finite forecast probabilities")
    return probs
