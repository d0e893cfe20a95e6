"""Seeded synthetic tick generators used for end-to-end verification.

Three modes:

* `MarkovSpec` -- next price-change class drawn from a 5x5 transition matrix.
* `RuleSpec` -- next class is a fixed linear function (mod 5) of the last
  few classes, optionally corrupted with uniform noise.  The default
  coefficients give a maximal-period recurrence, so the class histogram is
  nearly uniform and the majority-class baseline sits around 0.2.
* `GarchSeriesSpec` -- continuous returns from a GARCH(1,1) recursion,
  compounded into prices and rounded to the 0.01 grid.

Everything is a pure function of (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tickdist.data import N_CLASSES, TickSeries
from tickdist.distributions import Innovation, sample

DEFAULT_CLASS_DELTAS = (-2, -1, 0, 1, 2)

# Maximal-period (124) linear recurrence over the 5 classes:
# next = (2*prev + 1*prev2 + 2*prev3) mod 5.
DEFAULT_RULE_COEFFS = (2, 1, 2)

# Sticky, mean-reverting chain: the no-change class dominates, as it does
# in real transaction streams.
DEFAULT_MARKOV_TRANSITION = (
    (0.10, 0.25, 0.45, 0.15, 0.05),
    (0.05, 0.20, 0.55, 0.15, 0.05),
    (0.04, 0.13, 0.66, 0.13, 0.04),
    (0.05, 0.15, 0.55, 0.20, 0.05),
    (0.05, 0.15, 0.45, 0.25, 0.10),
)


@dataclass(frozen=True)
class MarkovSpec:
    """First-order Markov chain over the five price-change classes."""

    transition: tuple = ()
    n: int = 10_000
    class_deltas: tuple = DEFAULT_CLASS_DELTAS
    start_price_ticks: int = 1_000
    start_class: int = 2

    def matrix(self) -> np.ndarray:
        mat = np.asarray(self.transition, dtype=np.float64)
        if mat.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"transition matrix must be {N_CLASSES}x{N_CLASSES}, got {mat.shape}")
        if np.any(mat < 0.0):
            raise ValueError("transition probabilities must be nonnegative")
        row_err = np.abs(mat.sum(axis=1) - 1.0)
        if row_err.max() > 1e-12:
            raise ValueError(f"transition rows must sum to 1 (max error {row_err.max():.3e})")
        return mat


@dataclass(frozen=True)
class RuleSpec:
    """Deterministic class recurrence: next = sum(coeffs * recent) mod 5."""

    coeffs: tuple = DEFAULT_RULE_COEFFS
    n: int = 10_000
    noise_prob: float = 0.0
    class_deltas: tuple = DEFAULT_CLASS_DELTAS
    start_price_ticks: int = 10_000

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("need at least one recurrence coefficient")
        if not 0.0 <= self.noise_prob < 1.0:
            raise ValueError(f"noise_prob must be in [0, 1), got {self.noise_prob}")


@dataclass(frozen=True)
class GarchSeriesSpec:
    """GARCH(1,1) return simulator compounded into tick-grid prices."""

    omega: float = 1e-8
    alpha: float = 0.1
    beta: float = 0.8
    mu: float = 0.0
    innovation: str = "norm"
    nu: float | None = None
    xi: float | None = None
    n: int = 10_000
    start_price: float = 10.0

    def __post_init__(self):
        if self.omega <= 0.0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.alpha + self.beta >= 1.0:
            raise ValueError(f"non-stationary parameters: alpha + beta = {self.alpha + self.beta} >= 1")
        Innovation.parse(self.innovation)

    @property
    def stationary_variance(self) -> float:
        return self.omega / (1.0 - self.alpha - self.beta)


def _prices_from_classes(classes: np.ndarray, class_deltas: tuple, start_price_ticks: int) -> np.ndarray:
    """Compound class deltas into a strictly positive tick-price path.

    A step that would push the price to zero or below is replaced by the
    no-change class to keep the series valid.
    """
    deltas = np.asarray(class_deltas, dtype=np.int64)[classes]
    prices = start_price_ticks + np.concatenate([[0], np.cumsum(deltas)])
    if prices.min() >= 1:
        return prices
    out = np.empty(len(classes) + 1, dtype=np.int64)
    out[0] = start_price_ticks
    for i, d in enumerate(deltas):
        nxt = out[i] + d
        out[i + 1] = nxt if nxt >= 1 else out[i]
    return out


def _markov_classes(spec: MarkovSpec, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(spec.matrix(), axis=1)
    draws = rng.random(spec.n)
    classes = np.empty(spec.n, dtype=np.int64)
    state = spec.start_class
    for i in range(spec.n):
        state = int(np.searchsorted(cum[state], draws[i], side="right"))
        state = min(state, N_CLASSES - 1)  # guard cumulative rounding at 1.0
        classes[i] = state
    return classes


def _rule_classes(spec: RuleSpec, rng: np.random.Generator) -> np.ndarray:
    order = len(spec.coeffs)
    seed_state = rng.integers(0, N_CLASSES, size=order)
    if not seed_state.any():
        seed_state[-1] = 1  # the all-zero state is a fixed point of the recurrence
    noise = rng.random(spec.n) < spec.noise_prob if spec.noise_prob > 0.0 else np.zeros(spec.n, dtype=bool)
    noisy_draws = rng.integers(0, N_CLASSES, size=spec.n)
    coeffs = [int(c) for c in spec.coeffs]
    recent = [int(v) for v in seed_state[::-1]]  # newest first
    out = np.empty(spec.n, dtype=np.int64)
    for i in range(spec.n):
        if noise[i]:
            nxt = int(noisy_draws[i])
        else:
            nxt = sum(c * v for c, v in zip(coeffs, recent)) % N_CLASSES
        out[i] = nxt
        recent = [nxt] + recent[:-1]
    return out


def rule_next_class(coeffs: tuple, recent: np.ndarray) -> np.ndarray:
    """The recurrence target given the last len(coeffs) classes, newest first."""
    coeffs = np.asarray(coeffs, dtype=np.int64)
    recent = np.asarray(recent, dtype=np.int64)
    return (recent @ coeffs) % N_CLASSES


def simulate_garch_returns(spec: GarchSeriesSpec, seed: int) -> np.ndarray:
    """Exact continuous returns from the GARCH recursion (no tick rounding)."""
    rng = np.random.default_rng(seed)
    innovation = Innovation.parse(spec.innovation)
    z = sample(innovation, spec.n, rng, nu=spec.nu, xi=spec.xi)
    returns = np.empty(spec.n)
    var = spec.stationary_variance
    for t in range(spec.n):
        eps = np.sqrt(var) * z[t]
        returns[t] = spec.mu + eps
        var = spec.omega + spec.alpha * eps * eps + spec.beta * var
    return returns


def generate_synthetic_ticks(spec, seed: int, stock_id: str = "SYN") -> TickSeries:
    """Deterministic tick series for a generator spec and seed."""
    rng = np.random.default_rng(seed)
    if isinstance(spec, MarkovSpec):
        classes = _markov_classes(spec, rng)
        prices = _prices_from_classes(classes, spec.class_deltas, spec.start_price_ticks)
        return TickSeries(stock_id, prices)
    if isinstance(spec, RuleSpec):
        classes = _rule_classes(spec, rng)
        prices = _prices_from_classes(classes, spec.class_deltas, spec.start_price_ticks)
        return TickSeries(stock_id, prices)
    if isinstance(spec, GarchSeriesSpec):
        returns = simulate_garch_returns(spec, seed)
        log_prices = np.log(spec.start_price) + np.concatenate([[0.0], np.cumsum(returns)])
        ticks = np.maximum(np.rint(np.exp(log_prices) * 100.0).astype(np.int64), 1)
        return TickSeries(stock_id, ticks)
    raise TypeError(f"unknown generator spec type {type(spec).__name__}")
