"""Shared test utilities: finite-difference gradients and an independent
brute-force likelihood.

The likelihood oracle deliberately avoids every code path of the package:
plain Python loops, math-module scalars, scipy reference densities, and
exactly-rounded fsum accumulation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats

from tickdist import engine

FD_STEP = 1e-5
FD_DENOM_FLOOR = 1e-6  # guards the relative error where both sides are ~0


def finite_difference_max_err(make_loss, tensors, h: float = FD_STEP) -> float:
    """Worst relative error between tape gradients and central differences.

    `make_loss(tape)` must rebuild the scalar loss from current tensor
    values; it is called with tape=None for the probe evaluations.
    """
    tape = engine.Tape()
    loss = make_loss(tape)
    tape.backward(loss)
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, f"no gradient reached {t.name or t}"
        analytic = t.grad.reshape(-1).copy()
        flat = t.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(make_loss(None).values)
            flat[i] = orig - h
            down = float(make_loss(None).values)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            denom = max(abs(fd), abs(analytic[i]), FD_DENOM_FLOOR)
            worst = max(worst, abs(fd - analytic[i]) / denom)
    return worst


def oracle_skewt_shift_scale(nu: float, xi: float) -> tuple:
    m1 = (
        2.0
        * math.sqrt(nu - 2.0)
        * math.gamma((nu + 1.0) / 2.0)
        / (math.sqrt(math.pi) * (nu - 1.0) * math.gamma(nu / 2.0))
    )
    m = m1 * (xi - 1.0 / xi)
    s = math.sqrt((xi * xi + 1.0 / (xi * xi) - 1.0) - m * m)
    return m, s


def oracle_logpdf(innovation: str, z: float, nu=None, xi=None) -> float:
    """Unit-variance density logs via scipy reference distributions."""
    if innovation == "norm":
        return float(stats.norm.logpdf(z))
    if innovation == "std":
        c = math.sqrt(nu / (nu - 2.0))
        return float(stats.t.logpdf(z * c, nu)) + math.log(c)
    if innovation == "sstd":
        m, s = oracle_skewt_shift_scale(nu, xi)
        x = s * z + m
        arg = x * xi if x < 0.0 else x / xi
        c = math.sqrt(nu / (nu - 2.0))
        core = float(stats.t.logpdf(arg * c, nu)) + math.log(c)
        return math.log(2.0 / (xi + 1.0 / xi)) + core + math.log(s)
    raise ValueError(innovation)


def piecewise_moment(pdf, power: float, breakpoints) -> float:
    """Quadrature of |z|^power * pdf(z) split at integrand kinks, with
    infinite tails so heavy-tailed densities are not truncated."""
    edges = [-np.inf] + sorted(set(float(b) for b in breakpoints)) + [np.inf]
    total = 0.0
    for lo, hi in zip(edges, edges[1:]):
        if lo == hi:
            continue
        val, _ = integrate.quad(lambda z: abs(z) ** power * pdf(z), lo, hi, limit=400)
        total += val
    return total


def oracle_abs_moment(innovation: str, nu=None, xi=None) -> float:
    if innovation == "norm":
        return math.sqrt(2.0 / math.pi)
    if innovation == "std":
        return (
            2.0
            * math.sqrt(nu - 2.0)
            * math.gamma((nu + 1.0) / 2.0)
            / (math.sqrt(math.pi) * (nu - 1.0) * math.gamma(nu / 2.0))
        )
    m, s = oracle_skewt_shift_scale(nu, xi)
    pdf = lambda z: math.exp(oracle_logpdf("sstd", z, nu, xi))
    return piecewise_moment(pdf, 1.0, [0.0, -m / s])


def oracle_nll(variance: str, innovation: str, params: dict, returns) -> float:
    """Brute-force negative log likelihood, summed with exact rounding."""
    mu = params.get("mu", 0.0)
    omega = params["omega"]
    alpha = params["alpha"]
    beta = params["beta"]
    gamma = params.get("gamma", 0.0)
    nu = params.get("nu")
    xi = params.get("xi")
    eps = [float(r) - mu for r in returns]
    n = len(eps)
    mean_eps = math.fsum(eps) / n
    var0 = math.fsum((e - mean_eps) ** 2 for e in eps) / n
    s2 = [0.0] * n
    s2[0] = var0
    if variance == "EGARCH":
        eabs = oracle_abs_moment(innovation, nu, xi)
        lns = math.log(var0)
        for t in range(1, n):
            z = eps[t - 1] / math.sqrt(s2[t - 1])
            lns = omega + alpha * z + gamma * (abs(z) - eabs) + beta * lns
            s2[t] = math.exp(lns)
    else:
        for t in range(1, n):
            e = eps[t - 1]
            s2[t] = omega + alpha * e * e + beta * s2[t - 1]
            if variance == "GJR" and e < 0.0:
                s2[t] += gamma * e * e
    terms = []
    for t in range(n):
        sig = math.sqrt(s2[t])
        terms.append(oracle_logpdf(innovation, eps[t] / sig, nu, xi) - math.log(sig))
    return -math.fsum(terms)
