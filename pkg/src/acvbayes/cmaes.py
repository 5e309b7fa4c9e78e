"""Covariance-matrix-adaptation evolution strategy with box constraints.

Implements the standard (mu/mu_w, lambda) CMA-ES with cumulative step-size
control and rank-one/rank-mu covariance updates, plus restarts with a
doubled population.  Candidates outside the box are evaluated at their
projection onto it with a quadratic penalty on the excess, so reported
optima always satisfy the bounds (including optima sitting exactly on a
bound).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitFailureError, ValidationError

__all__ = ["CmaResult", "minimize_cmaes"]

_BIG = 1e300


@dataclass(frozen=True)
class CmaResult:
    x: np.ndarray
    fun: float
    evals: int
    restarts: int


def _run_once(func, d, rng, popsize, sigma0, max_evals, x0=None):
    """One CMA-ES run on the unit cube; returns (best_x, best_f, evals)."""
    lam = popsize
    mu = lam // 2
    raw = math.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mu_eff = 1.0 / np.sum(weights**2)

    c_sigma = (mu_eff + 2.0) / (d + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (d + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / d) / (d + 4.0 + 2.0 * mu_eff / d)
    c_1 = 2.0 / ((d + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((d + 2.0) ** 2 + mu_eff))
    chi_n = math.sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d))

    mean = np.full(d, 0.5) if x0 is None else np.array(x0, dtype=float)
    sigma = sigma0
    cov = np.eye(d)
    p_sigma = np.zeros(d)
    p_c = np.zeros(d)

    best_x = np.clip(mean, 0.0, 1.0)
    best_f = func(best_x)
    evals = 1
    history: list[float] = [best_f]
    hist_len = 10 + int(math.ceil(30.0 * d / lam))

    gen = 0
    while evals + lam <= max_evals:
        gen += 1
        vals, vecs = np.linalg.eigh(cov)
        vals = np.maximum(vals, 1e-30)
        sqrt_vals = np.sqrt(vals)

        zs = rng.standard_normal((lam, d))
        ys = (vecs * sqrt_vals) @ zs.T
        xs = mean[None, :] + sigma * ys.T
        fs = np.empty(lam)
        for i in range(lam):
            fs[i] = func(np.clip(xs[i], 0.0, 1.0)) + _excess_penalty(xs[i])
            if not math.isfinite(fs[i]):
                fs[i] = _BIG
        evals += lam

        order = np.argsort(fs)
        if fs[order[0]] < best_f:
            best_f = fs[order[0]]
            best_x = np.clip(xs[order[0]], 0.0, 1.0)

        y_w = weights @ ys.T[order[:mu]]
        mean = mean + sigma * y_w

        inv_sqrt = (vecs / sqrt_vals) @ vecs.T
        p_sigma = (1.0 - c_sigma) * p_sigma + math.sqrt(
            c_sigma * (2.0 - c_sigma) * mu_eff
        ) * (inv_sqrt @ y_w)
        p_norm = np.linalg.norm(p_sigma)
        h_sigma = p_norm / math.sqrt(
            1.0 - (1.0 - c_sigma) ** (2.0 * gen)
        ) < (1.4 + 2.0 / (d + 1.0)) * chi_n
        p_c = (1.0 - c_c) * p_c + (
            math.sqrt(c_c * (2.0 - c_c) * mu_eff) * y_w if h_sigma else 0.0
        )

        rank_mu = np.einsum("i,ij,ik->jk", weights, ys.T[order[:mu]], ys.T[order[:mu]])
        cov = (
            (1.0 - c_1 - c_mu) * cov
            + c_1 * (np.outer(p_c, p_c) + (0.0 if h_sigma else c_c * (2.0 - c_c)) * cov)
            + c_mu * rank_mu
        )
        cov = 0.5 * (cov + cov.T)
        sigma *= math.exp((c_sigma / d_sigma) * (p_norm / chi_n - 1.0))

        history.append(fs[order[0]])
        if len(history) > hist_len:
            history.pop(0)
            spread = max(history) - min(history)
            if spread <= 1e-11 * (1.0 + abs(best_f)):
                break
        if sigma * math.sqrt(vals.max()) < 1e-12 or sigma > 1e4:
            break
    return best_x, best_f, evals


def _excess_penalty(x):
    excess = x - np.clip(x, 0.0, 1.0)
    e2 = float(excess @ excess)
    return 1e8 * e2 if e2 > 0.0 else 0.0


def minimize_cmaes(
    func,
    lower,
    upper,
    seed: int = 0,
    sigma0_frac: float = 0.25,
    popsize: int | None = None,
    max_evals: int = 10_000,
    restarts: int = 3,
):
    """Minimise ``func`` over the box [lower, upper].

    Runs CMA-ES starting from the box centre with initial step
    ``sigma0_frac`` of the box width, restarting with a doubled
    population (up to ``restarts`` times) while evaluation budget
    remains.  Deterministic for a fixed seed.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValidationError("lower/upper must be 1-D arrays of equal length")
    if not np.all(lower < upper):
        raise ValidationError("bounds require lower < upper")
    d = lower.size
    width = upper - lower

    def unit_func(u):
        return func(lower + u * width)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lam = popsize if popsize is not None else 4 + int(3 * math.log(d))

    best_x = None
    best_f = math.inf
    total_evals = 0
    used_restarts = 0
    for attempt in range(restarts + 1):
        remaining = max_evals - total_evals
        if remaining < lam + 1:
            break
        x0 = None if attempt == 0 else rng.uniform(0.0, 1.0, size=d)
        x, f, ev = _run_once(
            unit_func, d, rng, lam, sigma0_frac, remaining, x0=x0
        )
        total_evals += ev
        if f < best_f:
            best_f = f
            best_x = x
        used_restarts = attempt
        lam *= 2

    if best_x is None or not math.isfinite(best_f):
        raise FitFailureError(
            "optimisation produced no finite in-bounds objective value"
        )
    return CmaResult(
        x=lower + best_x * width,
        fun=float(best_f),
        evals=total_evals,
        restarts=used_restarts,
    )
