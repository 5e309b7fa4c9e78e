"""Likelihood, adaptive Metropolis-Hastings, and single-experiment runs.

The sampler state lives in dimensionless parameter coordinates (the same
scaling the solver uses), which keeps the proposal covariance well
conditioned; everything user-facing is converted back to laboratory
units.  The noise standard deviation is sampled as a sixth coordinate
with a uniform prior on (0, 10% of the peak current].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .cmaes import minimize_cmaes
from .data import CurrentTrace
from .errors import SolverDivergenceError, ValidationError
from .model import ExperimentConfig, ModelParams, PriorHypercube
from .solver import ForwardModel, SolverGrid

__all__ = [
    "FitResult",
    "ChainState",
    "AdaptiveChain",
    "log_likelihood",
    "log_likelihood_from_residuals",
    "prior_contains",
    "mle_fit",
    "run_single_chain",
    "trace_loglik_nd",
    "sigma_upper_bound_nd",
]

logger = logging.getLogger(__name__)

_TINY_SSR = 1e-300


def log_likelihood_from_residuals(residuals, sigma: float) -> float:
    """Gaussian log likelihood -T log(sigma) - sum(r^2) / (2 sigma^2).

    Additive constants independent of the parameters are dropped, since
    they cancel in every likelihood ratio the samplers form.
    """
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma!r}")
    r = np.asarray(residuals, dtype=float)
    return float(-r.size * math.log(sigma) - (r @ r) / (2.0 * sigma * sigma))


def log_likelihood(
    params: ModelParams,
    trace: CurrentTrace,
    config: ExperimentConfig,
    grid: SolverGrid | None = None,
) -> float:
    """Log likelihood of a trace: the model is simulated exactly at the
    trace's own timestamps, so no interpolation enters the residuals."""
    if params.sigma is None:
        raise ValidationError("params.sigma is required to evaluate the likelihood")
    model = ForwardModel(config, trace.times, grid=grid)
    residuals = trace.currents - model.currents(params)
    return log_likelihood_from_residuals(residuals, params.sigma)


def prior_contains(params, hypercube: PriorHypercube) -> bool:
    """True iff every physical coordinate lies inside the closed box."""
    vec = params.as_vector() if isinstance(params, ModelParams) else params
    return hypercube.contains(vec)


@dataclass(frozen=True)
class FitResult:
    """Maximum-likelihood point for one trace."""

    theta_hat: ModelParams
    log_likelihood_at_hat: float
    optimizer_evals: int


@dataclass
class ChainState:
    """One finished adaptive MH chain, in laboratory units.

    ``samples`` has one row per retained (post burn-in) step with columns
    (e0, k0, alpha, cdl, ru, sigma); ``log_posteriors`` aligns with it.
    """

    samples: np.ndarray
    log_posteriors: np.ndarray
    current_theta: ModelParams
    proposal_cov: np.ndarray
    log_scale: float
    accepted_count: int
    proposed_count: int
    rng_stream: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_count / max(self.proposed_count, 1)


class AdaptiveChain:
    """Random-walk Metropolis with adaptive covariance and scale.

    Proposals are multivariate normal with covariance
    ``exp(log_scale) * cov``; any candidate outside the box is rejected
    outright.  After an initial non-adaptive phase the covariance tracks
    the running sample scatter and ``log_scale`` is tuned toward the
    target acceptance rate, both with gain (s+1)^-0.6 at step s.

    The target density factors into an expensive likelihood part and a
    cheap prior part so that a hierarchical driver can re-evaluate just
    the prior when the hyper-parameters move (see ``refresh_prior``).
    """

    def __init__(
        self,
        log_likelihood_fn,
        x0,
        lower,
        upper,
        rng: np.random.Generator,
        log_prior_fn=None,
        init_cov: np.ndarray | None = None,
        target_accept: float = 0.25,
        adapt_start: int = 100,
        adapt_decay: float = 0.6,
    ):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.x = np.asarray(x0, dtype=float).copy()
        if self.x.shape != self.lower.shape or self.lower.shape != self.upper.shape:
            raise ValidationError("x0/lower/upper must share one shape")
        if np.any(self.x < self.lower) or np.any(self.x > self.upper):
            raise ValidationError("chain must start inside the support box")
        self._ll_fn = log_likelihood_fn
        self._lp_fn = log_prior_fn
        self.rng = rng
        d = self.x.size
        if init_cov is None:
            init_cov = np.diag((1e-4 * (self.upper - self.lower)) ** 2)
        self.cov = np.array(init_cov, dtype=float)
        self.log_scale = 0.0
        self.mean_est = self.x.copy()
        self.target_accept = target_accept
        self.adapt_start = adapt_start
        self.adapt_decay = adapt_decay
        self.accepted = 0
        self.proposed = 0
        self.divergences = 0
        self.ll_cur = self._likelihood(self.x)
        self.lp_cur = self._prior(self.x)
        if not math.isfinite(self.ll_cur + self.lp_cur):
            raise ValidationError("chain start has zero posterior density")

    def _likelihood(self, x) -> float:
        try:
            return float(self._ll_fn(x))
        except SolverDivergenceError as exc:
            self.divergences += 1
            logger.debug("solver divergence treated as rejection: %s", exc)
            return -math.inf

    def _prior(self, x) -> float:
        return 0.0 if self._lp_fn is None else float(self._lp_fn(x))

    def refresh_prior(self) -> None:
        """Re-evaluate the prior factor at the current point (used after
        the hyper-parameters it depends on have been resampled)."""
        self.lp_cur = self._prior(self.x)

    @property
    def log_posterior(self) -> float:
        return self.ll_cur + self.lp_cur

    def _chol(self) -> np.ndarray:
        scaled = math.exp(self.log_scale) * self.cov
        try:
            return np.linalg.cholesky(scaled)
        except np.linalg.LinAlgError:
            jitter = 1e-12 * max(np.trace(scaled) / scaled.shape[0], 1e-30)
            return np.linalg.cholesky(scaled + jitter * np.eye(scaled.shape[0]))

    def step(self) -> np.ndarray:
        """Advance one step; returns (a copy of) the new current point."""
        cand = self.x + self._chol() @ self.rng.standard_normal(self.x.size)
        accepted = False
        if np.all(cand >= self.lower) and np.all(cand <= self.upper):
            ll_cand = self._likelihood(cand)
            lp_cand = self._prior(cand)
            log_r = (ll_cand + lp_cand) - (self.ll_cur + self.lp_cur)
            if math.log(self.rng.random()) < log_r:
                self.x = cand
                self.ll_cur = ll_cand
                self.lp_cur = lp_cand
                accepted = True
        self.proposed += 1
        self.accepted += accepted

        s = self.proposed
        if s > self.adapt_start:
            eta = (s + 1.0) ** (-self.adapt_decay)
            diff = self.x - self.mean_est
            self.cov += eta * (np.outer(diff, diff) - self.cov)
            self.mean_est += eta * diff
            self.log_scale += eta * (accepted - self.target_accept)
        return self.x.copy()


def trace_loglik_nd(model: ForwardModel, y_nd: np.ndarray):
    """Dimensionless 6-coordinate likelihood (theta_nd + sigma_nd)."""
    t_count = y_nd.size

    def ll(x):
        sigma = x[5]
        if sigma <= 0:
            return -math.inf
        f = model.currents_nd(x[:5])
        resid = y_nd - f
        return -t_count * math.log(sigma) - (resid @ resid) / (2.0 * sigma * sigma)

    return ll


def mle_fit(
    trace: CurrentTrace,
    config: ExperimentConfig,
    hypercube: PriorHypercube | None = None,
    grid: SolverGrid | None = None,
    seed: int = 0,
    max_evals: int = 10_000,
    popsize: int | None = None,
    restarts: int = 3,
    sigma0_frac: float = 0.25,
) -> FitResult:
    """Maximum-likelihood estimate of (theta, sigma) inside the hypercube.

    Sigma is profiled out in closed form (its optimum is the RMS
    residual), so the optimiser works on the five physical parameters
    only.  Deterministic for a fixed seed.
    """
    if hypercube is None:
        hypercube = PriorHypercube.default(config)
    model = ForwardModel(config, trace.times, grid=grid)
    scaling = model.scaling
    y_nd = trace.currents / scaling.current_scale
    cube_nd = hypercube.scaled(1.0 / scaling.param_scales)
    t_count = y_nd.size

    def objective(theta_nd):
        try:
            f = model.currents_nd(theta_nd)
        except SolverDivergenceError:
            return math.inf
        ssr = float((y_nd - f) @ (y_nd - f))
        return 0.5 * t_count * math.log(max(ssr, _TINY_SSR) / t_count)

    result = minimize_cmaes(
        objective,
        cube_nd.lower,
        cube_nd.upper,
        seed=seed,
        sigma0_frac=sigma0_frac,
        popsize=popsize,
        max_evals=max_evals,
        restarts=restarts,
    )
    f_hat = model.currents_nd(result.x)
    ssr = float((y_nd - f_hat) @ (y_nd - f_hat))
    sigma_nd = math.sqrt(max(ssr, _TINY_SSR) / t_count)
    theta_hat = scaling.to_dimensional(result.x, sigma_nd=sigma_nd)
    ll_hat = -t_count * math.log(theta_hat.sigma) - 0.5 * t_count
    return FitResult(
        theta_hat=theta_hat,
        log_likelihood_at_hat=float(ll_hat),
        optimizer_evals=result.evals,
    )


def sigma_upper_bound_nd(y_nd: np.ndarray) -> float:
    """Upper end of the uniform noise prior: 10% of the peak current."""
    return 0.1 * float(np.max(np.abs(y_nd)))


def run_single_chain(
    trace: CurrentTrace,
    config: ExperimentConfig,
    n_samples: int = 10_000,
    burn_in: int = 5_000,
    seed: int = 0,
    grid: SolverGrid | None = None,
    hypercube: PriorHypercube | None = None,
    fit: FitResult | None = None,
    max_fit_evals: int = 10_000,
    target_accept: float = 0.25,
    adapt_start: int = 100,
) -> ChainState:
    """Adaptive MH posterior sampling for one experiment.

    Seeds the chain at the CMA-ES maximum-likelihood point, runs
    ``n_samples`` steps, and returns the retained post burn-in samples in
    laboratory units.  Fully reproducible from ``seed``.
    """
    if n_samples <= burn_in:
        raise ValidationError("n_samples must exceed burn_in")
    if hypercube is None:
        hypercube = PriorHypercube.default(config)
    model = ForwardModel(config, trace.times, grid=grid)
    scaling = model.scaling
    y_nd = trace.currents / scaling.current_scale
    cube_nd = hypercube.scaled(1.0 / scaling.param_scales)
    t_count = y_nd.size

    root = np.random.SeedSequence(seed)
    fit_seq, chain_seq = root.spawn(2)
    if fit is None:
        fit = mle_fit(
            trace,
            config,
            hypercube=hypercube,
            grid=grid,
            seed=fit_seq.generate_state(1)[0],
            max_evals=max_fit_evals,
        )

    sigma_hi = sigma_upper_bound_nd(y_nd)
    lower = np.append(cube_nd.lower, 0.0)
    upper = np.append(cube_nd.upper, sigma_hi)
    x0 = np.append(
        scaling.to_dimensionless(fit.theta_hat),
        min(max(fit.theta_hat.sigma / scaling.current_scale, 1e-12 * sigma_hi), 0.999 * sigma_hi),
    )

    chain = AdaptiveChain(
        trace_loglik_nd(model, y_nd),
        x0,
        lower,
        upper,
        rng=np.random.default_rng(chain_seq),
        target_accept=target_accept,
        adapt_start=adapt_start,
    )
    samples_nd = np.empty((n_samples, 6))
    logps = np.empty(n_samples)
    for i in range(n_samples):
        samples_nd[i] = chain.step()
        logps[i] = chain.log_posterior

    retained = samples_nd[burn_in:]
    samples = np.empty_like(retained)
    samples[:, :5] = retained[:, :5] * scaling.param_scales
    samples[:, 5] = retained[:, 5] * scaling.current_scale
    log_post = logps[burn_in:] - t_count * math.log(scaling.current_scale)
    current = ModelParams.from_vector(
        samples[-1, :5], sigma=float(samples[-1, 5])
    )
    return ChainState(
        samples=samples,
        log_posteriors=log_post,
        current_theta=current,
        proposal_cov=chain.cov.copy(),
        log_scale=chain.log_scale,
        accepted_count=chain.accepted,
        proposed_count=chain.proposed,
        rng_stream=seed,
    )
