"""Hierarchical pooling of repeated experiments.

Each experiment's five physical parameters are modelled as a draw from a
multivariate normal with unknown mean and covariance; those carry a
normal-inverse-Wishart hyperprior, which is conjugate, so the
hyper-parameters are Gibbs-sampled exactly while the per-experiment
parameters advance by adaptive Metropolis steps restricted to the prior
hypercube.  The noise scale of each experiment is sampled alongside its
parameters but stays outside the hierarchy.

Sampling happens in the solver's dimensionless coordinates (the
hypercube spans four orders of magnitude in laboratory units, which
would make the covariance draws badly conditioned); results are
converted on output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import CurrentTrace
from .errors import ValidationError
from .inference import (
    AdaptiveChain,
    ChainState,
    FitResult,
    mle_fit,
    sigma_upper_bound_nd,
    trace_loglik_nd,
)
from .model import ExperimentConfig, ModelParams, PARAM_NAMES, PriorHypercube
from .solver import ForwardModel, Scaling, SolverGrid

__all__ = [
    "NIWParams",
    "HyperSample",
    "HierRunResult",
    "sample_niw",
    "niw_posterior",
    "HierarchicalSampler",
    "run_hierarchical",
    "posterior_predictive_density",
    "pairwise_mu_table",
    "PairCorrelation",
]


@dataclass(frozen=True)
class NIWParams:
    """Normal-inverse-Wishart parameters (location, strength, dof, scale)."""

    mu0: np.ndarray
    kappa0: float
    nu0: float
    psi: np.ndarray

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "psi", psi)
        d = mu0.size
        if psi.shape != (d, d):
            raise ValidationError("psi must be square and match mu0")
        if not np.allclose(psi, psi.T, rtol=1e-10, atol=0.0):
            raise ValidationError("psi must be symmetric")
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError:
            raise ValidationError("psi must be positive definite") from None
        if self.kappa0 < 0:
            raise ValidationError("kappa0 must be non-negative")

    @property
    def dim(self) -> int:
        return self.mu0.size

    @classmethod
    def default_for(cls, hypercube: PriorHypercube) -> "NIWParams":
        """Location at the hypercube centre; diagonal scale with each
        entry the squared half-width of the corresponding dimension."""
        half = 0.5 * hypercube.width
        return cls(
            mu0=hypercube.center.copy(),
            kappa0=0.0,
            nu0=1.0,
            psi=np.diag(half**2),
        )


@dataclass(frozen=True)
class HyperSample:
    """One draw of the hyper mean and covariance."""

    mu: np.ndarray
    sigma_mat: np.ndarray


def sample_niw(params: NIWParams, rng: np.random.Generator) -> HyperSample:
    """Draw (mu, Sigma): Sigma from inverse-Wishart(nu0, psi) via the
    Bartlett decomposition, then mu from Normal(mu0, Sigma / kappa0)."""
    d = params.dim
    if params.kappa0 <= 0:
        raise ValidationError("sampling requires kappa0 > 0 (improper otherwise)")
    if params.nu0 <= d - 1:
        raise ValidationError(
            f"sampling requires nu0 > dim - 1 = {d - 1} (improper otherwise)"
        )
    a = np.zeros((d, d))
    for i in range(d):
        a[i, i] = math.sqrt(rng.chisquare(params.nu0 - i))
        for j in range(i):
            a[i, j] = rng.standard_normal()
    l_psi = np.linalg.cholesky(params.psi)
    # Sigma = L_psi (A A^T)^-1 L_psi^T, i.e. Sigma^-1 ~ Wishart(nu0, psi^-1)
    from scipy.linalg import solve_triangular

    b = solve_triangular(a, l_psi.T, lower=True)
    sigma = b.T @ b
    sigma = 0.5 * (sigma + sigma.T)
    mu = params.mu0 + np.linalg.cholesky(sigma / params.kappa0) @ rng.standard_normal(d)
    return HyperSample(mu=mu, sigma_mat=sigma)


def niw_posterior(params: NIWParams, thetas) -> NIWParams:
    """Conjugate update of the hyperprior given bottom-level vectors.

    With sample mean m and scatter C = sum (t_i - m)(t_i - m)^T the
    posterior is NIW((kappa0 mu0 + n m) / (kappa0 + n), kappa0 + n,
    nu0 + n, psi + C + kappa0 n / (kappa0 + n) (m - mu0)(m - mu0)^T).
    """
    arr = np.atleast_2d(np.asarray(thetas, dtype=float))
    if arr.size == 0:
        raise ValidationError("niw_posterior needs at least one theta vector")
    n, d = arr.shape
    if d != params.dim:
        raise ValidationError(f"theta vectors must have length {params.dim}")
    mean = arr.mean(axis=0)
    centred = arr - mean
    scatter = centred.T @ centred
    kappa_n = params.kappa0 + n
    dev = mean - params.mu0
    psi_n = params.psi + scatter + (params.kappa0 * n / kappa_n) * np.outer(dev, dev)
    return NIWParams(
        mu0=(params.kappa0 * params.mu0 + n * mean) / kappa_n,
        kappa0=kappa_n,
        nu0=params.nu0 + n,
        psi=0.5 * (psi_n + psi_n.T),
    )


def _mvn_logpdf_factory(mu: np.ndarray, sigma: np.ndarray):
    """Closure evaluating log N(x | mu, sigma) with a cached Cholesky."""
    chol = np.linalg.cholesky(sigma)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    d = mu.size
    const = -0.5 * (d * math.log(2.0 * math.pi) + log_det)

    def logpdf(x):
        from scipy.linalg import solve_triangular

        z = solve_triangular(chol, x - mu, lower=True)
        return const - 0.5 * float(z @ z)

    return logpdf


@dataclass
class HierRunResult:
    """Retained hierarchical samples plus the run configuration.

    Hyper samples are stored in dimensionless coordinates
    (``hyper_mu_nd``, ``hyper_sigma_nd``); the dimensional properties
    apply the parameter scales componentwise.
    """

    hyper_mu_nd: np.ndarray
    hyper_sigma_nd: np.ndarray
    bottom_chains: list[ChainState]
    fits: list[FitResult]
    config: ExperimentConfig
    hypercube: PriorHypercube
    scaling: Scaling
    n_sweeps: int
    burn_in: int
    seed: int

    @property
    def hyper_mu(self) -> np.ndarray:
        return self.hyper_mu_nd * self.scaling.param_scales

    @property
    def hyper_sigma(self) -> np.ndarray:
        s = self.scaling.param_scales
        return self.hyper_sigma_nd * np.outer(s, s)


class HierarchicalSampler:
    """Metropolis-within-Gibbs state over n experiments.

    ``sweep()`` advances every bottom chain by ``bottom_steps_per_sweep``
    adaptive MH steps under the current multivariate-normal prior, then
    redraws (mu, Sigma) from the conjugate hyper-posterior.  The first
    hyper state is set deterministically to (mu0, psi) because the
    configured hyperprior (kappa0 = 0, nu0 = 1) cannot be sampled.
    """

    def __init__(
        self,
        traces: list[CurrentTrace],
        config: ExperimentConfig,
        seed: int = 0,
        grid: SolverGrid | None = None,
        hypercube: PriorHypercube | None = None,
        niw: NIWParams | None = None,
        bottom_steps_per_sweep: int = 1,
        target_accept: float = 0.25,
        adapt_start: int = 100,
        fits: list[FitResult] | None = None,
        max_fit_evals: int = 10_000,
        threads: int = 1,
    ):
        if len(traces) < 2:
            raise ValidationError("hierarchical sampling needs at least 2 traces")
        if bottom_steps_per_sweep < 0:
            raise ValidationError("bottom_steps_per_sweep must be >= 0")
        self.config = config
        self.hypercube = hypercube if hypercube is not None else PriorHypercube.default(config)
        self.scaling = Scaling.from_config(config)
        self.cube_nd = self.hypercube.scaled(1.0 / self.scaling.param_scales)
        self.niw = niw if niw is not None else NIWParams.default_for(self.cube_nd)
        self.bottom_steps_per_sweep = bottom_steps_per_sweep
        self.threads = max(1, threads)
        self.n = len(traces)

        root = np.random.SeedSequence(seed)
        fit_seqs = root.spawn(self.n)
        chain_seqs = root.spawn(self.n)
        self._hyper_rng = np.random.default_rng(root.spawn(1)[0])

        self._models = [
            ForwardModel(config, tr.times, grid=grid) for tr in traces
        ]
        self._y_nd = [
            tr.currents / self.scaling.current_scale for tr in traces
        ]
        if fits is None:
            def one_fit(i):
                return mle_fit(
                    traces[i],
                    config,
                    hypercube=self.hypercube,
                    grid=grid,
                    seed=fit_seqs[i].generate_state(1)[0],
                    max_evals=max_fit_evals,
                )

            if self.threads > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    fits = list(pool.map(one_fit, range(self.n)))
            else:
                fits = [one_fit(i) for i in range(self.n)]
        self.fits = fits

        # current hyper state; deterministic initialisation, see class doc
        self.mu_s = self.niw.mu0.copy()
        self.sigma_s = self.niw.psi.copy()
        self._prior_logpdf = _mvn_logpdf_factory(self.mu_s, self.sigma_s)

        self.chains: list[AdaptiveChain] = []
        for i in range(self.n):
            y = self._y_nd[i]
            sigma_hi = sigma_upper_bound_nd(y)
            lower = np.append(self.cube_nd.lower, 0.0)
            upper = np.append(self.cube_nd.upper, sigma_hi)
            sigma0_nd = fits[i].theta_hat.sigma / self.scaling.current_scale
            x0 = np.append(
                self.scaling.to_dimensionless(fits[i].theta_hat),
                min(max(sigma0_nd, 1e-12 * sigma_hi), 0.999 * sigma_hi),
            )
            chain = AdaptiveChain(
                trace_loglik_nd(self._models[i], y),
                x0,
                lower,
                upper,
                rng=np.random.default_rng(chain_seqs[i]),
                log_prior_fn=lambda x: self._prior_logpdf(x[:5]),
                target_accept=target_accept,
                adapt_start=adapt_start,
            )
            self.chains.append(chain)

    def current_thetas(self) -> np.ndarray:
        """The n current bottom-level physical vectors (dimensionless)."""
        return np.stack([c.x[:5] for c in self.chains])

    def set_hyper(self, mu: np.ndarray, sigma: np.ndarray) -> None:
        self.mu_s = np.asarray(mu, dtype=float)
        self.sigma_s = np.asarray(sigma, dtype=float)
        self._prior_logpdf = _mvn_logpdf_factory(self.mu_s, self.sigma_s)
        for chain in self.chains:
            chain.refresh_prior()

    def _advance_bottom(self) -> None:
        steps = self.bottom_steps_per_sweep

        def run(chain):
            for _ in range(steps):
                chain.step()

        if self.threads > 1 and steps > 0:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                list(pool.map(run, self.chains))
        else:
            for chain in self.chains:
                run(chain)

    def sweep(self) -> HyperSample:
        """One Gibbs sweep; returns the new hyper draw."""
        self._advance_bottom()
        post = niw_posterior(self.niw, self.current_thetas())
        draw = sample_niw(post, self._hyper_rng)
        self.set_hyper(draw.mu, draw.sigma_mat)
        return draw


def run_hierarchical(
    traces: list[CurrentTrace],
    config: ExperimentConfig,
    n_sweeps: int = 10_000,
    burn_in: int = 5_000,
    seed: int = 0,
    **sampler_kwargs,
) -> HierRunResult:
    """Fit every trace, seed the bottom chains, and Gibbs-sample.

    Retains the post burn-in hyper draws and the matching bottom-level
    samples; reproducible from ``seed``.
    """
    if n_sweeps <= burn_in:
        raise ValidationError("n_sweeps must exceed burn_in")
    sampler = HierarchicalSampler(traces, config, seed=seed, **sampler_kwargs)
    n_keep = n_sweeps - burn_in
    d = 5
    hyper_mu = np.empty((n_keep, d))
    hyper_sigma = np.empty((n_keep, d, d))
    bottom = np.empty((sampler.n, n_keep, 6))
    logps = np.empty((sampler.n, n_keep))
    for s in range(n_sweeps):
        draw = sampler.sweep()
        k = s - burn_in
        if k >= 0:
            hyper_mu[k] = draw.mu
            hyper_sigma[k] = draw.sigma_mat
            for i, chain in enumerate(sampler.chains):
                bottom[i, k] = chain.x
                logps[i, k] = chain.log_posterior

    scales = sampler.scaling.param_scales
    i_scale = sampler.scaling.current_scale
    chains = []
    for i, chain in enumerate(sampler.chains):
        samples = np.empty((n_keep, 6))
        samples[:, :5] = bottom[i, :, :5] * scales
        samples[:, 5] = bottom[i, :, 5] * i_scale
        t_count = sampler._y_nd[i].size
        chains.append(
            ChainState(
                samples=samples,
                log_posteriors=logps[i] - t_count * math.log(i_scale),
                current_theta=ModelParams.from_vector(
                    samples[-1, :5], sigma=float(samples[-1, 5])
                ),
                proposal_cov=chain.cov.copy(),
                log_scale=chain.log_scale,
                accepted_count=chain.accepted,
                proposed_count=chain.proposed,
                rng_stream=seed,
            )
        )
    return HierRunResult(
        hyper_mu_nd=hyper_mu,
        hyper_sigma_nd=hyper_sigma,
        bottom_chains=chains,
        fits=sampler.fits,
        config=config,
        hypercube=sampler.hypercube,
        scaling=sampler.scaling,
        n_sweeps=n_sweeps,
        burn_in=burn_in,
        seed=seed,
    )


def posterior_predictive_density(mu_samples, sigma_samples, coordinate: int, xs):
    """Equal-weight mixture density over hyper draws for one coordinate.

    Evaluates mean_m Normal(x | mu_m[k], Sigma_m[k, k]) on the grid
    ``xs`` -- the distribution of that parameter expected in a fresh
    repeat of the experiment.
    """
    mu = np.asarray(mu_samples, dtype=float)
    sig = np.asarray(sigma_samples, dtype=float)
    xs = np.asarray(xs, dtype=float)
    if mu.ndim != 2 or mu.shape[0] == 0:
        raise ValidationError("need at least one hyper sample")
    means = mu[:, coordinate][:, None]
    variances = sig[:, coordinate, coordinate][:, None]
    dens = np.exp(-((xs[None, :] - means) ** 2) / (2.0 * variances)) / np.sqrt(
        2.0 * math.pi * variances
    )
    return dens.mean(axis=0)


@dataclass(frozen=True)
class PairCorrelation:
    """Scatter columns and Pearson correlation for one coordinate pair."""

    index_x: int
    index_y: int
    name_x: str
    name_y: str
    x: np.ndarray
    y: np.ndarray
    correlation: float  # nan when undefined (zero variance)


def pairwise_mu_table(mu_samples, names=PARAM_NAMES) -> list[PairCorrelation]:
    """All unordered coordinate pairs of the hyper-mean samples with their
    Pearson correlations; zero-variance pairs are flagged with nan."""
    mu = np.asarray(mu_samples, dtype=float)
    if mu.ndim != 2 or mu.shape[0] < 2:
        raise ValidationError("need at least two hyper samples")
    d = mu.shape[1]
    out = []
    for i in range(d):
        for j in range(i + 1, d):
            xi = mu[:, i]
            yj = mu[:, j]
            sx = xi.std()
            sy = yj.std()
            if sx == 0.0 or sy == 0.0:
                corr = math.nan
            else:
                corr = float(np.mean((xi - xi.mean()) * (yj - yj.mean())) / (sx * sy))
            out.append(
                PairCorrelation(
                    index_x=i,
                    index_y=j,
                    name_x=names[i],
                    name_y=names[j],
                    x=xi,
                    y=yj,
                    correlation=corr,
                )
            )
    return out
