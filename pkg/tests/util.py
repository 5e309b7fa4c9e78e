"""Shared helpers for the test suite."""

import numpy as np

from acvbayes import CurrentTrace, ExperimentConfig, ModelParams


def make_config(n_time_points=600, **overrides) -> ExperimentConfig:
    """The reference cell: 0.5 -> -0.1 V at 0.894 V/s with a 9.02 Hz,
    0.080 V sine, 0.070 cm^2 electrode, D = 7.2e-6 cm^2/s, 1 mM bulk."""
    base = dict(
        e_start=0.5,
        e_reverse=-0.1,
        scan_rate_v=-0.894,
        delta_e=0.080,
        frequency=9.02,
        electrode_area_s=0.070,
        diffusion_d=7.2e-6,
        bulk_conc=1.0e-6,
        temperature=298.15,
        n_time_points=n_time_points,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def fig_params(**overrides) -> ModelParams:
    """Reference maximum-likelihood point used throughout the tests."""
    base = dict(e0=0.214, k0=0.010, alpha=0.528, cdl=16.9e-6, ru=0.0)
    base.update(overrides)
    return ModelParams(**base)


def add_noise(trace: CurrentTrace, fraction: float, seed: int) -> CurrentTrace:
    rng = np.random.default_rng(seed)
    sd = fraction * np.max(np.abs(trace.currents))
    return CurrentTrace(
        times=trace.times,
        currents=trace.currents + rng.normal(0.0, sd, len(trace)),
    )


def batch_means_se(samples: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Monte-Carlo standard error of the mean of a correlated chain,
    estimated from batch means."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    size = n // n_batches
    trimmed = samples[: size * n_batches]
    batches = trimmed.reshape(n_batches, size, -1).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)
