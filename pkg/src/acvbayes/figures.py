"""Matplotlib rendering of the report tables to image files.

Only imported when figure output is requested, so headless use of the
library and CLI never touches matplotlib.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import PARAM_NAMES

__all__ = [
    "plot_trace",
    "plot_sample_histograms",
    "plot_hyper_histograms",
    "plot_predictive",
    "plot_pairwise",
]

_UNITS = {"e0": "V", "k0": "cm/s", "alpha": "", "cdl": "F/cm^2", "ru": "ohm"}


def _label(name: str) -> str:
    unit = _UNITS.get(name, "")
    return f"{name} ({unit})" if unit else name


def plot_trace(trace, path, model_currents=None, title=""):
    """Current-versus-time trace, optionally with a model overlay."""
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(trace.times, trace.currents * 1e6, lw=0.5, label="data")
    if model_currents is not None:
        ax.plot(trace.times, np.asarray(model_currents) * 1e6, lw=0.5,
                alpha=0.8, label="model")
        ax.legend(loc="best")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("I (uA)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sample_histograms(samples, names, path, truths=None):
    """One histogram per sampled coordinate."""
    samples = np.asarray(samples)
    k = samples.shape[1]
    fig, axes = plt.subplots((k + 2) // 3, 3, figsize=(11, 2.6 * ((k + 2) // 3)))
    axes = np.atleast_1d(axes).ravel()
    for i in range(k):
        ax = axes[i]
        ax.hist(samples[:, i], bins=60, density=True, color="C0", alpha=0.8)
        if truths is not None:
            ax.axvline(truths[i], color="k", ls="--", lw=1)
        ax.set_xlabel(_label(names[i]))
    for ax in axes[k:]:
        ax.set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_hyper_histograms(hyper_mu, hyper_sigma, path):
    """Hyper-mean histograms (left column) and hyper-variance histograms
    (right column), one row per parameter."""
    mu = np.asarray(hyper_mu)
    sig = np.asarray(hyper_sigma)
    d = mu.shape[1]
    fig, axes = plt.subplots(d, 2, figsize=(9, 2.2 * d))
    for i in range(d):
        axes[i, 0].hist(mu[:, i], bins=60, density=True, color="C0", alpha=0.8)
        axes[i, 0].set_xlabel(f"mean of {_label(PARAM_NAMES[i])}")
        axes[i, 1].hist(sig[:, i, i], bins=60, density=True, color="C1", alpha=0.8)
        axes[i, 1].set_xlabel(f"variance of {PARAM_NAMES[i]}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_predictive(grids, densities, names, path):
    """Posterior-predictive density curves, one panel per parameter."""
    k = len(names)
    fig, axes = plt.subplots((k + 2) // 3, 3, figsize=(11, 2.6 * ((k + 2) // 3)))
    axes = np.atleast_1d(axes).ravel()
    for i in range(k):
        axes[i].plot(grids[i], densities[i], lw=1.2)
        axes[i].set_xlabel(_label(names[i]))
        axes[i].set_ylabel("density")
    for ax in axes[k:]:
        ax.set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_pairwise(pairs, path, bins=50):
    """Scatter matrix of the hyper-mean samples: scatters below the
    diagonal, histograms on it."""
    d = max(p.index_y for p in pairs) + 1
    names = [None] * d
    for p in pairs:
        names[p.index_x] = p.name_x
        names[p.index_y] = p.name_y
    cols = [None] * d
    for p in pairs:
        cols[p.index_x] = p.x
        cols[p.index_y] = p.y
    fig, axes = plt.subplots(d, d, figsize=(2.1 * d, 2.1 * d))
    for i in range(d):
        for j in range(d):
            ax = axes[i, j]
            if i == j:
                ax.hist(cols[i], bins=bins, color="C0", alpha=0.8)
            elif i > j:
                ax.plot(cols[j], cols[i], ".", ms=1, alpha=0.4)
            else:
                ax.set_visible(False)
            if i == d - 1 and j <= i:
                ax.set_xlabel(_label(names[j]))
            if j == 0 and i > 0:
                ax.set_ylabel(_label(names[i]))
            ax.tick_params(labelsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
