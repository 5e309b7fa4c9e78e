"""Command-line front end.

Subcommands: ``simulate`` (forward model), ``synth`` (synthetic
datasets), ``fit`` (maximum likelihood), ``mcmc`` (single-experiment
posterior), ``hier`` (hierarchical pooling of repeated experiments).

All user-facing numbers are in laboratory units; dimensionless
internals are only written out under ``--dimensionless``.  Every
command records a JSON manifest (inputs, digests, seeds, outputs,
timings) sufficient to reproduce its outputs; sample CSVs are
byte-identical across re-runs with the same seed and inputs.

Exit codes: 0 success, 2 argument/validation error, 3 solver failure,
4 inference failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    CurrentTrace,
    decimate_moving_average,
    generate_synthetic,
    load_trace,
    read_synth_spec,
    save_trace,
    summarize,
)
from .errors import (
    AcvBayesError,
    FitFailureError,
    SolverDivergenceError,
    ValidationError,
)
from .hierarchy import (
    pairwise_mu_table,
    posterior_predictive_density,
    run_hierarchical,
)
from .inference import mle_fit, run_single_chain
from .model import PARAM_NAMES, ExperimentConfig, read_config, read_params
from .solver import Scaling, SolverGrid, simulate

EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_INFERENCE = 4

_ENV_THREADS = "ACVBAYES_THREADS"


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Reproducibility record written next to each command's outputs."""

    command: str
    config: dict
    seeds: dict
    settings: dict
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def add_inputs(self, paths) -> None:
        for p in paths:
            p = Path(p)
            self.inputs.append({"path": str(p), "sha256": _sha256(p)})

    def write(self, path: Path) -> None:
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise AcvBayesError(f"manifest lists missing outputs: {missing}")
        payload = {
            "command": self.command,
            "version": __version__,
            "config": self.config,
            "seeds": self.seeds,
            "settings": self.settings,
            "inputs": self.inputs,
            "outputs": [str(p) for p in self.outputs],
            "wall_clock_s": self.wall_clock_s,
        }
        payload.update(self.extra)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _summary_block(title: str, names, samples) -> str:
    rows = summarize(samples)
    width = max(len(n) for n in names)
    lines = [title, "-" * len(title)]
    lines.append(
        f"{'param':<{width}}  {'mean':>13} {'sd':>13} {'p2.5':>13} {'p50':>13} {'p97.5':>13}"
    )
    for name, row in zip(names, rows):
        lines.append(
            f"{name:<{width}}  {row.mean:>13.6g} {row.sd:>13.6g} "
            f"{row.p2_5:>13.6g} {row.p50:>13.6g} {row.p97_5:>13.6g}"
        )
    return "\n".join(lines) + "\n"


def _load_traces(paths, window: int, sign_flip: bool) -> list[CurrentTrace]:
    traces = []
    for p in paths:
        trace = load_trace(p, sign_flip=sign_flip)
        traces.append(decimate_moving_average(trace, window=window))
    return traces


def _sample_rows(chain):
    return np.column_stack([chain.samples, chain.log_posteriors])


_SAMPLE_HEADER = ["e0", "k0", "alpha", "cdl", "ru", "sigma", "log_posterior"]


# --- subcommand implementations -------------------------------------------

def _cmd_simulate(args) -> int:
    config = read_config(args.config)
    params = read_params(args.params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    trace = simulate(params, config)
    save_trace(trace, out)
    manifest = RunManifest(
        command="simulate",
        config=config.as_dict(),
        seeds={},
        settings={"params": params.as_dict()},
        outputs=[out],
    )
    manifest.add_inputs([args.config, args.params])
    if args.plot:
        from .figures import plot_trace

        png = out.with_suffix(".png")
        plot_trace(trace, png, title=out.stem)
        manifest.outputs.append(png)
    manifest.wall_clock_s = time.perf_counter() - started
    manifest.write(out.parent / f"{out.stem}_manifest.json")
    return 0


def _cmd_synth(args) -> int:
    config = read_config(args.config)
    spec = read_synth_spec(args.spec, seed_override=args.seed) if args.spec else None
    if spec is None:
        from .data import SyntheticSpec

        spec = SyntheticSpec.default(seed=args.seed if args.seed is not None else 0)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    datasets = generate_synthetic(spec, config)
    scaling = Scaling.from_config(config)
    outputs = []
    true_thetas = []
    for i, (trace, theta_nd) in enumerate(datasets):
        path = out_dir / f"synth_{i}.csv"
        save_trace(trace, path)
        outputs.append(path)
        true_thetas.append(
            {
                "dataset": i,
                "theta_dimensionless": [float(v) for v in theta_nd],
                "theta_dimensional": dict(
                    zip(PARAM_NAMES, (theta_nd * scaling.param_scales).tolist())
                ),
            }
        )
    manifest = RunManifest(
        command="synth",
        config=config.as_dict(),
        seeds={"seed": int(spec.seed)},
        settings={
            "theta_mean": spec.theta_mean.tolist(),
            "theta_sd": spec.theta_sd.tolist(),
            "n_sets": spec.n_sets,
            "noise_fraction": spec.noise_fraction,
        },
        outputs=outputs,
        extra={"true_theta": true_thetas},
    )
    manifest.add_inputs([args.config] + ([args.spec] if args.spec else []))
    manifest.wall_clock_s = time.perf_counter() - started
    manifest.write(out_dir / "manifest.json")
    return 0


def _cmd_fit(args) -> int:
    config = read_config(args.config)
    traces = _load_traces(args.data, args.window, args.sign_flip)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    root = np.random.SeedSequence(args.seed)
    seeds = [int(s.generate_state(1)[0]) for s in root.spawn(len(traces))]
    outputs = []
    rows = []
    for i, trace in enumerate(traces):
        fit = mle_fit(trace, config, seed=seeds[i], max_evals=args.max_evals)
        th = fit.theta_hat
        text_path = out_dir / f"fit_{i}.txt"
        lines = [
            f"dataset: {args.data[i]}",
            f"points: {len(trace)}",
            f"optimizer_evals: {fit.optimizer_evals}",
            f"log_likelihood: {_fmt(fit.log_likelihood_at_hat)}",
            "maximum-likelihood estimate:",
        ]
        for name in PARAM_NAMES + ("sigma",):
            lines.append(f"  {name} = {_fmt(getattr(th, name))}")
        text_path.write_text("\n".join(lines) + "\n")
        outputs.append(text_path)
        rows.append(
            [th.e0, th.k0, th.alpha, th.cdl, th.ru, th.sigma,
             fit.log_likelihood_at_hat, fit.optimizer_evals]
        )
        if args.plot:
            from .figures import plot_trace
            from .solver import ForwardModel

            png = out_dir / f"fit_{i}.png"
            model = ForwardModel(config, trace.times)
            plot_trace(trace, png, model_currents=model.currents(th),
                       title=f"dataset {i} maximum-likelihood fit")
            outputs.append(png)
    csv_path = out_dir / "fits.csv"
    _write_csv(
        csv_path,
        ["e0", "k0", "alpha", "cdl", "ru", "sigma", "log_likelihood", "evals"],
        rows,
    )
    outputs.append(csv_path)
    manifest = RunManifest(
        command="fit",
        config=config.as_dict(),
        seeds={"seed": args.seed, "per_dataset": seeds},
        settings={"window": args.window, "sign_flip": args.sign_flip,
                  "max_evals": args.max_evals},
        outputs=outputs,
    )
    manifest.add_inputs([args.config] + list(args.data))
    manifest.wall_clock_s = time.perf_counter() - started
    manifest.write(out_dir / "manifest.json")
    return 0


def _cmd_mcmc(args) -> int:
    if args.samples <= args.burn_in:
        raise ValidationError("--samples must exceed --burn-in")
    config = read_config(args.config)
    (trace,) = _load_traces([args.data[0]], args.window, args.sign_flip)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    chain = run_single_chain(
        trace,
        config,
        n_samples=args.samples,
        burn_in=args.burn_in,
        seed=args.seed,
        max_fit_evals=args.max_evals,
    )
    samples_path = out_dir / "samples.csv"
    _write_csv(samples_path, _SAMPLE_HEADER, _sample_rows(chain))
    summary_path = out_dir / "summary.txt"
    summary_path.write_text(
        _summary_block(
            "posterior samples (laboratory units)",
            list(PARAM_NAMES) + ["sigma"],
            chain.samples,
        )
        + f"\nacceptance_rate: {chain.acceptance_rate:.4f}\n"
    )
    outputs = [samples_path, summary_path]
    if args.dimensionless:
        scaling = Scaling.from_config(config)
        nd = chain.samples.copy()
        nd[:, :5] /= scaling.param_scales
        nd[:, 5] /= scaling.current_scale
        nd_path = out_dir / "samples_nondim.csv"
        _write_csv(nd_path, _SAMPLE_HEADER[:6], nd)
        outputs.append(nd_path)
    if args.plot:
        from .figures import plot_sample_histograms

        png = out_dir / "samples.png"
        plot_sample_histograms(
            chain.samples, list(PARAM_NAMES) + ["sigma"], png
        )
        outputs.append(png)
    manifest = RunManifest(
        command="mcmc",
        config=config.as_dict(),
        seeds={"seed": args.seed},
        settings={
            "samples": args.samples,
            "burn_in": args.burn_in,
            "window": args.window,
            "sign_flip": args.sign_flip,
            "max_evals": args.max_evals,
        },
        outputs=outputs,
        extra={"acceptance_rate": chain.acceptance_rate},
    )
    manifest.add_inputs([args.config, args.data[0]])
    manifest.wall_clock_s = time.perf_counter() - started
    manifest.write(out_dir / "manifest.json")
    return 0


def _hyper_header() -> list[str]:
    header = [f"mu_{n}" for n in PARAM_NAMES]
    header += [f"var_{n}" for n in PARAM_NAMES]
    header += [
        f"cov_{PARAM_NAMES[i]}_{PARAM_NAMES[j]}"
        for i in range(5)
        for j in range(i + 1, 5)
    ]
    return header


def _hyper_rows(mu, sigma):
    n = mu.shape[0]
    rows = np.empty((n, 20))
    rows[:, :5] = mu
    rows[:, 5:10] = sigma[:, range(5), range(5)]
    col = 10
    for i in range(5):
        for j in range(i + 1, 5):
            rows[:, col] = sigma[:, i, j]
            col += 1
    return rows


def _cmd_hier(args) -> int:
    if len(args.data) < 2:
        raise ValidationError("hier needs at least 2 data files")
    if args.samples <= args.burn_in:
        raise ValidationError("--samples must exceed --burn-in")
    config = read_config(args.config)
    traces = _load_traces(args.data, args.window, args.sign_flip)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    result = run_hierarchical(
        traces,
        config,
        n_sweeps=args.samples,
        burn_in=args.burn_in,
        seed=args.seed,
        threads=args.threads,
        max_fit_evals=args.max_evals,
    )
    outputs = []

    hyper_path = out_dir / "hyper_samples.csv"
    mu = result.hyper_mu
    sigma = result.hyper_sigma
    _write_csv(hyper_path, _hyper_header(), _hyper_rows(mu, sigma))
    outputs.append(hyper_path)

    for i, chain in enumerate(result.bottom_chains):
        path = out_dir / f"samples_{i}.csv"
        _write_csv(path, _SAMPLE_HEADER, _sample_rows(chain))
        outputs.append(path)

    grids = []
    densities = []
    for k, name in enumerate(PARAM_NAMES):
        sds = np.sqrt(sigma[:, k, k])
        lo = float(np.min(mu[:, k]) - 4.0 * np.max(sds))
        hi = float(np.max(mu[:, k]) + 4.0 * np.max(sds))
        xs = np.linspace(lo, hi, 512)
        dens = posterior_predictive_density(mu, sigma, k, xs)
        grids.append(xs)
        densities.append(dens)
        path = out_dir / f"predictive_{name}.csv"
        _write_csv(path, [name, "density"], np.column_stack([xs, dens]))
        outputs.append(path)

    pairs = pairwise_mu_table(mu)
    corr_path = out_dir / "pairwise_correlations.csv"
    corr_lines = ["param_x,param_y,correlation,n_samples"]
    for p in pairs:
        corr_lines.append(
            f"{p.name_x},{p.name_y},{_fmt(p.correlation)},{p.x.size}"
        )
    corr_path.write_text("\n".join(corr_lines) + "\n")
    outputs.append(corr_path)

    summary_path = out_dir / "summary.txt"
    text = _summary_block("hyper means mu (laboratory units)", PARAM_NAMES, mu)
    text += "\n" + _summary_block(
        "hyper variances diag(Sigma) (laboratory units)",
        PARAM_NAMES,
        sigma[:, range(5), range(5)],
    )
    for i, chain in enumerate(result.bottom_chains):
        text += "\n" + _summary_block(
            f"experiment {i} posterior", list(PARAM_NAMES) + ["sigma"], chain.samples
        )
    summary_path.write_text(text)
    outputs.append(summary_path)

    if args.dimensionless:
        nd_path = out_dir / "hyper_samples_nondim.csv"
        _write_csv(
            nd_path,
            _hyper_header(),
            _hyper_rows(result.hyper_mu_nd, result.hyper_sigma_nd),
        )
        outputs.append(nd_path)

    if args.plot:
        from .figures import (
            plot_hyper_histograms,
            plot_pairwise,
            plot_predictive,
            plot_sample_histograms,
        )

        paths = [
            out_dir / "hyper_samples.png",
            out_dir / "predictive.png",
            out_dir / "pairwise_mu.png",
        ]
        plot_hyper_histograms(mu, sigma, paths[0])
        plot_predictive(grids, densities, PARAM_NAMES, paths[1])
        plot_pairwise(pairs, paths[2])
        outputs.extend(paths)
        for i, chain in enumerate(result.bottom_chains):
            png = out_dir / f"samples_{i}.png"
            plot_sample_histograms(
                chain.samples, list(PARAM_NAMES) + ["sigma"], png
            )
            outputs.append(png)

    manifest = RunManifest(
        command="hier",
        config=config.as_dict(),
        seeds={"seed": args.seed},
        settings={
            "samples": args.samples,
            "burn_in": args.burn_in,
            "window": args.window,
            "sign_flip": args.sign_flip,
            "threads": args.threads,
            "max_evals": args.max_evals,
        },
        outputs=outputs,
        extra={
            "fits": [f.theta_hat.as_dict() for f in result.fits],
            "acceptance_rates": [
                c.acceptance_rate for c in result.bottom_chains
            ],
        },
    )
    manifest.add_inputs([args.config] + list(args.data))
    manifest.wall_clock_s = time.perf_counter() - started
    manifest.write(out_dir / "manifest.json")
    return 0


# --- argument parsing -------------------------------------------------------

def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(_ENV_THREADS, "1")))
    except ValueError:
        return 1


def _add_common(parser, *, data_nargs=None, samples=False, seed_default=0):
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--out", required=True, help="output file or directory")
    parser.add_argument("--seed", type=int, default=seed_default,
                        help="master RNG seed")
    parser.add_argument("--plot", action="store_true",
                        help="also render figures next to the CSV output")
    if data_nargs is not None:
        parser.add_argument("data", nargs=data_nargs, help="trace CSV file(s)")
        parser.add_argument("--window", type=int, default=21,
                            help="block-average decimation window (1 disables)")
        parser.add_argument("--sign-flip", action="store_true",
                            help="negate currents on ingestion")
        parser.add_argument("--max-evals", type=int, default=10_000,
                            help="optimiser evaluation budget per fit")
    if samples:
        parser.add_argument("--samples", type=int, default=10_000,
                            help="total MCMC samples/sweeps")
        parser.add_argument("--burn-in", type=int, default=5_000,
                            help="initial samples to discard")
        parser.add_argument("--dimensionless", action="store_true",
                            help="also write dimensionless sample tables")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acvbayes",
        description="Simulate ac voltammetry and recover its governing "
                    "parameters by Bayesian inference.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the forward model")
    _add_common(p)
    p.add_argument("--params", required=True, help="model parameter file")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("synth", help="generate synthetic datasets")
    _add_common(p, seed_default=None)
    p.add_argument("--spec", help="synthetic spec file (defaults used if omitted)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="maximum-likelihood fit per dataset")
    _add_common(p, data_nargs="+")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("mcmc", help="single-experiment posterior sampling")
    _add_common(p, data_nargs=1, samples=True)
    p.set_defaults(func=_cmd_mcmc)

    p = sub.add_parser("hier", help="hierarchical pooling of repeats")
    _add_common(p, data_nargs="+", samples=True)
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help=f"worker threads (default ${_ENV_THREADS} or 1)")
    p.set_defaults(func=_cmd_hier)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverDivergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FitFailureError, AcvBayesError) as exc:
        print(f"inference failure: {exc}", file=sys.stderr)
        return EXIT_INFERENCE


if __name__ == "__main__":
    sys.exit(main())
