"""Trace ingestion, block decimation, synthetic data, summary statistics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import TraceFormatError, ValidationError

__all__ = [
    "CurrentTrace",
    "SyntheticSpec",
    "TRACE_HEADER",
    "load_trace",
    "save_trace",
    "decimate_moving_average",
    "generate_synthetic",
    "read_synth_spec",
    "summarize",
    "SummaryRow",
]

TRACE_HEADER = "t_seconds,current_amps"

#: Dimensionless synthetic-study defaults: per-coordinate mean and standard
#: deviation of the generating (e0, k0, alpha, cdl, ru) distribution, and the
#: noise level as a fraction of the peak current.
DEFAULT_THETA_MEAN = (7.27, 2.01, 0.53, 3.70e-3, 1.06e-2)
DEFAULT_THETA_SD = (0.06, 0.7, 0.005, 0.7e-3, 0.3e-2)
DEFAULT_NOISE_FRACTION = 0.003


@dataclass(frozen=True)
class CurrentTrace:
    """A time-stamped total-current series (seconds, amperes).

    Times must be strictly increasing and uniformly spaced to within a
    relative tolerance of 1e-9.
    """

    times: np.ndarray
    currents: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        currents = np.asarray(self.currents, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "currents", currents)
        if times.ndim != 1 or currents.ndim != 1 or times.size != currents.size:
            raise ValidationError("times and currents must be 1-D and equal length")
        if times.size < 2:
            raise ValidationError("a trace needs at least 2 points")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(currents))):
            raise ValidationError("trace contains non-finite values")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise ValidationError("times must be strictly increasing")
        dt = (times[-1] - times[0]) / (times.size - 1)
        if np.max(np.abs(steps - dt)) > 1e-9 * dt:
            raise ValidationError("times must be uniformly spaced (1e-9 relative)")

    def __len__(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (self.times.size - 1))

    def scaled(self, factor: float) -> "CurrentTrace":
        return CurrentTrace(times=self.times, currents=self.currents * factor)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a batch of synthetic datasets.

    ``theta_mean`` and ``theta_sd`` are in the solver's dimensionless
    parameter units; the noise standard deviation is ``noise_fraction``
    times the peak absolute current of each noiseless trace.
    """

    theta_mean: np.ndarray
    theta_sd: np.ndarray
    n_sets: int
    noise_fraction: float
    seed: int

    def __post_init__(self):
        mean = np.asarray(self.theta_mean, dtype=float)
        sd = np.asarray(self.theta_sd, dtype=float)
        object.__setattr__(self, "theta_mean", mean)
        object.__setattr__(self, "theta_sd", sd)
        if mean.shape != (5,) or sd.shape != (5,):
            raise ValidationError("theta_mean and theta_sd must be 5-vectors")
        if np.any(sd < 0):
            raise ValidationError("theta_sd must be non-negative")
        if not (0 <= self.noise_fraction < 1):
            raise ValidationError("noise_fraction must lie in [0, 1)")
        if self.n_sets < 1:
            raise ValidationError("n_sets must be at least 1")

    @classmethod
    def default(cls, n_sets: int = 10, seed: int = 0) -> "SyntheticSpec":
        return cls(
            theta_mean=np.array(DEFAULT_THETA_MEAN),
            theta_sd=np.array(DEFAULT_THETA_SD),
            n_sets=n_sets,
            noise_fraction=DEFAULT_NOISE_FRACTION,
            seed=seed,
        )


def save_trace(trace: CurrentTrace, path) -> None:
    """Write a trace as CSV at full double precision."""
    lines = [TRACE_HEADER]
    lines.extend(
        f"{t:.17g},{i:.17g}" for t, i in zip(trace.times, trace.currents)
    )
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace(path, sign_flip: bool = False) -> CurrentTrace:
    """Read a two-column trace CSV written by :func:`save_trace`.

    ``sign_flip`` negates the currents on ingestion, for instruments that
    record reduction currents as negative.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"trace file not found: {path}")
    times = []
    currents = []
    with path.open() as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != TRACE_HEADER:
            raise TraceFormatError(
                f"expected header {TRACE_HEADER!r}, got {header!r}", line_number=1
            )
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TraceFormatError(
                    f"expected two comma-separated values, got {line!r}",
                    line_number=lineno,
                )
            try:
                times.append(float(parts[0]))
                currents.append(float(parts[1]))
            except ValueError:
                raise TraceFormatError(
                    f"could not parse numbers from {line!r}", line_number=lineno
                ) from None
    currents_arr = np.array(currents)
    if sign_flip:
        currents_arr = -currents_arr
    return CurrentTrace(times=np.array(times), currents=currents_arr)


def decimate_moving_average(trace: CurrentTrace, window: int = 21) -> CurrentTrace:
    """Average consecutive non-overlapping blocks of ``window`` points.

    Each block contributes one output point carrying the block-mean time
    and block-mean current; a final partial block is dropped.
    """
    if window < 1:
        raise ValidationError("window must be at least 1")
    if window == 1:
        return trace
    n_blocks = len(trace) // window
    if n_blocks == 0:
        raise ValidationError(
            f"trace of length {len(trace)} is shorter than window {window}"
        )
    keep = n_blocks * window
    times = trace.times[:keep].reshape(n_blocks, window).mean(axis=1)
    currents = trace.currents[:keep].reshape(n_blocks, window).mean(axis=1)
    return CurrentTrace(times=times, currents=currents)


def generate_synthetic(spec: SyntheticSpec, config, grid=None, hypercube=None):
    """Simulate ``spec.n_sets`` noisy datasets with randomly drawn parameters.

    Parameter vectors are drawn (in dimensionless units) from a diagonal
    normal around ``spec.theta_mean``, rejected until they fall inside the
    prior hypercube.  Gaussian noise with standard deviation
    ``noise_fraction * max |I|`` is added per dataset.  Returns a list of
    (CurrentTrace, dimensionless theta) pairs; fully determined by
    ``spec.seed``.
    """
    from .model import PriorHypercube
    from .solver import ForwardModel, Scaling, SolverGrid

    scaling = Scaling.from_config(config)
    if hypercube is None:
        hypercube = PriorHypercube.default(config)
    cube_nd = hypercube.scaled(1.0 / scaling.param_scales)
    if grid is None:
        grid = SolverGrid.for_config(config)
    model = ForwardModel(
        config, np.linspace(0.0, config.t_total, grid.n_time), grid=grid
    )

    root = np.random.SeedSequence(spec.seed)
    streams = [np.random.default_rng(s) for s in root.spawn(spec.n_sets)]
    out = []
    for rng in streams:
        theta = None
        for _ in range(1000):
            cand = rng.normal(spec.theta_mean, spec.theta_sd)
            if cube_nd.contains(cand):
                theta = cand
                break
        if theta is None:
            raise ValidationError(
                "synthetic theta draw rejected by the hypercube 1000 times; "
                "check theta_mean/theta_sd against the bounds"
            )
        clean = model.currents_nd(theta) * scaling.current_scale
        noise_sd = spec.noise_fraction * np.max(np.abs(clean))
        noisy = clean + rng.normal(0.0, 1.0, size=clean.size) * noise_sd
        out.append((CurrentTrace(times=model.times_s, currents=noisy), theta))
    return out


def read_synth_spec(path, seed_override: int | None = None) -> SyntheticSpec:
    """Load a SyntheticSpec from a key = value file.

    ``theta_mean`` and ``theta_sd`` are comma-separated 5-vectors; any
    missing key falls back to the module defaults.
    """
    from .model import parse_key_value_file

    raw = parse_key_value_file(path)
    known = {"theta_mean", "theta_sd", "n_sets", "noise_fraction", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"{path}: unknown keys {sorted(unknown)}")

    def vector(key, default):
        if key not in raw:
            return np.array(default)
        try:
            return np.array([float(v) for v in raw[key].split(",")])
        except ValueError as exc:
            raise ValidationError(f"{path}: key {key}: {exc}") from exc

    try:
        n_sets = int(raw.get("n_sets", 10))
        noise = float(raw.get("noise_fraction", DEFAULT_NOISE_FRACTION))
        seed = int(raw.get("seed", 0))
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if seed_override is not None:
        seed = seed_override
    return SyntheticSpec(
        theta_mean=vector("theta_mean", DEFAULT_THETA_MEAN),
        theta_sd=vector("theta_sd", DEFAULT_THETA_SD),
        n_sets=n_sets,
        noise_fraction=noise,
        seed=seed,
    )


@dataclass(frozen=True)
class SummaryRow:
    """Mean, spread and central quantiles of one sampled coordinate."""

    mean: float
    sd: float
    p2_5: float
    p50: float
    p97_5: float


def summarize(samples) -> list[SummaryRow]:
    """Per-coordinate mean, unbiased SD and 2.5/50/97.5 percentiles.

    ``samples`` is an (n, k) array of n >= 2 sample vectors; percentiles
    use linear interpolation.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        raise ValidationError("summarize needs at least 2 samples")
    quantiles = np.percentile(arr, [2.5, 50.0, 97.5], axis=0)
    return [
        SummaryRow(
            mean=float(np.mean(arr[:, k])),
            sd=float(np.std(arr[:, k], ddof=1)),
            p2_5=float(quantiles[0, k]),
            p50=float(quantiles[1, k]),
            p97_5=float(quantiles[2, k]),
        )
        for k in range(arr.shape[1])
    ]
