"""Domain types, physical constants, and the applied-potential waveform.

Everything here is shared by the simulator and by both inference layers.
All types are immutable after construction and safe to share between
concurrently running evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "FARADAY",
    "GAS_CONSTANT",
    "PhysicalConstants",
    "CONSTANTS",
    "ExperimentConfig",
    "ModelParams",
    "PriorHypercube",
    "PARAM_NAMES",
    "applied_potential",
    "applied_potential_rate",
    "parse_key_value_file",
    "read_config",
    "read_params",
]

#: Faraday constant, C/mol.
FARADAY = 96485.332
#: Molar gas constant, J/(mol K).
GAS_CONSTANT = 8.314462

#: Order of the five physical parameters used for every vector/matrix API.
PARAM_NAMES = ("e0", "k0", "alpha", "cdl", "ru")


@dataclass(frozen=True)
class PhysicalConstants:
    """Fixed physical constants (C/mol and J/(mol K))."""

    faraday_f: float = FARADAY
    gas_r: float = GAS_CONSTANT


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class ExperimentConfig:
    """Instrument, waveform, and cell constants for one experiment.

    The scan rate is signed: negative for a downward sweep, so that the
    same two-branch ramp formula covers both sweep directions.

    Units: potentials in V, scan rate V/s, frequency Hz, area cm^2,
    diffusion coefficient cm^2/s, bulk concentration mol/cm^3,
    temperature K.
    """

    e_start: float
    e_reverse: float
    scan_rate_v: float
    delta_e: float
    frequency: float
    electrode_area_s: float
    diffusion_d: float
    bulk_conc: float
    temperature: float = 298.15
    n_time_points: int = 25_000

    def __post_init__(self):
        positives = [
            ("electrode_area_s", self.electrode_area_s),
            ("diffusion_d", self.diffusion_d),
            ("bulk_conc", self.bulk_conc),
            ("temperature", self.temperature),
            ("frequency", self.frequency),
        ]
        for name, value in positives:
            if not np.isfinite(value) or value <= 0:
                raise ValidationError(f"{name} must be positive, got {value!r}")
        if self.delta_e < 0:
            raise ValidationError("delta_e must be non-negative")
        if self.n_time_points < 2:
            raise ValidationError("n_time_points must be at least 2")
        if self.scan_rate_v == 0 or not np.isfinite(self.scan_rate_v):
            raise ValidationError("scan_rate_v must be nonzero and finite")
        if np.sign(self.scan_rate_v) != np.sign(self.e_reverse - self.e_start):
            raise ValidationError(
                "sign of scan_rate_v must match sign of e_reverse - e_start"
            )

    @property
    def t_reverse(self) -> float:
        """Time of the sweep reversal, s (always positive)."""
        return (self.e_reverse - self.e_start) / self.scan_rate_v

    @property
    def t_total(self) -> float:
        """Duration of the full forward-and-back cycle, s."""
        return 2.0 * self.t_reverse

    @property
    def omega(self) -> float:
        """Radial frequency of the superimposed sine, rad/s."""
        return 2.0 * np.pi * self.frequency

    @property
    def potential_range(self) -> float:
        """Width of the swept dc window |e_start - e_reverse|, V."""
        return abs(self.e_start - self.e_reverse)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ModelParams:
    """The five inferred physical parameters plus the noise scale.

    ``sigma`` (noise standard deviation, A) is optional so that purely
    forward simulations do not have to invent one.
    """

    e0: float
    k0: float
    alpha: float
    cdl: float
    ru: float
    sigma: float | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        for name in ("k0", "cdl", "ru"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.sigma is not None and not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma!r}")

    def as_vector(self) -> np.ndarray:
        """The five physical parameters as an array in PARAM_NAMES order."""
        return np.array([self.e0, self.k0, self.alpha, self.cdl, self.ru])

    @classmethod
    def from_vector(cls, vec, sigma: float | None = None) -> "ModelParams":
        e0, k0, alpha, cdl, ru = (float(v) for v in vec)
        return cls(e0=e0, k0=k0, alpha=alpha, cdl=cdl, ru=ru, sigma=sigma)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class PriorHypercube:
    """Axis-aligned box of admissible (e0, k0, alpha, cdl, ru) values."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != (5,) or upper.shape != (5,):
            raise ValidationError("hypercube bounds must be length-5 vectors")
        if not np.all(lower < upper):
            raise ValidationError("hypercube requires lower < upper componentwise")

    @classmethod
    def default(cls, config: ExperimentConfig) -> "PriorHypercube":
        """Default bounds: e0 inset 10% of the swept window from either end,
        k0 in [0, 1] cm/s, alpha in [0.4, 0.6], cdl in [0, 200] uF/cm^2,
        ru in [0, 80] ohm."""
        e_lo = min(config.e_start, config.e_reverse) + 0.1 * config.potential_range
        e_hi = max(config.e_start, config.e_reverse) - 0.1 * config.potential_range
        lower = np.array([e_lo, 0.0, 0.4, 0.0, 0.0])
        upper = np.array([e_hi, 1.0, 0.6, 200e-6, 80.0])
        return cls(lower=lower, upper=upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, vec) -> bool:
        v = np.asarray(vec, dtype=float)
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))

    def clip(self, vec) -> np.ndarray:
        return np.clip(np.asarray(vec, dtype=float), self.lower, self.upper)

    def scaled(self, scale) -> "PriorHypercube":
        """Image of the box under componentwise multiplication by ``scale``."""
        s = np.asarray(scale, dtype=float)
        return PriorHypercube(lower=self.lower * s, upper=self.upper * s)


def _check_time_domain(t, config: ExperimentConfig):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > config.t_total):
        raise ValidationError(
            f"time outside [0, {config.t_total:.6g}] s for this configuration"
        )
    return t


def applied_potential(t, config: ExperimentConfig):
    """Applied potential E_app(t), V, on the ramped single-sine cycle.

    Accepts a scalar or an array of times in [0, 2 * t_reverse]; the two
    ramp branches share the value at the reversal time, so the waveform
    is continuous.
    """
    t = _check_time_domain(t, config)
    v = config.scan_rate_v
    t_rev = config.t_reverse
    ramp = np.where(t <= t_rev, v * t, -v * t + 2.0 * v * t_rev)
    out = config.e_start + ramp + config.delta_e * np.sin(config.omega * t)
    return float(out) if np.isscalar(out) or out.ndim == 0 else out


def applied_potential_rate(t, config: ExperimentConfig):
    """Time derivative dE_app/dt, V/s.

    At the reversal corner the (one-sided) reverse-branch rate is
    returned; elsewhere the derivative is classical.
    """
    t = _check_time_domain(t, config)
    v = config.scan_rate_v
    ramp_rate = np.where(t < config.t_reverse, v, -v)
    out = ramp_rate + config.delta_e * config.omega * np.cos(config.omega * t)
    return float(out) if np.isscalar(out) or out.ndim == 0 else out


# --- plain key = value config files -------------------------------------

def parse_key_value_file(path) -> dict[str, str]:
    """Parse a ``key = value`` text file; '#' starts a comment."""
    result: dict[str, str] = {}
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key or key in result:
            raise ValidationError(f"{path}:{lineno}: bad or duplicate key {key!r}")
        result[key] = value.strip()
    return result


def _build_from_kv(cls, raw: dict[str, str], path):
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ValidationError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, text in raw.items():
        try:
            kwargs[name] = int(text) if known[name].type == "int" else float(text)
        except ValueError as exc:
            raise ValidationError(f"{path}: key {name}: {exc}") from exc
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def read_config(path) -> ExperimentConfig:
    """Load an ExperimentConfig from a key = value file (keys match fields)."""
    return _build_from_kv(ExperimentConfig, parse_key_value_file(path), path)


def read_params(path) -> ModelParams:
    """Load ModelParams from a key = value file (keys match fields)."""
    return _build_from_kv(ModelParams, parse_key_value_file(path), path)
