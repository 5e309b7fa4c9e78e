"""Diffusion solver for the one-electron quasi-reversible reaction.

The model is Fick diffusion of the oxidised species on a semi-infinite
1-D domain, coupled at the electrode to Butler-Volmer kinetics, an ohmic
potential drop, and a constant double-layer capacitance:

    E_eff = E_app - I_tot * R_u
    I_tot = I_f + C_dl * S * dE_eff/dt

Reduction current is reported positive.  Internally everything is
nondimensionalised so that the scan rate, the diffusion coefficient and
the bulk concentration are all unity; the chosen scales are

    potential / (R T / F)
    time      * |v| F / (R T)
    length    / sqrt(D R T / (|v| F))
    current   / (F S c_inf sqrt(D |v| F / (R T)))

Space is discretised on an exponentially expanding grid (interval j has
width h0 * gamma^j), time with fully implicit backward Euler.  At every
step the two surface unknowns (surface concentration and total current)
are solved together by a damped Newton iteration on the total current;
the linear diffusion update is folded in exactly through the affine
response of the surface concentration to the faradaic flux.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .data import CurrentTrace
from .errors import SolverDivergenceError, ValidationError
from .model import FARADAY, GAS_CONSTANT, ExperimentConfig, ModelParams

__all__ = [
    "Scaling",
    "SolverGrid",
    "SolverState",
    "ForwardModel",
    "nondimensionalise",
    "dimensionalise",
    "simulate",
    "simulate_at",
    "refine_and_compare",
    "ConvergenceReport",
]


# --- nondimensionalisation ----------------------------------------------

@dataclass(frozen=True)
class Scaling:
    """Conversion factors between laboratory and dimensionless units.

    Dimensionless value = dimensional value / scale, for each of the
    quantities below; `param_scales` collects the five parameter scales
    in (e0, k0, alpha, cdl, ru) order.
    """

    e_scale: float        # V
    time_scale: float     # s
    length_scale: float   # cm
    rate_scale: float     # cm/s
    current_scale: float  # A
    cdl_scale: float      # F/cm^2
    ru_scale: float       # ohm

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "Scaling":
        v = abs(config.scan_rate_v)
        if v == 0:
            raise ValidationError("cannot nondimensionalise with zero scan rate")
        e_scale = GAS_CONSTANT * config.temperature / FARADAY
        time_scale = e_scale / v
        length_scale = math.sqrt(config.diffusion_d * time_scale)
        rate_scale = config.diffusion_d / length_scale
        current_scale = (
            FARADAY * config.electrode_area_s * config.bulk_conc * rate_scale
        )
        return cls(
            e_scale=e_scale,
            time_scale=time_scale,
            length_scale=length_scale,
            rate_scale=rate_scale,
            current_scale=current_scale,
            cdl_scale=current_scale / (config.electrode_area_s * v),
            ru_scale=e_scale / current_scale,
        )

    @property
    def param_scales(self) -> np.ndarray:
        return np.array(
            [self.e_scale, self.rate_scale, 1.0, self.cdl_scale, self.ru_scale]
        )

    def to_dimensionless(self, params) -> np.ndarray:
        vec = params.as_vector() if isinstance(params, ModelParams) else np.asarray(params, dtype=float)
        return vec / self.param_scales

    def to_dimensional(self, vec, sigma_nd: float | None = None) -> ModelParams:
        vec = np.asarray(vec, dtype=float) * self.param_scales
        sigma = None if sigma_nd is None else sigma_nd * self.current_scale
        return ModelParams.from_vector(vec, sigma=sigma)


def nondimensionalise(params: ModelParams, config: ExperimentConfig):
    """Map physical parameters to the solver's dimensionless units.

    Returns the (e0*, k0*, alpha, cdl*, ru*) vector together with the
    Scaling that defines the time/current/length scales.
    """
    scaling = Scaling.from_config(config)
    return scaling.to_dimensionless(params), scaling


def dimensionalise(vec, config: ExperimentConfig, sigma_nd: float | None = None) -> ModelParams:
    """Inverse of :func:`nondimensionalise`."""
    return Scaling.from_config(config).to_dimensional(vec, sigma_nd=sigma_nd)


# --- spatial grid ---------------------------------------------------------

@dataclass(frozen=True)
class SolverGrid:
    """Exponentially expanding spatial grid plus the output time count.

    ``n_space`` counts grid nodes; interval j (of n_space - 1) has width
    h0 * gamma^j, all in dimensionless length units.
    """

    n_space: int
    gamma: float
    h0: float
    n_time: int
    x_max: float = 0.0

    def __post_init__(self):
        if self.n_space < 4:
            raise ValidationError("n_space must be at least 4")
        if self.gamma < 1.0:
            raise ValidationError("gamma must be >= 1")
        if self.h0 <= 0:
            raise ValidationError("h0 must be positive")
        if self.n_time < 2:
            raise ValidationError("n_time must be at least 2")
        span = float(np.sum(self.intervals()))
        if self.x_max == 0.0:
            object.__setattr__(self, "x_max", span)
        elif abs(self.x_max - span) > 1e-9 * span:
            raise ValidationError("x_max inconsistent with (n_space, gamma, h0)")

    @classmethod
    def for_config(
        cls,
        config: ExperimentConfig,
        n_space: int = 200,
        gamma: float = 1.05,
        n_time: int | None = None,
        boundary_factor: float = 8.0,
    ) -> "SolverGrid":
        """Grid sized so the outer boundary sits ``boundary_factor`` times
        sqrt(total dimensionless time) away from the electrode (must be at
        least 6 to keep it clear of the diffusion layer)."""
        if boundary_factor < 6.0:
            raise ValidationError("boundary_factor must be >= 6")
        scaling = Scaling.from_config(config)
        t_total_nd = config.t_total / scaling.time_scale
        x_max = boundary_factor * math.sqrt(t_total_nd)
        if gamma > 1.0:
            h0 = x_max * (gamma - 1.0) / (gamma ** (n_space - 1) - 1.0)
        else:
            h0 = x_max / (n_space - 1)
        return cls(
            n_space=n_space,
            gamma=gamma,
            h0=h0,
            n_time=config.n_time_points if n_time is None else n_time,
        )

    def intervals(self) -> np.ndarray:
        return self.h0 * self.gamma ** np.arange(self.n_space - 1)

    def nodes(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.intervals())))

    def refined(self) -> "SolverGrid":
        """Grid with every spatial interval and time step halved.

        Keeps x_max exactly and nests the old nodes/times inside the new
        ones, so solutions can be compared without interpolation.
        """
        return SolverGrid(
            n_space=2 * self.n_space - 1,
            gamma=math.sqrt(self.gamma),
            h0=self.h0 / (math.sqrt(self.gamma) + 1.0),
            n_time=2 * self.n_time - 1,
        )


@dataclass(frozen=True)
class SolverState:
    """Solver state after the final time step (dimensionless units)."""

    conc_a: np.ndarray
    i_tot_prev: float
    e_eff_prev: float


# --- jitted core ------------------------------------------------------------

@njit(cache=True, nogil=True, inline="always")
def _exp_clamped(x):
    # exponent clamp keeps extreme candidates finite for the damped Newton
    if x > 500.0:
        x = 500.0
    elif x < -500.0:
        x = -500.0
    return math.exp(x)


@njit(cache=True, nogil=True, inline="always")
def _e_app_nd(t, e_start, vsign, t_rev, de, om):
    if t <= t_rev:
        return e_start + vsign * t + de * math.sin(om * t)
    return e_start - vsign * t + 2.0 * vsign * t_rev + de * math.sin(om * t)


@njit(cache=True, nogil=True)
def _simulate_core(
    t_grid,
    h,
    e_start,
    vsign,
    t_rev,
    de,
    om,
    e0,
    k0,
    alpha,
    cdl,
    ru,
    rtol,
    max_iter,
    track,
):
    """Integrate the coupled system over ``t_grid`` (t_grid[0] == 0).

    Returns (currents at every grid time, failing step index or -1,
    final concentration field, min c, max c, max far-field deviation).
    """
    n = h.size + 1
    conc = np.ones(n)
    currents = np.empty(t_grid.size)

    lo = np.zeros(n)
    di = np.zeros(n)
    up = np.zeros(n)
    piv = np.zeros(n)
    cp = np.zeros(n)
    w = np.zeros(n)
    z = np.zeros(n)
    y = np.zeros(n)

    # one-sided 3-point surface-derivative weights
    h0 = h[0]
    h1 = h[1]
    d0 = -(2.0 * h0 + h1) / (h0 * (h0 + h1))
    d1 = (h0 + h1) / (h0 * h1)
    d2 = -h0 / (h1 * (h0 + h1))

    # t = 0: field at rest; the current solves the algebraic surface
    # balance with the analytic ramp rate (the ohmic feedback on dI/dt is
    # dropped, which is exact whenever R_u = 0).
    rate0 = vsign + de * om
    e_app = e_start
    g = 0.0
    kred = k0 * _exp_clamped(-alpha * (e_app - e0))
    r = g - cdl * rate0 - kred
    converged0 = abs(r) <= 1e-13 * max(1.0, kred)
    it = 0
    while not converged0 and it < max_iter:
        it += 1
        dr = 1.0 - alpha * ru * kred
        if dr == 0.0 or not math.isfinite(dr):
            return currents, 0, conc, 1.0, 1.0, 0.0
        step = r / dr
        lam = 1.0
        accepted = False
        for _ in range(40):
            g_new = g - lam * step
            kred_new = k0 * _exp_clamped(-alpha * (e_app - g_new * ru - e0))
            r_new = g_new - cdl * rate0 - kred_new
            if math.isfinite(r_new) and abs(r_new) <= abs(r):
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            return currents, 0, conc, 1.0, 1.0, 0.0
        done = abs(g_new - g) <= rtol * (1.0 + abs(g_new))
        g = g_new
        kred = kred_new
        r = r_new
        if done or abs(r) <= 1e-13 * max(1.0, abs(g), kred):
            converged0 = True
    if not converged0:
        return currents, 0, conc, 1.0, 1.0, 0.0
    currents[0] = g
    e_eff_prev = e_app - g * ru

    cmin = 1.0
    cmax = 1.0
    far_dev = 0.0
    dt_prev = -1.0
    rhs0_coef = 0.0

    for istep in range(1, t_grid.size):
        t = t_grid[istep]
        dt = t - t_grid[istep - 1]

        if abs(dt - dt_prev) > 1e-12 * dt:
            # rebuild the backward-Euler matrix and its factorisation
            for j in range(1, n - 1):
                hl = h[j - 1]
                hr = h[j]
                aj = 2.0 * dt / (hl * (hl + hr))
                bj = 2.0 * dt / (hr * (hl + hr))
                lo[j] = -aj
                di[j] = 1.0 + aj + bj
                up[j] = -bj
            a1 = -lo[1]
            b1 = -up[1]
            rhs0_coef = d2 / b1
            di[0] = d0 - d2 * a1 / b1
            up[0] = d1 + d2 * di[1] / b1
            lo[n - 1] = 0.0
            di[n - 1] = 1.0
            up[n - 1] = 0.0

            piv[0] = 1.0 / di[0]
            cp[0] = up[0] * piv[0]
            for j in range(1, n):
                m = di[j] - lo[j] * cp[j - 1]
                piv[j] = 1.0 / m
                cp[j] = up[j] * piv[j]

            # response of the field to a unit faradaic flux
            y[0] = 1.0 * piv[0]
            for j in range(1, n):
                y[j] = (0.0 - lo[j] * y[j - 1]) * piv[j]
            w[n - 1] = y[n - 1]
            for j in range(n - 2, -1, -1):
                w[j] = y[j] - cp[j] * w[j + 1]
            dt_prev = dt

        # zero-flux prediction of the new field
        y[0] = (rhs0_coef * conc[1]) * piv[0]
        for j in range(1, n - 1):
            y[j] = (conc[j] - lo[j] * y[j - 1]) * piv[j]
        y[n - 1] = (1.0 - lo[n - 1] * y[n - 2]) * piv[n - 1]
        z[n - 1] = y[n - 1]
        for j in range(n - 2, -1, -1):
            z[j] = y[j] - cp[j] * z[j + 1]
        z0 = z[0]
        w0 = w[0]

        e_app = _e_app_nd(t, e_start, vsign, t_rev, de, om)
        cdl_dt = cdl / dt

        # damped Newton on the total current
        g = currents[istep - 1]
        e_eff = e_app - g * ru
        i_f = g - cdl_dt * (e_eff - e_eff_prev)
        c0 = z0 + w0 * i_f
        eta = e_eff - e0
        kred = k0 * _exp_clamped(-alpha * eta)
        kox = k0 * _exp_clamped((1.0 - alpha) * eta)
        bv = c0 * kred - (1.0 - c0) * kox
        r = i_f - bv

        converged = abs(r) <= 1e-13 * max(1.0, abs(i_f), abs(bv))
        it = 0
        while not converged and it < max_iter:
            it += 1
            dif_dg = 1.0 + cdl_dt * ru
            dc0_dg = w0 * dif_dg
            dbv_dg = (
                dc0_dg * (kred + kox)
                + c0 * alpha * ru * kred
                + (1.0 - c0) * (1.0 - alpha) * ru * kox
            )
            dr = dif_dg - dbv_dg
            if dr == 0.0 or not math.isfinite(dr):
                return currents, istep, conc, cmin, cmax, far_dev
            step = r / dr
            lam = 1.0
            accepted = False
            for _ in range(40):
                g_new = g - lam * step
                e_eff_new = e_app - g_new * ru
                i_f_new = g_new - cdl_dt * (e_eff_new - e_eff_prev)
                c0_new = z0 + w0 * i_f_new
                eta_new = e_eff_new - e0
                kred_new = k0 * _exp_clamped(-alpha * eta_new)
                kox_new = k0 * _exp_clamped((1.0 - alpha) * eta_new)
                bv_new = c0_new * kred_new - (1.0 - c0_new) * kox_new
                r_new = i_f_new - bv_new
                if math.isfinite(r_new) and abs(r_new) <= abs(r):
                    accepted = True
                    break
                lam *= 0.5
            if not accepted:
                return currents, istep, conc, cmin, cmax, far_dev
            done = abs(g_new - g) <= rtol * (1.0 + abs(g_new))
            g = g_new
            e_eff = e_eff_new
            i_f = i_f_new
            c0 = c0_new
            kred = kred_new
            kox = kox_new
            bv = bv_new
            r = r_new
            if done or abs(r) <= 1e-13 * max(1.0, abs(i_f), abs(bv)):
                converged = True
        if not converged:
            return currents, istep, conc, cmin, cmax, far_dev

        for j in range(n):
            conc[j] = z[j] + i_f * w[j]
        currents[istep] = g
        e_eff_prev = e_eff

        if track == 1:
            for j in range(n):
                cj = conc[j]
                if cj < cmin:
                    cmin = cj
                if cj > cmax:
                    cmax = cj
            dev = abs(conc[n - 2] - 1.0)
            if dev > far_dev:
                far_dev = dev

    return currents, -1, conc, cmin, cmax, far_dev


# --- python-facing layer ----------------------------------------------------

def _integration_grid(times_nd: np.ndarray, t_rev_nd: float, t_total_nd: float):
    """Integration time grid: starts at 0, contains every requested output
    time, is padded with warm-up steps before an offset first output, and
    has the sweep-reversal corner inserted so no step straddles it."""
    eps = 1e-12 * t_total_nd
    pieces = [np.zeros(1)]
    if times_nd[0] > 0.0:
        if times_nd.size > 1:
            dt_typ = (times_nd[-1] - times_nd[0]) / (times_nd.size - 1)
        else:
            dt_typ = times_nd[0]
        n_warm = max(1, int(math.ceil(times_nd[0] / dt_typ)))
        pieces.append(np.linspace(0.0, times_nd[0], n_warm + 1)[1:-1])
        pieces.append(times_nd)
    else:
        pieces.append(times_nd[1:])
    t_grid = np.concatenate(pieces)
    pos = np.searchsorted(t_grid, t_rev_nd)
    if pos < t_grid.size and min(
        abs(t_grid[pos] - t_rev_nd), abs(t_grid[max(pos - 1, 0)] - t_rev_nd)
    ) > eps:
        t_grid = np.insert(t_grid, pos, t_rev_nd)
    out_idx = np.searchsorted(t_grid, times_nd)
    return t_grid, out_idx


class ForwardModel:
    """Total current at fixed timestamps, as a function of the parameters.

    Precomputes the scaling, the spatial grid, and the integration time
    grid once, so that repeated evaluations during optimisation/sampling
    only pay for the time stepping itself.  Instances are immutable and
    safe to share between threads.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        times_s,
        grid: SolverGrid | None = None,
        newton_rtol: float = 1e-10,
        newton_max_iter: int = 100,
    ):
        times_s = np.asarray(times_s, dtype=float)
        if times_s.ndim != 1 or times_s.size < 1:
            raise ValidationError("times must be a non-empty 1-D array")
        if np.any(np.diff(times_s) <= 0):
            raise ValidationError("times must be strictly increasing")
        if times_s[0] < 0 or times_s[-1] > config.t_total * (1 + 1e-9):
            raise ValidationError("times outside the [0, 2 t_reverse] cycle")
        self.config = config
        self.scaling = Scaling.from_config(config)
        self.grid = grid if grid is not None else SolverGrid.for_config(
            config, n_time=max(2, times_s.size)
        )
        t_total_nd = config.t_total / self.scaling.time_scale
        if self.grid.x_max < 6.0 * math.sqrt(t_total_nd) * (1 - 1e-12):
            raise ValidationError(
                "grid outer boundary closer than 6 sqrt(T) to the electrode"
            )
        self.times_s = times_s
        self.newton_rtol = float(newton_rtol)
        self.newton_max_iter = int(newton_max_iter)
        self._h = self.grid.intervals()
        times_nd = times_s / self.scaling.time_scale
        self._t_grid, self._out_idx = _integration_grid(
            times_nd, config.t_reverse / self.scaling.time_scale, t_total_nd
        )
        self._wave = (
            config.e_start / self.scaling.e_scale,
            math.copysign(1.0, config.scan_rate_v),
            config.t_reverse / self.scaling.time_scale,
            config.delta_e / self.scaling.e_scale,
            config.omega * self.scaling.time_scale,
        )

    def _run(self, theta_nd, track=False):
        theta_nd = np.asarray(theta_nd, dtype=float)
        out = _simulate_core(
            self._t_grid,
            self._h,
            *self._wave,
            theta_nd[0],
            theta_nd[1],
            theta_nd[2],
            theta_nd[3],
            theta_nd[4],
            self.newton_rtol,
            self.newton_max_iter,
            1 if track else 0,
        )
        currents, fail_step, conc, cmin, cmax, far_dev = out
        if fail_step >= 0:
            raise SolverDivergenceError(int(fail_step))
        return currents, conc, cmin, cmax, far_dev

    def currents_nd(self, theta_nd) -> np.ndarray:
        """Dimensionless I_tot at the requested times for a dimensionless
        (e0, k0, alpha, cdl, ru) parameter vector."""
        currents, _, _, _, _ = self._run(theta_nd)
        return currents[self._out_idx]

    def currents(self, params: ModelParams) -> np.ndarray:
        """I_tot in amperes at the requested times."""
        theta_nd = self.scaling.to_dimensionless(params)
        return self.currents_nd(theta_nd) * self.scaling.current_scale

    def run_detailed(self, params: ModelParams):
        """Currents plus the final solver state and field diagnostics."""
        theta_nd = self.scaling.to_dimensionless(params)
        currents, conc, cmin, cmax, far_dev = self._run(theta_nd, track=True)
        state = SolverState(
            conc_a=conc,
            i_tot_prev=float(currents[-1]),
            e_eff_prev=float(
                _e_app_nd(self._t_grid[-1], *self._wave)
                - currents[-1] * theta_nd[4]
            ),
        )
        diagnostics = {
            "conc_min": float(cmin),
            "conc_max": float(cmax),
            "far_field_deviation": float(far_dev),
        }
        return currents[self._out_idx] * self.scaling.current_scale, state, diagnostics


def _uniform_times(config: ExperimentConfig, n_time: int) -> np.ndarray:
    return np.linspace(0.0, config.t_total, n_time)


def simulate(
    params: ModelParams,
    config: ExperimentConfig,
    grid: SolverGrid | None = None,
    newton_rtol: float = 1e-10,
    newton_max_iter: int = 100,
) -> CurrentTrace:
    """Simulate the full forward-and-back cycle.

    Returns the total current in amperes at ``grid.n_time`` uniformly
    spaced times on [0, 2 t_reverse].  Deterministic: identical inputs
    give bit-identical traces.
    """
    grid = grid if grid is not None else SolverGrid.for_config(config)
    model = ForwardModel(
        config,
        _uniform_times(config, grid.n_time),
        grid=grid,
        newton_rtol=newton_rtol,
        newton_max_iter=newton_max_iter,
    )
    return CurrentTrace(times=model.times_s, currents=model.currents(params))


def simulate_at(
    params: ModelParams,
    config: ExperimentConfig,
    times_s,
    grid: SolverGrid | None = None,
    **kwargs,
) -> np.ndarray:
    """Total current in amperes at arbitrary (increasing) timestamps."""
    return ForwardModel(config, times_s, grid=grid, **kwargs).currents(params)


@dataclass(frozen=True)
class ConvergenceReport:
    """Self-convergence of the trace under one grid refinement."""

    grid: SolverGrid
    refined_grid: SolverGrid
    max_abs_difference: float
    peak_current: float
    relative_difference: float


def refine_and_compare(
    params: ModelParams,
    config: ExperimentConfig,
    grid: SolverGrid | None = None,
) -> ConvergenceReport:
    """Run the simulation at the given and at a doubled resolution and
    report the maximum current difference relative to the peak current."""
    grid = grid if grid is not None else SolverGrid.for_config(config)
    fine = grid.refined()
    coarse_trace = simulate(params, config, grid=grid)
    fine_trace = simulate(params, config, grid=fine)
    diff = np.max(np.abs(coarse_trace.currents - fine_trace.currents[::2]))
    peak = float(np.max(np.abs(fine_trace.currents)))
    rel = diff / peak if peak > 0 else diff
    return ConvergenceReport(
        grid=grid,
        refined_grid=fine,
        max_abs_difference=float(diff),
        peak_current=peak,
        relative_difference=float(rel),
    )
