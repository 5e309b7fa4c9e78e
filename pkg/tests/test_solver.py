import numpy as np
import pytest

from acvbayes import (
    FARADAY,
    GAS_CONSTANT,
    CurrentTrace,
    ModelParams,
    SolverDivergenceError,
    SolverGrid,
    ValidationError,
    applied_potential_rate,
    dimensionalise,
    nondimensionalise,
    refine_and_compare,
    simulate,
    simulate_at,
)
from acvbayes.data import decimate_moving_average
from acvbayes.solver import ForwardModel, Scaling

from util import fig_params, make_config


class TestNondimensionalisation:
    def test_alpha_passes_through(self):
        vec, _ = nondimensionalise(fig_params(alpha=0.47), make_config())
        assert vec[2] == 0.47

    def test_potential_scale(self):
        # independent evaluation of F/(R T) at 298.15 K
        f_over_rt = FARADAY / (GAS_CONSTANT * 298.15)
        assert f_over_rt == pytest.approx(38.9217, abs=5e-4)
        vec, _ = nondimensionalise(fig_params(e0=0.214), make_config())
        assert vec[0] == pytest.approx(0.214 * f_over_rt, rel=1e-12)
        assert vec[0] == pytest.approx(8.330, abs=1e-3)

    def test_round_trip(self):
        p = fig_params(ru=12.5, sigma=2e-7)
        cfg = make_config()
        vec, scaling = nondimensionalise(p, cfg)
        q = dimensionalise(vec, cfg, sigma_nd=p.sigma / scaling.current_scale)
        for name in ("e0", "k0", "alpha", "cdl", "ru", "sigma"):
            assert getattr(q, name) == pytest.approx(getattr(p, name), rel=1e-12)

    def test_dimensionless_scan_rate_is_unity(self):
        cfg = make_config()
        s = Scaling.from_config(cfg)
        assert abs(cfg.scan_rate_v) * s.time_scale / s.e_scale == pytest.approx(1.0)


class TestSimulateTrivialCases:
    def test_no_pathways_no_current(self):
        trace = simulate(fig_params(k0=0.0, cdl=0.0), make_config(n_time_points=400))
        assert np.all(trace.currents == 0.0)

    def test_pure_capacitance_tracks_ramp_rate(self):
        cfg = make_config(n_time_points=2000)
        p = fig_params(k0=0.0, cdl=16.9e-6)
        trace = simulate(p, cfg)
        expected = p.cdl * cfg.electrode_area_s * applied_potential_rate(
            trace.times, cfg
        )
        err = np.max(np.abs(trace.currents - expected))
        assert err < 0.02 * np.max(np.abs(expected))

    def test_deterministic_bit_identical(self):
        cfg = make_config(n_time_points=500)
        a = simulate(fig_params(), cfg)
        b = simulate(fig_params(), cfg)
        assert np.array_equal(a.currents, b.currents)


class TestCottrell:
    def test_diffusion_limited_step(self):
        # large constant overpotential, fast kinetics, no background paths
        cfg = make_config(
            e_start=-0.35,
            e_reverse=-0.36,
            scan_rate_v=-0.01,
            delta_e=0.0,
            n_time_points=5000,
        )
        p = ModelParams(e0=0.0, k0=1.0, alpha=0.5, cdl=0.0, ru=0.0)
        trace = simulate(p, cfg)
        t = trace.times[1:]
        analytic = (
            FARADAY
            * cfg.electrode_area_s
            * cfg.bulk_conc
            * np.sqrt(cfg.diffusion_d / (np.pi * t))
        )
        rel = np.abs(trace.currents[1:] - analytic) / analytic
        cut = int(0.05 * len(trace))
        assert np.max(rel[cut:]) < 0.02


class TestFieldInvariants:
    def test_no_reaction_leaves_field_at_bulk(self):
        cfg = make_config(n_time_points=300)
        model = ForwardModel(cfg, np.linspace(0, cfg.t_total, 300))
        _, state, diag = model.run_detailed(fig_params(k0=0.0, cdl=5e-6))
        assert diag["conc_min"] == 1.0 and diag["conc_max"] == 1.0
        np.testing.assert_array_equal(state.conc_a, np.ones_like(state.conc_a))

    def test_concentration_bounds_and_far_field(self):
        cfg = make_config(n_time_points=2000)
        model = ForwardModel(cfg, np.linspace(0, cfg.t_total, 2000))
        _, state, diag = model.run_detailed(fig_params(ru=10.0, k0=0.02))
        assert diag["conc_min"] >= -1e-9
        assert diag["conc_max"] <= 1.0 + 1e-9
        assert diag["far_field_deviation"] < 1e-6
        assert np.all(state.conc_a >= -1e-9) and np.all(state.conc_a <= 1 + 1e-9)


class TestScalingSelfConsistency:
    def test_equivalent_description_gives_scaled_currents(self):
        # the same dimensionless problem expressed at twice the sweep rate
        # and frequency must reproduce the trace under the scale maps
        cfg_a = make_config(n_time_points=800)
        cfg_b = make_config(
            n_time_points=800, scan_rate_v=-1.788, frequency=18.04
        )
        s_a = Scaling.from_config(cfg_a)
        s_b = Scaling.from_config(cfg_b)
        p_a = fig_params(ru=5.0)
        p_b = s_b.to_dimensional(s_a.to_dimensionless(p_a))
        tr_a = simulate(p_a, cfg_a)
        tr_b = simulate(p_b, cfg_b)
        ratio = s_b.current_scale / s_a.current_scale
        np.testing.assert_allclose(
            tr_b.currents, tr_a.currents * ratio, rtol=1e-9, atol=1e-20
        )


class TestRefineAndCompare:
    def test_zero_case_difference_is_zero(self):
        report = refine_and_compare(
            fig_params(k0=0.0, cdl=0.0), make_config(n_time_points=300)
        )
        assert report.max_abs_difference == 0.0
        assert report.relative_difference == 0.0

    def test_first_order_shrinkage(self):
        cfg = make_config(n_time_points=1500)
        first = refine_and_compare(fig_params(), cfg)
        second = refine_and_compare(fig_params(), cfg, grid=first.refined_grid)
        assert first.relative_difference / second.relative_difference >= 1.8

    def test_default_resolution_is_converged(self):
        report = refine_and_compare(fig_params(), make_config(n_time_points=25_000))
        assert report.relative_difference < 0.005


class TestGridAndErrors:
    def test_grid_validation(self):
        with pytest.raises(ValidationError):
            SolverGrid(n_space=3, gamma=1.05, h0=1e-4, n_time=100)
        with pytest.raises(ValidationError):
            SolverGrid(n_space=50, gamma=0.9, h0=1e-4, n_time=100)
        with pytest.raises(ValidationError):
            SolverGrid(n_space=50, gamma=1.05, h0=-1e-4, n_time=100)

    def test_refined_preserves_outer_boundary(self):
        grid = SolverGrid.for_config(make_config())
        fine = grid.refined()
        assert fine.x_max == pytest.approx(grid.x_max, rel=1e-12)
        assert fine.n_space == 2 * grid.n_space - 1

    def test_outer_boundary_floor_enforced(self):
        cfg = make_config(n_time_points=200)
        small = SolverGrid(n_space=50, gamma=1.05, h0=1e-5, n_time=200)
        with pytest.raises(ValidationError, match="outer boundary"):
            ForwardModel(cfg, np.linspace(0, cfg.t_total, 200), grid=small)

    def test_boundary_factor_floor(self):
        with pytest.raises(ValidationError):
            SolverGrid.for_config(make_config(), boundary_factor=5.0)

    def test_divergence_carries_step_index(self):
        cfg = make_config(n_time_points=200)
        with pytest.raises(SolverDivergenceError) as err:
            simulate(fig_params(k0=0.5), cfg, newton_max_iter=0)
        assert err.value.step_index == 0

    def test_times_outside_cycle_rejected(self):
        cfg = make_config(n_time_points=100)
        with pytest.raises(ValidationError):
            simulate_at(fig_params(), cfg, np.array([0.0, cfg.t_total * 1.01]))


class TestOffsetTimestamps:
    def test_matches_dense_solution_at_block_mean_times(self):
        # decimated experimental records start after t = 0; the solver's
        # warm-up path must land on the dense solution
        cfg = make_config(n_time_points=10_500)
        p = fig_params()
        dense = simulate(p, cfg)
        target_times = decimate_moving_average(dense, window=21).times
        assert target_times[0] > 0
        coarse = simulate_at(p, cfg, target_times)
        interp = np.interp(target_times, dense.times, dense.currents)
        peak = np.max(np.abs(dense.currents))
        assert np.max(np.abs(coarse - interp)) < 0.01 * peak


def test_simulate_rejects_sigma_free_requirements():
    # simulate itself never needs sigma; a sigma-free params object works
    trace = simulate(fig_params(), make_config(n_time_points=300))
    assert isinstance(trace, CurrentTrace)
    assert len(trace) == 300
