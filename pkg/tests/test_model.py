import numpy as np
import pytest

from acvbayes import (
    FARADAY,
    GAS_CONSTANT,
    ExperimentConfig,
    ModelParams,
    PriorHypercube,
    ValidationError,
    applied_potential,
    applied_potential_rate,
    read_config,
    read_params,
)

from util import make_config


class TestAppliedPotential:
    def test_starts_at_e_start(self):
        cfg = make_config()
        assert applied_potential(0.0, cfg) == pytest.approx(0.5, abs=1e-15)

    def test_continuous_at_reversal(self):
        cfg = make_config()
        t_rev = cfg.t_reverse
        before = applied_potential(t_rev * (1 - 1e-12), cfg)
        at = applied_potential(t_rev, cfg)
        after = applied_potential(t_rev * (1 + 1e-12), cfg)
        assert abs(before - at) < 1e-10
        assert abs(after - at) < 1e-10
        # both branch formulas agree exactly at the corner
        manual = cfg.e_start + cfg.scan_rate_v * t_rev + cfg.delta_e * np.sin(
            cfg.omega * t_rev
        )
        assert at == pytest.approx(manual, rel=1e-14)

    def test_returns_to_start_after_full_cycle(self):
        cfg = make_config()
        t_end = 2 * cfg.t_reverse
        expected = cfg.e_start + cfg.delta_e * np.sin(cfg.omega * t_end)
        assert applied_potential(t_end, cfg) == pytest.approx(expected, rel=1e-12)

    def test_bounded_by_window_plus_amplitude(self):
        cfg = make_config()
        t = np.linspace(0, 2 * cfg.t_reverse, 20_001)
        e = applied_potential(t, cfg)
        bound = max(abs(cfg.e_start), abs(cfg.e_reverse)) + cfg.delta_e
        assert np.max(np.abs(e)) <= bound + 1e-12

    def test_domain_errors(self):
        cfg = make_config()
        with pytest.raises(ValidationError):
            applied_potential(-1e-6, cfg)
        with pytest.raises(ValidationError):
            applied_potential(2 * cfg.t_reverse + 1e-6, cfg)


class TestAppliedPotentialRate:
    def test_at_zero(self):
        cfg = make_config()
        expected = cfg.scan_rate_v + cfg.delta_e * cfg.omega
        assert applied_potential_rate(0.0, cfg) == pytest.approx(expected)

    def test_dc_ramp(self):
        cfg = make_config(delta_e=0.0)
        t = 0.25 * cfg.t_reverse
        assert applied_potential_rate(t, cfg) == pytest.approx(cfg.scan_rate_v)

    def test_one_sided_at_corner(self):
        cfg = make_config()
        t_rev = cfg.t_reverse
        expected = -cfg.scan_rate_v + cfg.delta_e * cfg.omega * np.cos(
            cfg.omega * t_rev
        )
        assert applied_potential_rate(t_rev, cfg) == pytest.approx(expected)

    def test_matches_central_differences(self):
        cfg = make_config()
        rng = np.random.default_rng(4)
        t_rev = cfg.t_reverse
        dt = 1e-6
        for t in rng.uniform(0.05 * t_rev, 0.95 * t_rev, size=30):
            fd = (applied_potential(t + dt, cfg) - applied_potential(t - dt, cfg)) / (
                2 * dt
            )
            assert applied_potential_rate(t, cfg) == pytest.approx(fd, abs=5e-9)


class TestConfigValidation:
    def test_sign_mismatch(self):
        with pytest.raises(ValidationError):
            make_config(scan_rate_v=0.894)  # downward sweep needs negative rate

    def test_zero_scan_rate(self):
        with pytest.raises(ValidationError):
            make_config(scan_rate_v=0.0)

    @pytest.mark.parametrize(
        "field", ["electrode_area_s", "diffusion_d", "bulk_conc", "temperature", "frequency"]
    )
    def test_positive_fields(self, field):
        with pytest.raises(ValidationError):
            make_config(**{field: 0.0})

    def test_too_few_time_points(self):
        with pytest.raises(ValidationError):
            make_config(n_time_points=1)

    def test_t_reverse_positive(self):
        cfg = make_config()
        assert cfg.t_reverse == pytest.approx(0.6 / 0.894)


class TestModelParams:
    def test_alpha_bounds(self):
        with pytest.raises(ValidationError):
            ModelParams(e0=0.2, k0=0.01, alpha=1.0, cdl=0.0, ru=0.0)
        with pytest.raises(ValidationError):
            ModelParams(e0=0.2, k0=0.01, alpha=0.0, cdl=0.0, ru=0.0)

    @pytest.mark.parametrize("field", ["k0", "cdl", "ru"])
    def test_non_negative(self, field):
        kwargs = dict(e0=0.2, k0=0.01, alpha=0.5, cdl=1e-5, ru=1.0)
        kwargs[field] = -1e-9
        with pytest.raises(ValidationError):
            ModelParams(**kwargs)

    def test_sigma_positive_when_given(self):
        with pytest.raises(ValidationError):
            ModelParams(e0=0.2, k0=0.01, alpha=0.5, cdl=0.0, ru=0.0, sigma=0.0)

    def test_vector_round_trip(self):
        p = ModelParams(e0=0.2, k0=0.01, alpha=0.5, cdl=1e-5, ru=3.0, sigma=1e-7)
        q = ModelParams.from_vector(p.as_vector(), sigma=p.sigma)
        assert q == p


class TestPriorHypercube:
    def test_default_bounds(self):
        cube = PriorHypercube.default(make_config())
        # e0 window inset by 10% of the 0.6 V range from both ends
        assert cube.lower[0] == pytest.approx(-0.04)
        assert cube.upper[0] == pytest.approx(0.44)
        np.testing.assert_allclose(cube.lower[1:], [0.0, 0.4, 0.0, 0.0])
        np.testing.assert_allclose(cube.upper[1:], [1.0, 0.6, 200e-6, 80.0])

    def test_contains(self):
        cube = PriorHypercube.default(make_config())
        assert cube.contains([0.2, 0.5, 0.5, 1e-4, 40.0])
        assert not cube.contains([0.2, 0.5, 0.61, 1e-4, 40.0])
        # closed bounds: k0 exactly 0 is inside
        assert cube.contains([0.2, 0.0, 0.4, 0.0, 0.0])

    def test_requires_lower_below_upper(self):
        with pytest.raises(ValidationError):
            PriorHypercube(lower=np.ones(5), upper=np.zeros(5))

    def test_upward_sweep_keeps_bounds_ordered(self):
        cfg = make_config(e_start=-0.1, e_reverse=0.5, scan_rate_v=0.894)
        cube = PriorHypercube.default(cfg)
        assert cube.lower[0] == pytest.approx(-0.04)
        assert cube.upper[0] == pytest.approx(0.44)


class TestConfigFiles:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "exp.cfg"
        cfg = make_config()
        lines = [f"{k} = {v}" for k, v in cfg.as_dict().items()]
        path.write_text("\n".join(lines) + "\n")
        assert read_config(path) == cfg

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("e_start = 0.5\nbogus = 1\n")
        with pytest.raises(ValidationError, match="unknown"):
            read_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            read_config(tmp_path / "nope.cfg")

    def test_params_file(self, tmp_path):
        path = tmp_path / "params.cfg"
        path.write_text(
            "e0 = 0.214\nk0 = 0.010\nalpha = 0.528\ncdl = 16.9e-6\nru = 0\n"
        )
        p = read_params(path)
        assert p.e0 == 0.214 and p.cdl == pytest.approx(16.9e-6)

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "params.cfg"
        path.write_text(
            "# a comment\n\ne0 = 0.2  # inline\nk0 = 0.01\nalpha = 0.5\ncdl = 0\nru = 0\n"
        )
        assert read_params(path).e0 == 0.2


def test_constants_fixed_values():
    assert FARADAY == 96485.332
    assert GAS_CONSTANT == 8.314462
