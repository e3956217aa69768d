"""Noise schedules, timestep selection, and step coefficients."""

import math

import numpy as np
import pytest

from edict.schedule import (
    NoiseSchedule,
    StepCoeffs,
    build_schedule,
    coeffs_from_alpha,
    forward_noise,
    select_timesteps,
)
from edict.tensor_io import SeededRng, Tensor

# Cumulative products recomputed independently with 60-digit Decimal
# arithmetic over the same beta grids, then rounded to float64.
DEC_SCALED_LINEAR = {
    1: 0.99915,
    500: 0.2776696504564678,
    1000: 0.004660098513077239,
}
DEC_LINEAR = {1: 0.9999, 1000: 4.035829765375685e-05}


class TestBuildSchedule:
    def test_scaled_linear_against_high_precision_product(self):
        sch = build_schedule("scaled_linear", t_train=1000, steps=50)
        for t, want in DEC_SCALED_LINEAR.items():
            assert sch.alpha(t) == pytest.approx(want, rel=1e-13)

    def test_linear_against_high_precision_product(self):
        sch = build_schedule("linear", t_train=1000, steps=50)
        for t, want in DEC_LINEAR.items():
            assert sch.alpha(t) == pytest.approx(want, rel=1e-13)

    def test_cosine_matches_closed_form(self):
        sch = build_schedule("cosine", t_train=1000, steps=50)
        s = 0.008
        f = lambda t: math.cos((t / 1000 + s) / (1 + s) * math.pi / 2) ** 2
        for t in (1, 250, 500, 999):
            assert sch.alpha(t) == pytest.approx(f(t) / f(0), rel=1e-12)

    def test_alpha_bar_invariants(self):
        for kind in ("scaled_linear", "linear", "cosine"):
            sch = build_schedule(kind, t_train=1000, steps=50)
            ab = sch.alpha_bar
            assert ab[0] == 1.0
            assert np.all(ab > 0.0) and np.all(ab <= 1.0)
            assert np.all(np.diff(ab) <= 0.0)

    def test_zero_beta_schedule_is_all_ones(self):
        # Degenerate no-noise table: every step must be an exact identity.
        sch = build_schedule("linear", t_train=100, steps=10,
                             beta_start=0.0, beta_end=0.0)
        assert np.all(sch.alpha_bar == 1.0)
        c = sch.coeffs(100, 50)
        assert (c.a, c.b) == (1.0, 0.0)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            build_schedule("quadratic")
        with pytest.raises(ValueError):
            build_schedule("linear", t_train=0)
        with pytest.raises(ValueError):
            build_schedule("linear", beta_start=0.5, beta_end=0.1)
        with pytest.raises(ValueError):
            build_schedule("linear", beta_start=-0.1)


class TestSelectTimesteps:
    def test_trailing_includes_t_train(self):
        ts = select_timesteps(1000, 50, "trailing")
        assert len(ts) == 50
        assert ts[-1] == 1000
        assert ts == tuple(range(20, 1001, 20))

    def test_leading_includes_one(self):
        ts = select_timesteps(1000, 50, "leading")
        assert ts[0] == 1
        assert ts == tuple(range(1, 1000, 20))

    def test_full_grid(self):
        assert select_timesteps(10, 10) == tuple(range(1, 11))

    @pytest.mark.parametrize("steps", [0, 1001])
    def test_step_count_bounds(self, steps):
        with pytest.raises(ValueError):
            select_timesteps(1000, steps)

    def test_unknown_spacing(self):
        with pytest.raises(ValueError):
            select_timesteps(1000, 50, "centered")


class TestCoeffs:
    def test_worked_example(self):
        # abar 0.45 -> 0.5: a = sqrt(0.5/0.45).
        c = coeffs_from_alpha(0.45, 0.5)
        assert c.a == pytest.approx(1.0540925533894598, rel=1e-15)
        assert c.b == pytest.approx(
            math.sqrt(0.5) - c.a * math.sqrt(0.55), rel=1e-15
        )

    def test_noise_free_target(self):
        # abar 0.25 -> 1.0: a doubles the signal, b strips sqrt(3)/2 of
        # noise scaled by a.
        c = coeffs_from_alpha(0.25, 1.0)
        assert c.a == pytest.approx(2.0, rel=1e-12)
        assert c.b == pytest.approx(-math.sqrt(3.0), rel=1e-12)

    def test_equal_levels_give_exact_identity(self):
        for abar in (1.0, 0.7, 0.25, 1e-6):
            c = coeffs_from_alpha(abar, abar)
            assert (c.a, c.b) == (1.0, 0.0)

    def test_signal_identity_property(self):
        # a * sqrt(abar_hi) == sqrt(abar_lo), 1000+ randomized pairs.
        rng = SeededRng(2002)
        checked = 0
        while checked < 1000:
            u = rng.uniforms(2)
            lo, hi = max(u[0], u[1]), min(u[0], u[1])
            if hi <= 0.0:
                continue
            c = coeffs_from_alpha(hi, lo)
            assert c.a * math.sqrt(hi) == pytest.approx(math.sqrt(lo), rel=1e-12)
            checked += 1

    def test_rejects_increasing_noise(self):
        with pytest.raises(ValueError):
            coeffs_from_alpha(0.5, 0.4)
        with pytest.raises(ValueError):
            coeffs_from_alpha(0.0, 0.5)
        with pytest.raises(ValueError):
            coeffs_from_alpha(0.5, 1.5)


class TestNoiseSchedule:
    def test_pairs_and_bounds(self):
        sch = build_schedule("scaled_linear", t_train=100, steps=5)
        assert sch.bounds() == (0, 20, 40, 60, 80, 100)
        assert sch.pairs() == [(0, 20), (20, 40), (40, 60), (60, 80), (80, 100)]

    def test_coeffs_indexed_by_training_timesteps(self):
        sch = build_schedule("scaled_linear", t_train=1000, steps=50)
        c = sch.coeffs(40, 20)
        assert (c.t_hi, c.t_lo) == (40, 20)
        assert c.a == pytest.approx(
            math.sqrt(sch.alpha(20) / sch.alpha(40)), rel=1e-15
        )
        with pytest.raises(ValueError):
            sch.coeffs(20, 40)
        with pytest.raises(ValueError):
            sch.coeffs(1001, 0)

    def test_with_steps_shares_table(self):
        sch = build_schedule("scaled_linear", t_train=1000, steps=50)
        resampled = sch.with_steps(200)
        assert resampled.steps == 200
        assert resampled.timesteps[-1] == 1000
        assert np.array_equal(resampled.alpha_bar, sch.alpha_bar)
        # alpha at shared timesteps must be bitwise identical
        for t in set(sch.timesteps) & set(resampled.timesteps):
            assert sch.alpha(t) == resampled.alpha(t)

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseSchedule([0.9, 0.5], (1,))  # alpha_bar[0] != 1
        with pytest.raises(ValueError):
            NoiseSchedule([1.0, 0.5, 0.7], (1, 2))  # increasing
        with pytest.raises(ValueError):
            NoiseSchedule([1.0, 0.5], ())  # empty selection
        with pytest.raises(ValueError):
            NoiseSchedule([1.0, 0.5], (2,))  # out of range
        with pytest.raises(ValueError):
            NoiseSchedule([1.0, 0.9, 0.5], (2, 1))  # not increasing

    def test_csv_round_trips_through_repr(self, tmp_path):
        sch = build_schedule("scaled_linear", t_train=20, steps=4)
        path = tmp_path / "sch.csv"
        sch.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# schema: schedule_v1"
        assert lines[1] == "t,alpha_bar"
        assert len(lines) == 2 + 21
        t, val = lines[5].split(",")
        assert float(val) == sch.alpha(int(t))


class TestForwardNoise:
    def test_worked_example(self):
        out = forward_noise(Tensor((1,), [2.0]), Tensor((1,), [1.0]), 0.75)
        assert out.data[0] == pytest.approx(2.2320508075688772, rel=1e-15)

    def test_abar_one_is_identity(self):
        x = Tensor((3,), [1.0, -2.0, 0.5])
        out = forward_noise(x, Tensor((3,), [9.0, 9.0, 9.0]), 1.0)
        assert out.values_equal(x)

    def test_shape_and_range_checks(self):
        x = Tensor((2,), [0.0, 0.0])
        with pytest.raises(ValueError):
            forward_noise(x, Tensor((3,), [0.0] * 3), 0.5)
        with pytest.raises(ValueError):
            forward_noise(x, x, 0.0)
        with pytest.raises(ValueError):
            forward_noise(x, x, 1.5)
