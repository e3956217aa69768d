"""Tests for the coupled sampler: mixing algebra, exact inversion, traces."""

import math

import numpy as np
import pytest

from edict.coupled import (
    CoupledState,
    CoupledTrace,
    TraceRow,
    cosine_similarity,
    edict_denoise,
    edict_denoise_step,
    edict_invert,
    edict_noise_step,
    mix,
    scale_p,
    unmix,
)
from edict.eps_models import Condition, GuidanceConfig
from edict.fixtures import (
    FIXTURE_SHAPE,
    constant_model,
    fixture_schedule,
    linear_model,
    mixture_model,
)
from edict.tensor_io import SeededRng, Tensor, gaussian_draw

NULL = Condition.NULL
NO_GUIDE = GuidanceConfig()


@pytest.fixture(scope="module")
def schedule():
    return fixture_schedule()


@pytest.fixture(scope="module")
def models(schedule):
    return {
        "constant": constant_model(),
        "linear": linear_model(),
        "mixture": mixture_model(schedule),
    }


def _draw(seed, shape=FIXTURE_SHAPE):
    return gaussian_draw(SeededRng(seed), shape)


def _max_abs_err(state, target):
    ex = float(np.max(np.abs(state.x.data - target.data)))
    ey = float(np.max(np.abs(state.y.data - target.data)))
    return max(ex, ey)


class TestMixUnmix:
    def test_mix_weighted_average(self):
        # 0.25*2 + 0.75*6 = 5, exact in binary floating point
        x = Tensor((2,), [2.0, 2.0])
        y = Tensor((2,), [6.0, 6.0])
        out = mix(x, y, 0.25)
        assert out.data.tolist() == [5.0, 5.0]

    def test_unmix_worked_example(self):
        mixed = Tensor((1,), [5.0])
        y = Tensor((1,), [6.0])
        assert unmix(mixed, y, 0.25).data.tolist() == [2.0]

    def test_mix_equal_inputs_returns_input_bitwise(self):
        x = _draw(7, (3, 4))
        out = mix(x, Tensor(x.shape, x.data), 0.93)
        assert np.array_equal(out.data, x.data)

    def test_mix_full_weight_passes_first_argument_through(self):
        x = _draw(7, (3, 4))
        y = _draw(8, (3, 4))
        assert np.array_equal(mix(x, y, 1.0).data, x.data)
        assert np.array_equal(unmix(x, y, 1.0).data, x.data)

    def test_unmix_inverts_mix_many_cases(self):
        rng = SeededRng(99)
        worst = 0.0
        for _ in range(1000):
            a = gaussian_draw(rng, (6,))
            b = gaussian_draw(rng, (6,))
            p = 0.5 + 0.5 * rng.uniforms(1)[0]
            back = unmix(mix(a, b, p), b, p)
            worst = max(worst, float(np.max(np.abs(back.data - a.data))))
        assert worst < 1e-12

    @pytest.mark.parametrize("p", [0.0, -0.25, 1.0000001, float("nan")])
    def test_rejects_bad_weight(self, p):
        x = Tensor((1,), [1.0])
        with pytest.raises(ValueError):
            mix(x, x, p)
        with pytest.raises(ValueError):
            unmix(x, x, p)

    def test_rejects_shape_mismatch(self):
        x = Tensor((2,), [1.0, 2.0])
        y = Tensor((3,), [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            mix(x, y, 0.5)
        with pytest.raises(ValueError):
            unmix(x, y, 0.5)


class TestScaleP:
    def test_doubling_steps_takes_square_root(self):
        assert scale_p(0.93, 50, 100) == 0.93**0.5

    def test_same_step_count_is_identity(self):
        assert scale_p(0.93, 50, 50) == 0.93

    def test_halving_steps_squares(self):
        assert scale_p(0.93, 50, 25) == 0.93**2

    def test_total_mixing_attenuation_is_preserved(self):
        # p**steps is the quantity held fixed across step counts
        for steps in (10, 80, 500):
            p = scale_p(0.93, 50, steps)
            assert math.isclose(p**steps, 0.93**50, rel_tol=1e-9)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            scale_p(0.0, 50, 100)
        with pytest.raises(ValueError):
            scale_p(0.93, 0, 100)
        with pytest.raises(ValueError):
            scale_p(0.93, 50, 0)


class TestCosineSimilarity:
    def test_worked_example(self):
        u = Tensor((2,), [1.0, 0.0])
        v = Tensor((2,), [1.0, 1.0])
        assert cosine_similarity(u, v) == 1.0 / math.sqrt(2.0)

    def test_identical_exact_vectors(self):
        u = Tensor((2,), [2.0, 0.0])
        assert cosine_similarity(u, u) == 1.0

    def test_opposite_vectors(self):
        u = Tensor((2,), [1.0, 0.0])
        v = Tensor((2,), [-1.0, 0.0])
        assert cosine_similarity(u, v) == -1.0

    def test_zero_vector_reports_zero(self):
        z = Tensor((2,), [0.0, 0.0])
        u = Tensor((2,), [1.0, 2.0])
        assert cosine_similarity(z, u) == 0.0
        assert cosine_similarity(u, z) == 0.0
        assert cosine_similarity(z, z) == 0.0

    def test_non_finite_reports_zero(self):
        u = Tensor((2,), [float("inf"), 1.0])
        v = Tensor((2,), [1.0, 2.0])
        assert cosine_similarity(u, v) == 0.0
        w = Tensor((2,), [float("nan"), 1.0])
        assert cosine_similarity(w, v) == 0.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            cosine_similarity(Tensor((1,), [1.0]), Tensor((2,), [1.0, 2.0]))


class TestCoupledState:
    def test_paired_copies_are_bitwise_equal(self):
        x = _draw(1)
        st = CoupledState.paired(x, t=1000)
        assert np.array_equal(st.x.data, st.y.data)
        assert st.t == 1000
        assert st.flip is False
        assert st.gap_norm() == 0.0
        assert st.all_finite()

    def test_gap_norm_worked_example(self):
        st = CoupledState(
            x=Tensor((2,), [1.0, 0.0]), y=Tensor((2,), [0.0, 0.0]), t=0
        )
        assert st.gap_norm() == 1.0

    def test_all_finite_detects_nan(self):
        bad = Tensor((2,), [float("nan"), 0.0])
        st = CoupledState(x=bad, y=Tensor((2,), [0.0, 0.0]), t=0)
        assert not st.all_finite()

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            CoupledState(
                x=Tensor((2,), [0.0, 0.0]), y=Tensor((3,), [0.0, 0.0, 0.0]), t=0
            )


class TestExactInversion:
    """The coupled update is algebraically invertible step by step."""

    @pytest.mark.parametrize("name", ["constant", "linear", "mixture"])
    @pytest.mark.parametrize("p", [0.5, 0.7, 0.93, 1.0])
    def test_single_step_roundtrip(self, schedule, models, name, p):
        x0 = _draw(778)
        st = CoupledState.paired(x0, t=0)
        up, _ = edict_invert(st, schedule, models[name], p=p, num_steps=1)
        back, _ = edict_denoise(up, schedule, models[name], p=p, num_steps=1)
        assert back.t == 0
        assert _max_abs_err(back, x0) < 1e-12

    @pytest.mark.parametrize(
        "name,p",
        [
            ("constant", 0.5),
            ("constant", 0.7),
            ("constant", 0.93),
            ("constant", 1.0),
            ("linear", 0.93),
            ("linear", 1.0),
            ("mixture", 0.93),
            ("mixture", 1.0),
        ],
    )
    def test_full_invert_then_denoise(self, schedule, models, name, p):
        x0 = _draw(778)
        up, _ = edict_invert(CoupledState.paired(x0, t=0), schedule, models[name], p=p)
        assert up.t == schedule.bounds()[-1]
        back, _ = edict_denoise(up, schedule, models[name], p=p)
        assert _max_abs_err(back, x0) < 1e-10

    @pytest.mark.parametrize(
        "name,p", [("constant", 0.5), ("constant", 1.0), ("mixture", 0.93)]
    )
    def test_full_denoise_then_invert(self, schedule, models, name, p):
        xT = _draw(777)
        top = schedule.bounds()[-1]
        dn, _ = edict_denoise(CoupledState.paired(xT, t=top), schedule, models[name], p=p)
        up, _ = edict_invert(dn, schedule, models[name], p=p)
        assert up.t == top
        assert _max_abs_err(up, xT) < 1e-10

    def test_partial_runs_meet_in_the_middle(self, schedule, models):
        x0 = _draw(42)
        up, _ = edict_invert(
            CoupledState.paired(x0, t=0), schedule, models["mixture"], p=0.93, num_steps=10
        )
        assert up.t == schedule.bounds()[10]
        back, _ = edict_denoise(up, schedule, models["mixture"], p=0.93, num_steps=10)
        assert _max_abs_err(back, x0) < 1e-10

    def test_bare_tensor_is_paired_at_the_run_boundary(self, schedule, models):
        xT = _draw(777)
        st, _ = edict_denoise(xT, schedule, models["constant"], p=0.93)
        st2, _ = edict_denoise(
            CoupledState.paired(xT, t=schedule.bounds()[-1]),
            schedule,
            models["constant"],
            p=0.93,
        )
        assert np.array_equal(st.x.data, st2.x.data)
        assert np.array_equal(st.y.data, st2.y.data)

    @pytest.mark.parametrize("num_steps", [-1, 51])
    def test_num_steps_out_of_range(self, schedule, models, num_steps):
        x0 = _draw(1)
        with pytest.raises(ValueError):
            edict_denoise(x0, schedule, models["constant"], num_steps=num_steps)
        with pytest.raises(ValueError):
            edict_invert(x0, schedule, models["constant"], num_steps=num_steps)

    def test_zero_steps_records_only_the_start(self, schedule, models):
        x0 = _draw(1)
        st, trace = edict_invert(x0, schedule, models["constant"], num_steps=0)
        assert st.t == 0
        assert len(trace.rows) == 1


class TestPairDynamics:
    def test_constant_model_keeps_pair_bitwise_identical(self, schedule, models):
        # with a state-independent prediction both lanes see identical inputs
        xT = _draw(778)
        st = CoupledState.paired(xT, t=schedule.bounds()[-1])
        dn, trace = edict_denoise(st, schedule, models["constant"], p=0.93)
        assert np.array_equal(dn.x.data, dn.y.data)
        assert all(row.gap_norm == 0.0 for row in trace.rows)
        assert trace.min_cos() == 1.0

    def test_gap_contracts_by_p_squared_times_signal_ratio(self, schedule, models):
        x0 = _draw(778)
        y0 = _draw(779)
        coeffs = schedule.coeffs(1000, 980)
        for p in (0.5, 0.93, 1.0):
            st = CoupledState(x=x0, y=y0, t=1000)
            nxt = edict_denoise_step(st, coeffs, models["constant"], NULL, NO_GUIDE, p)
            want = p * p * coeffs.a
            assert abs(nxt.gap_norm() / st.gap_norm() - want) < 1e-12 * want

    def test_inverse_step_dilates_gap_by_reciprocal(self, schedule, models):
        x0 = _draw(778)
        y0 = _draw(779)
        coeffs = schedule.coeffs(1000, 980)
        for p in (0.5, 0.93, 1.0):
            st = CoupledState(x=x0, y=y0, t=980)
            up = edict_noise_step(st, coeffs, models["constant"], NULL, NO_GUIDE, p)
            want = 1.0 / (p * p * coeffs.a)
            assert abs(up.gap_norm() / st.gap_norm() - want) < 1e-12 * want

    def test_swapping_lanes_and_parity_swaps_outputs(self, schedule, models):
        a = _draw(5)
        b = _draw(6)
        coeffs = schedule.coeffs(1000, 980)
        model = models["mixture"]
        n1 = edict_denoise_step(
            CoupledState(x=a, y=b, t=1000), coeffs, model, NULL, NO_GUIDE, 0.93
        )
        n2 = edict_denoise_step(
            CoupledState(x=b, y=a, t=1000, flip=True), coeffs, model, NULL, NO_GUIDE, 0.93
        )
        assert np.array_equal(n1.x.data, n2.y.data)
        assert np.array_equal(n1.y.data, n2.x.data)
        assert n1.flip and not n2.flip
        i1 = edict_noise_step(
            CoupledState(x=a, y=b, t=980), coeffs, model, NULL, NO_GUIDE, 0.93
        )
        i2 = edict_noise_step(
            CoupledState(x=b, y=a, t=980, flip=True), coeffs, model, NULL, NO_GUIDE, 0.93
        )
        assert np.array_equal(i1.x.data, i2.y.data)
        assert np.array_equal(i1.y.data, i2.x.data)

    def test_driver_level_flip_symmetry(self, schedule, models):
        a = _draw(5)
        b = _draw(6)
        top = schedule.bounds()[-1]
        s1, _ = edict_denoise(
            CoupledState(x=a, y=b, t=top), schedule, models["mixture"], p=0.93
        )
        s2, _ = edict_denoise(
            CoupledState(x=b, y=a, t=top, flip=True), schedule, models["mixture"], p=0.93
        )
        assert np.array_equal(s1.x.data, s2.y.data)
        assert np.array_equal(s1.y.data, s2.x.data)

    def test_lanes_track_each_other_on_the_mixture_model(self, schedule, models):
        xT = _draw(777)
        st, trace = edict_denoise(xT, schedule, models["mixture"], p=0.93)
        rel_gap = st.gap_norm() / float(np.linalg.norm(st.x.data))
        assert rel_gap < 1e-3
        assert trace.min_cos() > 0.999


class TestTraces:
    def test_denoise_trace_covers_every_boundary(self, schedule, models):
        xT = _draw(777)
        _, trace = edict_denoise(xT, schedule, models["mixture"], p=0.93)
        assert len(trace.rows) == 51
        assert [row.step for row in trace.rows] == list(range(51))
        assert trace.rows[0].t == 1000
        assert trace.rows[-1].t == 0
        assert trace.first_flagged() is None

    def test_invert_trace_runs_upward(self, schedule, models):
        x0 = _draw(12)
        _, trace = edict_invert(x0, schedule, models["mixture"], p=0.93)
        assert trace.rows[0].t == 0
        assert trace.rows[-1].t == 1000

    def test_row_flagging_threshold(self):
        healthy = TraceRow(step=0, t=0, cos_xy=0.9, norm_x=1.0, norm_y=1.0, gap_norm=0.0)
        assert not healthy.is_flagged()
        low = TraceRow(step=0, t=0, cos_xy=0.4999, norm_x=1.0, norm_y=1.0, gap_norm=0.0)
        assert low.is_flagged()
        border = TraceRow(step=0, t=0, cos_xy=0.5, norm_x=1.0, norm_y=1.0, gap_norm=0.0)
        assert not border.is_flagged()
        assert border.is_flagged(threshold=0.6)
        blown = TraceRow(
            step=0, t=0, cos_xy=0.9, norm_x=float("inf"), norm_y=1.0, gap_norm=0.0
        )
        assert blown.is_flagged()

    def test_first_flagged_reports_earliest_step(self):
        rows = [
            TraceRow(step=0, t=0, cos_xy=0.9, norm_x=1.0, norm_y=1.0, gap_norm=0.0),
            TraceRow(step=1, t=20, cos_xy=0.2, norm_x=1.0, norm_y=1.0, gap_norm=0.0),
            TraceRow(step=2, t=40, cos_xy=0.1, norm_x=1.0, norm_y=1.0, gap_norm=0.0),
        ]
        trace = CoupledTrace(rows)
        assert trace.first_flagged() == 1
        assert trace.min_cos() == 0.1

    def test_trace_csv_round_trips(self, tmp_path, schedule, models):
        xT = _draw(777)
        _, trace = edict_denoise(xT, schedule, models["mixture"], p=0.93)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text(encoding="ascii").splitlines()
        assert lines[0] == "# schema: trace_v1"
        assert lines[1] == "step,t,cos_sim_xy,norm_x,norm_y,gap_norm"
        assert len(lines) == 2 + len(trace.rows)
        first = lines[2].split(",")
        assert int(first[0]) == 0
        assert float(first[2]) == trace.rows[0].cos_xy
        last = lines[-1].split(",")
        assert float(last[5]) == trace.rows[-1].gap_norm
