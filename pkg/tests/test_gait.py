import numpy as np
import pytest
from hypothesis import given, strategies as st

from mirrorknee.gait import (
    PHASES,
    Action,
    ActionBounds,
    GaitFeatures,
    GaitPhase,
    ImpedanceBounds,
    ImpedanceSchedule,
    ImpedanceTriple,
    KneeState,
    Trajectory,
    apply_action,
    compute_torque,
    next_phase,
)

finite = st.floats(-100, 100, allow_nan=False)


def _sched(triple=(5.0, 1.0, 10.0)):
    return ImpedanceSchedule.from_array(np.tile(triple, (4, 1)))


@pytest.mark.parametrize(
    "imp, state, expected",
    [
        ((0, 0, 15), (40, 100), 0.0),
        ((2, 0.5, 3), (5, 4), 6.0),
        ((3, 1, 20), (20, 0), 0.0),
    ],
)
def test_compute_torque_examples(imp, state, expected):
    assert compute_torque(ImpedanceTriple(*imp), KneeState(*state)) == expected


@given(K=st.floats(0, 10), B=st.floats(0, 2), a=st.floats(0, 5), th=finite, om=finite)
def test_torque_is_linear_in_gains(K, B, a, th, om):
    s = KneeState(th, om)
    lhs = compute_torque(ImpedanceTriple(a * K, a * B, 0.0), s)
    rhs = a * compute_torque(ImpedanceTriple(K, B, 0.0), s)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)


def test_next_phase_order():
    assert next_phase(GaitPhase.STF) is GaitPhase.STE
    assert next_phase(GaitPhase.STE) is GaitPhase.SWF
    assert next_phase(GaitPhase.SWF) is GaitPhase.SWE
    assert next_phase(GaitPhase.SWE) is GaitPhase.STF


@pytest.mark.parametrize("p", PHASES)
def test_next_phase_has_order_four(p):
    q = p
    seen = set()
    for _ in range(4):
        seen.add(q)
        q = next_phase(q)
    assert q is p and len(seen) == 4


def test_flexion_flags():
    assert [p.is_flexion for p in PHASES] == [True, False, True, False]


def test_apply_action_adds_componentwise():
    res = apply_action(_sched(), GaitPhase.SWF, Action(0.5, -0.1, 2.0))
    assert res.schedule[GaitPhase.SWF].as_array() == pytest.approx([5.5, 0.9, 12.0])
    assert not res.saturated
    for p in (GaitPhase.STF, GaitPhase.STE, GaitPhase.SWE):
        assert res.schedule[p] == ImpedanceTriple(5.0, 1.0, 10.0)


def test_zero_action_is_identity():
    s = _sched()
    res = apply_action(s, GaitPhase.STE, Action())
    assert res.schedule == s and not res.saturated


def test_apply_action_clamps_and_flags():
    s = _sched((0.1, 1.0, 10.0))
    res = apply_action(s, GaitPhase.STF, Action(-0.5, 0, 0))
    assert res.schedule[GaitPhase.STF].K == 0.0
    assert res.saturated


def test_apply_action_respects_per_phase_bounds():
    bounds = (ImpedanceBounds(),) * 3 + (ImpedanceBounds(theta_e=(0.0, 11.0)),)
    s = ImpedanceSchedule.from_array(np.tile((5.0, 1.0, 10.0), (4, 1)), bounds=bounds)
    res = apply_action(s, GaitPhase.SWE, Action(0, 0, 3.0))
    assert res.schedule[GaitPhase.SWE].theta_e == 11.0 and res.saturated
    res = apply_action(s, GaitPhase.SWF, Action(0, 0, 3.0))
    assert res.schedule[GaitPhase.SWF].theta_e == 13.0 and not res.saturated


@given(
    u=st.tuples(st.floats(-0.5, 0.5), st.floats(-0.1, 0.1), st.floats(-3, 3)),
    phase=st.sampled_from(PHASES),
)
def test_action_then_negation_round_trips(u, phase):
    s = _sched((5.0, 1.0, 40.0))
    a = Action(*u)
    fwd = apply_action(s, phase, a)
    back = apply_action(fwd.schedule, phase, -a)
    assert not fwd.saturated and not back.saturated
    np.testing.assert_allclose(back.schedule.as_array(), s.as_array(), rtol=0, atol=1e-12)


def test_action_bounds_clip():
    b = ActionBounds()
    assert b.clip([1.0, -1.0, 0.5]).tolist() == [0.5, -0.1, 0.5]


def test_bounds_validation():
    with pytest.raises(ValueError):
        ImpedanceBounds(K=(2.0, 1.0))
    with pytest.raises(ValueError):
        ImpedanceBounds(B=(-1.0, 1.0))


def test_schedule_needs_four_triples():
    with pytest.raises(ValueError):
        ImpedanceSchedule((ImpedanceTriple(1, 1, 1),) * 3)


def test_schedule_array_round_trip():
    a = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(ImpedanceSchedule.from_array(a).as_array(), a)


def test_features_cycle_duration_and_validation():
    f = GaitFeatures((1, 2, 3, 4), (0.1, 0.2, 0.3, 0.4))
    assert f.cycle_duration == pytest.approx(1.0)
    with pytest.raises(ValueError):
        GaitFeatures((1, 2, 3), (0.1, 0.2, 0.3, 0.4))
    with pytest.raises(ValueError):
        GaitFeatures((1, 2, 3, 4), (0.1, 0.2, 0.3, 0.4), side="left")


class TestTrajectory:
    def test_phase_bounds_share_ends(self):
        tr = Trajectory(np.zeros(11), 0.01, (0, 2, 5, 7))
        assert [tr.phase_bounds(p) for p in PHASES] == [(0, 2), (2, 5), (5, 7), (7, 10)]

    def test_labels_cover_every_sample(self):
        tr = Trajectory(np.zeros(11), 0.01, (0, 2, 5, 7))
        labels = tr.phase_labels()
        assert len(labels) == 11
        assert labels[:2] == ["STF"] * 2 and labels[-1] == "SWE"

    def test_time_axis(self):
        tr = Trajectory(np.zeros(4), 0.01, t0=1.0)
        np.testing.assert_allclose(tr.t, [1.0, 1.01, 1.02, 1.03])

    @pytest.mark.parametrize("starts", [(1, 2, 3, 4), (0, 2, 2, 4), (0, 1, 2, 9), (0, 1, 2)])
    def test_rejects_bad_annotations(self, starts):
        with pytest.raises(ValueError):
            Trajectory(np.zeros(10), 0.01, starts)

    def test_raw_trace_has_no_bounds(self):
        tr = Trajectory(np.zeros(5), 0.01)
        assert not tr.annotated
        with pytest.raises(ValueError):
            tr.phase_bounds(GaitPhase.STF)
