import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdftraj import trajectory as tr
from sdftraj.trajectory import QuinticTrajectory, chord_length_times, straight_line_state

coef = st.floats(-10, 10, allow_nan=False)
states = arrays(float, 15, elements=coef)
points = arrays(float, 3, elements=st.floats(-50, 50, allow_nan=False))


def line(goal, d=(0, 0, 0), duration=2.0):
    return QuinticTrajectory(straight_line_state(d, goal), d, duration)


def test_zero_state_returns_constants():
    traj = QuinticTrajectory(np.zeros(15), (1, 2, 3))
    for tau in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(tr.evaluate(traj, tau), [1, 2, 3])


def test_straight_line_midpoint():
    np.testing.assert_allclose(tr.evaluate(line((4, 0, 0)), 0.5), [2, 0, 0])


def test_single_quintic_coefficient():
    c = np.zeros(15)
    c[0] = 1
    assert tr.evaluate(QuinticTrajectory(c, (0, 0, 0)), 0.5)[0] == 0.03125


@pytest.mark.parametrize("tau", [-0.01, 1.01, np.nan])
def test_tau_outside_unit_interval(tau):
    with pytest.raises(ValueError):
        tr.evaluate(line((1, 0, 0)), tau)


def test_velocity_of_straight_line():
    np.testing.assert_allclose(tr.derivative(line((4, 0, 0), duration=2.0), 0.7, 1), [2, 0, 0])


def test_second_derivative_of_linear_state_is_zero():
    np.testing.assert_array_equal(tr.derivative(line((1, -2, 3)), 0.4, 2), [0, 0, 0])


def test_third_derivative_of_cubic():
    c = np.zeros(15)
    c[2] = 1
    np.testing.assert_allclose(tr.derivative(QuinticTrajectory(c, (0, 0, 0), 1.0), 0.0, 3), [6, 0, 0])


@pytest.mark.parametrize("order", [0, 4, -1])
def test_derivative_order_domain(order):
    with pytest.raises(ValueError):
        tr.derivative(line((1, 0, 0)), 0.5, order)


def test_sample_endpoints_and_count():
    traj = line((5, 0, 0))
    pts = tr.sample(traj, 5)
    assert len(pts) == 6
    np.testing.assert_allclose(pts[:, 0], [0, 1, 2, 3, 4, 5], atol=1e-12)
    two = tr.sample(traj, 1)
    np.testing.assert_allclose(two, [traj.evaluate(0), traj.evaluate(1)])
    with pytest.raises(ValueError):
        tr.sample(traj, 0)


def test_chord_length_examples():
    for n in (1, 3, 17):
        assert tr.chord_length(line((4, 0, 0)), n) == pytest.approx(4)
    assert tr.chord_length(QuinticTrajectory(np.zeros(15), (1, 1, 1)), 10) == 0


def test_chord_length_half_circle_against_dense_sum():
    # least-squares quintic fit of a unit half circle, per axis
    tau = np.linspace(0, 1, 200)
    B = tr.basis(tau)
    x = np.cos(np.pi * tau) - 1
    y = np.sin(np.pi * tau)
    cx = np.linalg.lstsq(B, x, rcond=None)[0]
    cy = np.linalg.lstsq(B, y, rcond=None)[0]
    traj = QuinticTrajectory(np.concatenate([cx, cy, np.zeros(5)]), (0, 0, 0))
    dense = tr.chord_length(traj, 100_000)
    assert dense == pytest.approx(np.pi, rel=1e-2)
    assert abs(tr.chord_length(traj, 64) - dense) / dense < 0.01


def test_straight_line_state_examples():
    c = straight_line_state((0, 0, 0), (4, 0, 0))
    expected = np.zeros(15)
    expected[4] = 4
    np.testing.assert_array_equal(c, expected)
    np.testing.assert_array_equal(straight_line_state((1, 2, 3), (1, 2, 3)), np.zeros(15))
    c = straight_line_state((1, 1, 1), (1, -1, 1.5))
    assert c[9] == -2 and c[14] == 0.5
    assert np.count_nonzero(c) == 2


def test_chord_length_times_examples():
    np.testing.assert_allclose(chord_length_times([(0, 0, 0), (1, 0, 0), (2, 0, 0)]), [0, 0.5, 1])
    np.testing.assert_allclose(chord_length_times([(0, 0, 0), (1, 0, 0), (1, 3, 0)]), [0, 0.25, 1])
    np.testing.assert_array_equal(chord_length_times([(0, 0, 0), (0, 0, 2)]), [0, 1])


@pytest.mark.parametrize("wps", [[(0, 0, 0)], [], [(1, 1, 1), (1, 1, 1), (1, 1, 1)]])
def test_chord_length_times_degenerate(wps):
    with pytest.raises(tr.DegenerateInputError):
        chord_length_times(wps)


def test_state_validation():
    with pytest.raises(ValueError):
        QuinticTrajectory(np.zeros(14), (0, 0, 0))
    with pytest.raises(ValueError):
        QuinticTrajectory(np.full(15, np.inf), (0, 0, 0))
    with pytest.raises(ValueError):
        QuinticTrajectory(np.zeros(15), (0, 0, 0), duration_s=0)


def test_trajectory_is_immutable():
    traj = line((1, 2, 3))
    with pytest.raises(ValueError):
        traj.state[0] = 1.0


def test_table_export():
    buf = io.StringIO()
    tr.write_table(line((4, 0, 0)), buf, n=4)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "# tau t x y z vx vy vz"
    data = np.loadtxt(io.StringIO(buf.getvalue()))
    assert data.shape == (5, 8)
    np.testing.assert_allclose(data[:, 1], data[:, 0] * 2.0)
    np.testing.assert_allclose(data[:, 5], 2.0)


def test_record_round_trip():
    rng = np.random.default_rng(3)
    traj = QuinticTrajectory(rng.normal(size=15), rng.normal(size=3), 1.7)
    rec = json.loads(tr.dumps(traj))
    assert len(rec["state"]) == 15 and len(rec["d"]) == 3
    back = tr.loads(tr.dumps(traj))
    np.testing.assert_array_equal(back.state, traj.state)
    np.testing.assert_array_equal(back.d, traj.d)
    assert back.duration_s == traj.duration_s


@settings(max_examples=60, deadline=None)
@given(states, points)
def test_position_at_zero_is_d(c, d):
    np.testing.assert_array_equal(QuinticTrajectory(c, d).evaluate(0.0), d)


@settings(max_examples=60, deadline=None)
@given(points, points)
def test_straight_line_reaches_goal(start, goal):
    traj = QuinticTrajectory(straight_line_state(start, goal), start)
    np.testing.assert_allclose(traj.evaluate(1.0), goal, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(states, st.floats(0.01, 0.99), st.floats(0.5, 5.0))
def test_velocity_matches_finite_difference(c, tau, duration):
    traj = QuinticTrajectory(c, (0, 0, 0), duration)
    h = 1e-6
    fd = (traj.evaluate(tau + h) - traj.evaluate(tau - h)) / (2 * h * duration)
    v = traj.derivative(tau, 1)
    scale = np.max(np.abs(v))
    if scale < 1e-3:
        # cancellation leaves no meaningful relative comparison
        assert np.max(np.abs(v - fd)) < 1e-6
    else:
        assert np.max(np.abs(v - fd)) / scale < 1e-6


@settings(max_examples=40, deadline=None)
@given(states, st.integers(1, 40))
def test_chord_length_refines(c, n):
    traj = QuinticTrajectory(c, (0, 0, 0))
    # refinement by an integer factor never shortens the polyline
    assert tr.chord_length(traj, n) <= tr.chord_length(traj, 2 * n) + 1e-9
    assert tr.chord_length(traj, n) <= tr.chord_length(traj, 3 * n) + 1e-9


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(2, 12), st.just(3)), elements=st.floats(-20, 20, allow_nan=False)))
def test_chord_times_partition(wps):
    try:
        taus = chord_length_times(wps)
    except tr.DegenerateInputError:
        assert np.sum(np.linalg.norm(np.diff(wps, axis=0), axis=1)) == 0
        return
    assert taus[0] == 0 and taus[-1] == 1
    assert np.all(np.diff(taus) >= 0)
