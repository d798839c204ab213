import threading

import numpy as np
import pytest

from sdftraj.costs import PlannerConfig
from sdftraj.planner import (GlobalPath, LocalWindow, NoSafeGoalError, ProviderSnapshot,
                             WindowEmptyError, plan_once, replan_loop, select_local_goal, to_global,
                             to_local, trajectory_metrics, window_waypoints)
from sdftraj.scenes import get_fixture, polyline
from sdftraj.sdf import AnalyticScene, Sphere, build_grid
from sdftraj.solver import SolveReport, Termination

BOUNDS = ((-5, -5, -2), (25, 5, 4))
EMPTY = AnalyticScene([], BOUNDS)
LINE = GlobalPath(polyline([(0, 0, 1), (20, 0, 1)]))
WINDOW = LocalWindow((5, 3, 1.6))
CFG = PlannerConfig(safe_threshold=0.5)


def test_window_validation_and_contains():
    with pytest.raises(ValueError):
        LocalWindow((1, 0, 1))
    w = LocalWindow((1, 2, 3), (10, 0, 0))
    assert list(w.contains([(11, 2, -3), (11.01, 0, 0)])) == [True, False]
    assert w.contains([(11.05, 0, 0)], inflate=0.1)[0]


def test_global_path_validation():
    with pytest.raises(ValueError):
        GlobalPath(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        GlobalPath([[0, 0, 0], [np.nan, 0, 0]])


def test_frame_transforms():
    w = LocalWindow(center=(3, -1, 2))
    np.testing.assert_array_equal(to_local((3, -1, 2), w), [0, 0, 0])
    np.testing.assert_array_equal(to_local((6, -1, 2), w), [3, 0, 0])
    p = np.random.default_rng(0).normal(size=3) * 10
    np.testing.assert_allclose(to_global(to_local(p, w), w), p, rtol=0, atol=1e-14)


def test_goal_is_last_in_window_waypoint():
    goal, idx = select_local_goal(LINE, (0, 0, 1), WINDOW, EMPTY, 0.5)
    np.testing.assert_allclose(goal, [5, 0, 1])
    assert idx == 20


def test_goal_falls_back_to_previous_safe_waypoint():
    # waypoints are 0.25 m apart; the one at x = 4.75 clears the sphere by 0.15
    scene = AnalyticScene([Sphere((5, 0, 1), 0.1)], BOUNDS)
    goal, idx = select_local_goal(LINE, (0, 0, 1), WINDOW, scene, 0.1)
    assert idx == 19
    assert scene.eval(goal).distance >= 0.1
    assert select_local_goal(LINE, (0, 0, 1), WINDOW, scene, 0.2)[1] == 18


def test_goal_selection_never_unsafe():
    rng = np.random.default_rng(1)
    for _ in range(20):
        scene = AnalyticScene([Sphere((rng.uniform(1, 6), rng.uniform(-0.5, 0.5), 1), rng.uniform(0.2, 1.0))],
                              BOUNDS)
        try:
            goal, _ = select_local_goal(LINE, (0, 0, 1), WINDOW, scene, 0.5)
        except NoSafeGoalError:
            continue
        assert scene.eval(goal).distance >= 0.5


def test_no_safe_goal_and_empty_window():
    blocker = AnalyticScene([Sphere((2.5, 0, 1), 10)], BOUNDS)
    with pytest.raises(NoSafeGoalError):
        select_local_goal(LINE, (0, 0, 1), WINDOW, blocker, 0.5)
    with pytest.raises(WindowEmptyError):
        select_local_goal(LINE, (0, 10, 1), LocalWindow(), EMPTY, 0.5)


def test_window_waypoints_start_at_drone_and_skip_passed_points():
    pose = np.array([2.1, 0.2, 1.0])
    _, idx = select_local_goal(LINE, pose, WINDOW, EMPTY, 0.5)
    wps = window_waypoints(LINE, pose, WINDOW, idx)
    np.testing.assert_array_equal(wps[0], pose)
    assert np.all(wps[1:, 0] > pose[0])
    np.testing.assert_allclose(wps[-1], LINE.waypoints[idx])


def test_plan_on_empty_scene_is_straight():
    rep = plan_once(LINE, (0, 0, 1), WINDOW, EMPTY, CFG)
    assert not rep.failed
    assert rep.path_length == pytest.approx(5.0, abs=1e-2)
    line = np.linspace(0, 1, 100)[:, None] * np.array([5, 0, 0]) + np.array([0, 0, 1])
    assert np.max(np.linalg.norm(rep.trajectory.positions(np.linspace(0, 1, 100)) - line, axis=1)) < 1e-3
    np.testing.assert_array_equal(rep.trajectory.d, [0, 0, 1])


def test_plan_report_invariants_on_fixtures():
    for name in ("scenario1", "scenario2", "doorway"):
        fx = get_fixture(name)
        rep = plan_once(fx.path, fx.start, fx.window, fx.scene, PlannerConfig(**fx.config))
        assert not rep.failed
        assert rep.goal_error < 1e-2
        assert rep.clearance_min <= rep.clearance_mean
        straight = np.linalg.norm(rep.local_goal - np.asarray(fx.start))
        assert rep.path_length >= straight - 1e-6
        assert rep.clearance_min > 0
        assert not rep.window_violation
        mean, mn, length, _ = trajectory_metrics(rep.trajectory, fx.scene)
        assert (mean, mn, length) == (rep.clearance_mean, rep.clearance_min, rep.path_length)


def test_plan_beats_straight_line_clearance():
    fx = get_fixture("scenario1")
    rep = plan_once(fx.path, fx.start, fx.window, fx.scene, PlannerConfig(**fx.config))
    pts = np.linspace(0, 1, 100)[:, None] * (rep.local_goal - fx.start) + fx.start
    straight_min = fx.scene.distance_and_gradient(pts)[0].min()
    assert rep.clearance_min > straight_min
    assert rep.clearance_min > 0.5


def test_solver_failure_falls_back_to_straight_line():
    def failing(blocks, x0, *args, **kwargs):
        return SolveReport(np.asarray(x0), 1.0, 1.0, 0, Termination.NUMERICAL_FAILURE, 0.0, [], "boom")

    rep = plan_once(LINE, (0, 0, 1), WINDOW, EMPTY, CFG, solve=failing)
    assert rep.failed and "boom" in rep.message
    assert rep.goal_error < 1e-12


def test_plan_with_grid_provider():
    scene = AnalyticScene([Sphere((2.5, 0.1, 1), 0.5)], ((-0.5, -3, -0.6), (5.5, 3, 2.6)))
    grid = build_grid(scene, 0.1)
    rep = plan_once(LINE, (0, 0, 1), WINDOW, grid, CFG)
    assert not rep.failed and rep.goal_error < 1e-2
    assert trajectory_metrics(rep.trajectory, scene)[1] > 0.3


def test_plan_is_deterministic():
    fx = get_fixture("scenario2")
    cfg = PlannerConfig(**fx.config)
    a = plan_once(fx.path, fx.start, fx.window, fx.scene, cfg)
    b = plan_once(fx.path, fx.start, fx.window, fx.scene, cfg)
    assert a.deterministic_fields() == b.deterministic_fields()


def test_replan_progress_on_empty_scene():
    res = replan_loop(LINE, {0: EMPTY}, CFG, 5, WINDOW)
    assert not res.halted and len(res.reports) == 5
    final = LINE.waypoints[-1]
    dist = [np.linalg.norm(p - final) for p in res.poses]
    assert all(b < a for a, b in zip(dist, dist[1:]))


def test_replan_uses_swapped_snapshot():
    base = replan_loop(LINE, {0: EMPTY}, CFG, 3, WINDOW)
    old = base.reports[2].trajectory
    # reveal an obstacle on the step-2 trajectory, ahead of the step-3 start
    obstacle = Sphere(tuple(old.evaluate(0.7) + np.array([0, 0.1, 0])), 0.4)
    revealed = AnalyticScene([obstacle], BOUNDS)
    res = replan_loop(LINE, [(0, EMPTY), (3, revealed)], CFG, 4, WINDOW)
    for a, b in zip(base.reports, res.reports[:3]):
        assert a.deterministic_fields() == b.deterministic_fields()
    old_min = trajectory_metrics(old, revealed)[1]
    assert old_min < 0.1
    assert res.reports[3].clearance_min >= old_min
    assert res.reports[3].clearance_min > 0.3


def test_replan_is_deterministic():
    fx = get_fixture("scenario1")
    cfg = PlannerConfig(**fx.config)
    a = replan_loop(fx.path, {0: fx.scene}, cfg, 4, fx.window)
    b = replan_loop(fx.path, {0: fx.scene}, cfg, 4, fx.window)
    assert [r.deterministic_fields() for r in a.reports] == [r.deterministic_fields() for r in b.reports]


def test_replan_halts_without_safe_goal():
    # by step 2 the drone is near x = 3; every waypoint in reach is inside the sphere
    blocker = AnalyticScene([Sphere((3, 0, 1), 6.5)], BOUNDS)
    res = replan_loop(LINE, {0: EMPTY, 2: blocker}, CFG, 5, WINDOW)
    assert res.halted and len(res.reports) == 2
    assert "step 2" in res.message


def test_replan_requires_step_zero():
    with pytest.raises(ValueError):
        replan_loop(LINE, {1: EMPTY}, CFG, 3)
    with pytest.raises(ValueError):
        replan_loop(LINE, {0: EMPTY}, CFG, 0)


def test_snapshot_swap_is_atomic():
    snap = ProviderSnapshot("a")
    seen = set()

    def reader():
        for _ in range(2000):
            seen.add(snap.current())

    t = threading.Thread(target=reader)
    t.start()
    for k in range(100):
        snap.swap(f"p{k}")
    t.join()
    assert snap.version == 100 and snap.current() == "p99"
    assert seen <= {"a"} | {f"p{k}" for k in range(100)}
