"""Local planning loop: window, local goal, two-stage plan, replanning."""

from __future__ import annotations

import logging
import threading
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import solver as nlls
from .costs import (DegenerateWaypointsWarning, MainResult, PlannerConfig, StageResult,
                    initial_optimize, main_optimize, total_cost)
from .trajectory import QuinticTrajectory, as_point, straight_line_state

log = logging.getLogger(__name__)

METRIC_SAMPLES = 100
WINDOW_SLACK = 0.10


class PlanningError(Exception):
    pass


class WindowEmptyError(PlanningError):
    pass


class NoSafeGoalError(PlanningError):
    pass


@dataclass(frozen=True)
class LocalWindow:
    half_extents: tuple = (3.0, 3.0, 1.6)
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=float)
        if h.shape != (3,) or not np.all(h > 0):
            raise ValueError("window half extents must be 3 positive values")
        object.__setattr__(self, "half_extents", tuple(float(x) for x in h))
        object.__setattr__(self, "center", tuple(float(x) for x in as_point(self.center)))

    def recentered(self, center) -> LocalWindow:
        return LocalWindow(self.half_extents, tuple(as_point(center)))

    def contains(self, points, inflate: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        h = np.asarray(self.half_extents) * (1.0 + inflate)
        return np.all(np.abs(p - np.asarray(self.center)) <= h, axis=1)


@dataclass(frozen=True, eq=False)
class GlobalPath:
    waypoints: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=float)
        if w.ndim != 2 or w.shape[1] != 3 or len(w) < 2:
            raise ValueError("global path needs at least 2 waypoints of 3 coordinates")
        if not np.all(np.isfinite(w)):
            raise ValueError("global path has non-finite coordinates")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "waypoints", w)

    def __len__(self):
        return len(self.waypoints)


def to_local(p_world, window: LocalWindow) -> np.ndarray:
    return np.asarray(p_world, dtype=float) - np.asarray(window.center)


def to_global(p_local, window: LocalWindow) -> np.ndarray:
    return np.asarray(p_local, dtype=float) + np.asarray(window.center)


def select_local_goal(path: GlobalPath, pose, window: LocalWindow, provider,
                      safe_threshold: float) -> tuple[np.ndarray, int]:
    """Furthest in-window waypoint whose distance is at least ``safe_threshold``.

    ``pose`` recenters the window.  Falls back along decreasing path index.
    """
    window = window.recentered(pose)
    inside = np.flatnonzero(window.contains(path.waypoints))
    if len(inside) == 0:
        raise WindowEmptyError(f"no global waypoint inside the window at {window.center}")
    for idx in inside[::-1]:
        if provider.eval(path.waypoints[idx]).distance >= safe_threshold:
            return path.waypoints[idx].copy(), int(idx)
    raise NoSafeGoalError(f"all {len(inside)} in-window waypoints are closer than {safe_threshold} m "
                          "to an obstacle")


def window_waypoints(path: GlobalPath, pose, window: LocalWindow, goal_index: int) -> np.ndarray:
    """Waypoints the initial stage should follow, from the drone to the local goal.

    In-window waypoints up to ``goal_index``, starting after the waypoint
    nearest the drone so waypoints already passed are dropped; the drone
    position is prepended.
    """
    pose = as_point(pose)
    window = window.recentered(pose)
    idx = np.arange(goal_index + 1)
    idx = idx[window.contains(path.waypoints[idx])]
    pts = path.waypoints[idx]
    nearest = int(np.argmin(np.linalg.norm(pts - pose, axis=1)))
    # the nearest waypoint is kept only if it lies ahead of the drone
    ahead = pts[nearest + 1:] if nearest + 1 < len(pts) else pts[-1:]
    if nearest + 1 < len(pts):
        seg = pts[nearest + 1] - pts[nearest]
        if np.dot(pts[nearest] - pose, seg) > 0:
            ahead = pts[nearest:]
    return np.vstack([pose, ahead])


@dataclass
class PlanReport:
    trajectory: QuinticTrajectory     # world frame (d = drone position)
    local_goal: np.ndarray            # world frame
    goal_index: int
    loop_time_s: float
    clearance_mean: float
    clearance_min: float
    path_length: float
    initial: Optional[nlls.SolveReport]
    main: Optional[nlls.SolveReport]
    costs: dict = field(default_factory=dict)
    barrier_clearances: Optional[np.ndarray] = None
    failed: bool = False
    degenerate_waypoints: bool = False
    out_of_bounds: bool = False
    window_violation: bool = False
    message: str = ""

    @property
    def goal_error(self) -> float:
        return float(np.linalg.norm(self.trajectory.evaluate(1.0) - self.local_goal))

    def deterministic_fields(self) -> dict:
        """Everything except wall-clock timing, for reproducibility checks."""
        return {
            "state": self.trajectory.state.tolist(),
            "d": self.trajectory.d.tolist(),
            "local_goal": self.local_goal.tolist(),
            "goal_index": self.goal_index,
            "clearance_mean": self.clearance_mean,
            "clearance_min": self.clearance_min,
            "path_length": self.path_length,
            "initial_iterations": self.initial.iterations_used if self.initial else None,
            "main_iterations": self.main.iterations_used if self.main else None,
            "main_cost": self.main.final_cost if self.main else None,
            "costs": dict(self.costs),
            "failed": self.failed,
        }


def trajectory_metrics(traj: QuinticTrajectory, provider, n: int = METRIC_SAMPLES):
    """Mean/min clearance over ``n`` evenly spaced samples (endpoints included) and path length."""
    pts = traj.positions(np.linspace(0.0, 1.0, n))
    dist = provider.distance_and_gradient(pts)[0]
    length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    return float(dist.mean()), float(dist.min()), length, pts


def plan_once(path: GlobalPath, pose, window: LocalWindow, provider, config: PlannerConfig,
              solve=nlls.solve, *, skip_initial: bool = False, start_velocity=None) -> PlanReport:
    """One planning loop: local goal, initial stage, main stage, metrics.

    ``skip_initial`` seeds the main stage with the straight line directly
    (used to measure what the initial stage buys).
    """
    t0 = time.perf_counter()
    pose = as_point(pose)
    window = window.recentered(pose)
    goal_world, goal_idx = select_local_goal(path, pose, window, provider, config.goal_safe_threshold)
    goal_local = to_local(goal_world, window)
    start_local = np.zeros(3)

    degenerate = False
    if skip_initial:
        init = StageResult(straight_line_state(start_local, goal_local), None)
    else:
        wps = to_local(window_waypoints(path, pose, window, goal_idx), window)
        wps[-1] = goal_local
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateWaypointsWarning)
            init = initial_optimize(wps, start_local, goal_local, config, solve)
        degenerate = init.degenerate

    failed, message = False, ""
    if init.report is not None and not init.report.ok:
        failed, message = True, f"initial stage: {init.report.message}"
        main = None
    else:
        main = main_optimize(init.state, _LocalView(provider, window), goal_local, config, solve,
                             start_velocity=start_velocity)
        if not main.report.ok:
            failed, message = True, f"main stage: {main.report.message}"
    state = straight_line_state(start_local, goal_local) if failed else main.state
    loop_time = time.perf_counter() - t0

    traj_local = QuinticTrajectory(state, start_local, config.duration_s)
    traj = traj_local.shifted(pose)
    mean_c, min_c, length, pts = trajectory_metrics(traj, provider)
    return PlanReport(
        trajectory=traj, local_goal=goal_world, goal_index=goal_idx, loop_time_s=loop_time,
        clearance_mean=mean_c, clearance_min=min_c, path_length=length,
        initial=init.report, main=main.report if isinstance(main, MainResult) else None,
        costs=total_cost(state, _LocalView(provider, window), goal_local, config),
        barrier_clearances=None if main is None else main.clearances,
        failed=failed, degenerate_waypoints=degenerate,
        out_of_bounds=bool(main.clamped) if main is not None else False,
        window_violation=not bool(np.all(window.contains(pts, inflate=WINDOW_SLACK))),
        message=message,
    )


class _LocalView:
    """Presents a world-frame provider in window-local coordinates."""

    def __init__(self, provider, window: LocalWindow):
        self._provider = provider
        self._offset = np.asarray(window.center)
        b = getattr(provider, "bounds", None)
        self.bounds = None if b is None else (b[0] - self._offset, b[1] - self._offset)

    def eval(self, p):
        return self._provider.eval(np.asarray(p, dtype=float) + self._offset)

    def eval_batch(self, points):
        return self._provider.eval_batch(np.asarray(points, dtype=float) + self._offset)

    def distance_and_gradient(self, points):
        return self._provider.distance_and_gradient(np.asarray(points, dtype=float) + self._offset)


class ProviderSnapshot:
    """Holds the current distance-field provider; ``swap`` replaces it atomically.

    A planner reads :meth:`current` once per plan, so a swap is seen by the
    next plan and never mid-plan.
    """

    def __init__(self, provider):
        self._lock = threading.Lock()
        self._provider = provider
        self.version = 0

    def current(self):
        with self._lock:
            return self._provider

    def swap(self, provider) -> None:
        with self._lock:
            self._provider = provider
            self.version += 1


@dataclass
class ReplanResult:
    reports: list
    poses: list
    halted: bool = False
    message: str = ""


def replan_loop(path: GlobalPath, scene_schedule, config: PlannerConfig, steps: int,
                window: LocalWindow = LocalWindow(), *, advance_fraction: float = 0.3,
                start_pose=None, solve=nlls.solve) -> ReplanResult:
    """Plan, advance the drone along the plan, recenter, replan.

    ``scene_schedule`` maps step index -> provider (or is a list of
    ``(step, provider)``); step 0 must be present.  At each step the latest
    scheduled snapshot is swapped in before planning.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    schedule = dict(scene_schedule)
    if 0 not in schedule:
        raise ValueError("scene_schedule needs a provider for step 0")
    snapshot = ProviderSnapshot(schedule[0])
    pose = as_point(path.waypoints[0] if start_pose is None else start_pose)
    reports, poses = [], [pose.copy()]
    for step in range(steps):
        if step in schedule and step > 0:
            snapshot.swap(schedule[step])
        provider = snapshot.current()
        try:
            rep = plan_once(path, pose, window, provider, config, solve)
        except PlanningError as exc:
            log.warning("replan halted at step %d: %s", step, exc)
            return ReplanResult(reports, poses, True, f"step {step}: {exc}")
        reports.append(rep)
        pose = rep.trajectory.evaluate(advance_fraction)
        poses.append(pose.copy())
    return ReplanResult(reports, poses)
