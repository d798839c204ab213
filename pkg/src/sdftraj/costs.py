"""Two-stage trajectory optimization as residual blocks.

Initial stage (waypoint fit):
    * waypoint residuals ``sqrt(w01) * (p(tau_i) - waypoint_i)``
    * smoothness residuals ``sqrt(w02) * c_k`` over the tau^5..tau^2 terms

Main stage (refinement against a distance field):
    * length: ``sqrt(w11) * (p(tau_j) - p(tau_{j-1}))`` for ``tau_j = j / n_len``
    * barrier: ``sqrt(w12 / (n_esdf - 1)) * exp(-alpha (o_j - sigma) / 2)`` at the
      interior samples ``tau_j = j / n_esdf``; its square is the exponential
      barrier summand
    * smoothness: ``sqrt(w13) * c_k``
    * goal: ``sqrt(w14) * (p(1) - goal)``

All residuals are squared and summed by the solver, so the absolute-value
smoothness terms become a quadratic penalty on the same coefficients.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import solver as nlls
from .sdf import OutOfBoundsError
from .trajectory import (HIGH_ORDER_INDICES, LINEAR_INDICES, STATE_DIM, DegenerateInputError,
                         QuinticTrajectory, as_point, as_state, basis, chord_length_times,
                         position_jacobian, straight_line_state)

log = logging.getLogger(__name__)


class DegenerateWaypointsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    w01: float = 10.0
    w02: float = 1.0
    w11: float = 1.0
    w12: float = 3.0
    w13: float = 0.1
    w14: float = 10000.0
    alpha: float = 4.0
    sigma: float = 1.5
    n_len: int = 5
    n_esdf: int = 5
    iter_ini: int = 50
    iter_main: int = 30
    goal_tolerance: float = 1e-2
    duration_s: float = 2.0
    # start-velocity continuity residual; off unless w_start_vel > 0
    w_start_vel: float = 0.0
    safe_threshold: Optional[float] = None
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    cost_tol: float = 1e-8

    def __post_init__(self):
        for name in ("w01", "w02", "w11", "w12", "w13", "w14", "w_start_vel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.n_len < 1:
            raise ValueError("n_len must be >= 1")
        if self.n_esdf < 2:
            raise ValueError("n_esdf must be >= 2")
        if self.iter_ini < 1 or self.iter_main < 1:
            raise ValueError("iteration caps must be >= 1")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")

    @property
    def goal_safe_threshold(self) -> float:
        return self.sigma if self.safe_threshold is None else self.safe_threshold

    @property
    def tolerances(self) -> nlls.Tolerances:
        return nlls.Tolerances(self.gradient_tol, self.step_tol, self.cost_tol)

    def replace(self, **changes) -> PlannerConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> PlannerConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- residual blocks ----------------------------------------------------------

def waypoint_block(waypoints_local: np.ndarray, taus: np.ndarray, d: np.ndarray,
                   weight: float) -> nlls.ResidualBlock:
    s = np.sqrt(weight)
    A = position_jacobian(taus)                # (n, 3, 15)
    A_flat = s * A.reshape(-1, STATE_DIM)
    target = (waypoints_local - d).reshape(-1)
    return nlls.ResidualBlock(lambda c: A_flat @ c - s * target, lambda c: A_flat,
                              A_flat.shape[0], "waypoints")


def smoothness_block(weight: float, name: str = "smoothness") -> nlls.ResidualBlock:
    S = np.zeros((len(HIGH_ORDER_INDICES), STATE_DIM))
    S[np.arange(len(HIGH_ORDER_INDICES)), HIGH_ORDER_INDICES] = np.sqrt(weight)
    return nlls.ResidualBlock(lambda c: S @ c, lambda c: S, S.shape[0], name)


def length_block(n_len: int, weight: float) -> nlls.ResidualBlock:
    taus = np.arange(n_len + 1) / n_len
    A = position_jacobian(taus)
    D = np.sqrt(weight) * (A[1:] - A[:-1]).reshape(-1, STATE_DIM)
    # constant terms cancel in consecutive differences
    return nlls.ResidualBlock(lambda c: D @ c, lambda c: D, D.shape[0], "length")


def goal_block(goal_local, d, weight: float) -> nlls.ResidualBlock:
    s = np.sqrt(weight)
    A = s * position_jacobian(1.0)
    target = s * (as_point(goal_local) - d)
    return nlls.ResidualBlock(lambda c: A @ c - target, lambda c: A, 3, "goal")


def start_velocity_block(velocity, duration_s: float, weight: float) -> nlls.ResidualBlock:
    """``sqrt(w) * (p'(0) - v0)`` in real time; p'(0) is the linear terms / duration."""
    s = np.sqrt(weight)
    A = np.zeros((3, STATE_DIM))
    A[np.arange(3), LINEAR_INDICES] = s / duration_s
    target = s * as_point(velocity)
    return nlls.ResidualBlock(lambda c: A @ c - target, lambda c: A, 3, "start_velocity")


def barrier_taus(n_esdf: int) -> np.ndarray:
    return np.arange(1, n_esdf) / n_esdf


class BarrierBlock(nlls.ResidualBlock):
    """Exponential clearance barrier at the interior samples.

    Distance samples are cached per state.  :meth:`refresh` (registered as
    the solver's pre-evaluation hook) queries the provider once per new
    state with one batch call; residual and Jacobian evaluations at a
    state that was not refreshed trigger a refresh themselves so the block
    stays correct when used outside the solver.
    """

    def __init__(self, provider, d, n_esdf: int, weight: float, alpha: float, sigma: float):
        self.provider = provider
        self.d = as_point(d)
        self.taus = barrier_taus(n_esdf)
        self.scale = np.sqrt(weight / (n_esdf - 1))
        self.alpha = alpha
        self.sigma = sigma
        self._B = position_jacobian(self.taus)      # (m, 3, 15)
        self._state = None
        self.distances = None
        self.gradients = None
        self.query_count = 0
        self.clamped = False
        super().__init__(self._residual, self._jacobian, len(self.taus), "barrier")

    def points(self, c) -> np.ndarray:
        return basis(self.taus) @ np.asarray(c).reshape(3, 5).T + self.d

    def refresh(self, c) -> None:
        c = np.array(c, dtype=float)
        if self._state is not None and np.array_equal(c, self._state):
            return
        pts = self.points(c)
        try:
            samples = self.provider.eval_batch(pts)
        except OutOfBoundsError:
            lo, hi = self.provider.bounds
            samples = self.provider.eval_batch(np.clip(pts, lo, hi))
            if not self.clamped:
                log.warning("barrier samples left the distance field bounds; queries clamped")
            self.clamped = True
        self.distances = np.array([s.distance for s in samples])
        self.gradients = np.array([s.gradient for s in samples]).reshape(-1, 3)
        self._state = c
        self.query_count += 1

    def _residual(self, c):
        self.refresh(c)
        return self.scale * np.exp(-self.alpha * (self.distances - self.sigma) / 2)

    def _jacobian(self, c):
        r = self._residual(c)
        # d r_j / d c = r_j * (-alpha/2) * grad o_j . d p_j / d c
        dodc = np.einsum("mi,mik->mk", self.gradients, self._B)
        return (r * (-self.alpha / 2))[:, None] * dodc


# -- stages -------------------------------------------------------------------

@dataclass
class StageResult:
    state: np.ndarray
    report: Optional[nlls.SolveReport]
    degenerate: bool = False


def initial_optimize(waypoints_local: Sequence, start_local, goal_local, config: PlannerConfig,
                     solve=nlls.solve, trace_stream=None) -> StageResult:
    """Fit the trajectory to the window's waypoints starting from a straight line.

    ``waypoints_local`` should run from the start to the goal.  Degenerate
    input (fewer than two distinct points) returns the straight line with
    ``degenerate=True`` and a warning.
    """
    d = as_point(start_local)
    c0 = straight_line_state(d, goal_local)
    try:
        taus = chord_length_times(waypoints_local)
    except DegenerateInputError as exc:
        warnings.warn(f"initial stage skipped: {exc}", DegenerateWaypointsWarning, stacklevel=2)
        return StageResult(c0, None, degenerate=True)
    pts = np.array([as_point(w) for w in waypoints_local])
    blocks = [waypoint_block(pts[1:], taus[1:], d, config.w01), smoothness_block(config.w02)]
    rep = solve(blocks, c0, config.iter_ini, None, config.tolerances, trace_stream=trace_stream)
    return StageResult(rep.final_state, rep)


@dataclass
class MainResult:
    state: np.ndarray
    report: nlls.SolveReport
    clearances: np.ndarray      # o_j at the final state, interior samples
    queries: int
    clamped: bool


def main_blocks(provider, d, goal_local, config: PlannerConfig, start_velocity=None):
    barrier = BarrierBlock(provider, d, config.n_esdf, config.w12, config.alpha, config.sigma)
    blocks = [
        length_block(config.n_len, config.w11),
        barrier,
        smoothness_block(config.w13),
        goal_block(goal_local, as_point(d), config.w14),
    ]
    if config.w_start_vel > 0 and start_velocity is not None:
        blocks.append(start_velocity_block(start_velocity, config.duration_s, config.w_start_vel))
    return blocks, barrier


def main_optimize(init_state, provider, goal_local, config: PlannerConfig, solve=nlls.solve,
                  d=(0.0, 0.0, 0.0), start_velocity=None, trace_stream=None) -> MainResult:
    """Refine ``init_state`` for length, clearance, smoothness and goal reach."""
    c0 = as_state(init_state)
    blocks, barrier = main_blocks(provider, d, goal_local, config, start_velocity)
    rep = solve(blocks, c0, config.iter_main, barrier.refresh, config.tolerances,
                trace_stream=trace_stream)
    queries = barrier.query_count
    # the last refresh may belong to a rejected trial state
    barrier.refresh(rep.final_state)
    return MainResult(rep.final_state, rep, barrier.distances.copy(), queries, barrier.clamped)


def total_cost(state, provider, goal_local, config: PlannerConfig, d=(0.0, 0.0, 0.0)) -> dict:
    """Each main-stage component evaluated directly from its formula."""
    traj = QuinticTrajectory(as_state(state), as_point(d), config.duration_s)
    pts = traj.sample(config.n_len)
    f11 = config.w11 * float(np.sum(np.diff(pts, axis=0) ** 2))
    inner = traj.positions(barrier_taus(config.n_esdf))
    o = np.array([s.distance for s in provider.eval_batch(inner)])
    f12 = config.w12 / (config.n_esdf - 1) * float(np.sum(np.exp(-config.alpha * (o - config.sigma))))
    f13 = config.w13 * float(np.sum(traj.state[list(HIGH_ORDER_INDICES)] ** 2))
    f14 = config.w14 * float(np.sum((traj.evaluate(1.0) - as_point(goal_local)) ** 2))
    return {"f11": f11, "f12": f12, "f13": f13, "f14": f14, "total": f11 + f12 + f13 + f14}
