"""Quintic polynomial trajectories over normalized time.

A trajectory is three fifth-order polynomials, one per axis, evaluated on
``tau in [0, 1]`` with ``tau = t / duration_s``.  The 15 non-constant
coefficients form the optimization state; the three constant terms ``d``
are fixed by the local frame (the drone position).

State layout (per axis, highest power first)::

    x(tau) = c0  tau^5 + c1  tau^4 + c2  tau^3 + c3  tau^2 + c4  tau + d0
    y(tau) = c5  tau^5 + ...                                + c9  tau + d1
    z(tau) = c10 tau^5 + ...                                + c14 tau + d2
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

STATE_DIM = 15
# indices of the linear-term coefficient per axis
LINEAR_INDICES = (4, 9, 14)
# tau^5..tau^2 coefficients; the smoothness terms act on exactly these
HIGH_ORDER_INDICES = (0, 1, 2, 3, 5, 6, 7, 8, 10, 11, 12, 13)


class DegenerateInputError(ValueError):
    """Raised when waypoint input cannot define a time allocation."""


def as_state(c) -> np.ndarray:
    """Validate and return a float copy of a 15-entry state vector."""
    arr = np.array(c, dtype=float).reshape(-1)
    if arr.shape != (STATE_DIM,):
        raise ValueError(f"state vector must have {STATE_DIM} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state vector contains non-finite entries")
    return arr


def as_point(p) -> np.ndarray:
    arr = np.array(p, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3D point, got shape {np.shape(p)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point contains non-finite coordinates")
    return arr


def _check_tau(tau):
    t = np.asarray(tau, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"tau must lie in [0, 1], got {tau!r}")
    return t


def basis(tau) -> np.ndarray:
    """Per-axis basis ``[tau^5, tau^4, tau^3, tau^2, tau]``.

    Scalar ``tau`` gives shape (5,); an array of taus gives (n, 5).
    """
    t = np.asarray(tau, dtype=float)
    return np.stack([t**5, t**4, t**3, t**2, t], axis=-1)


def basis_derivative(tau, order: int) -> np.ndarray:
    """``d^order/dtau^order`` of :func:`basis`."""
    t = np.asarray(tau, dtype=float)
    powers = np.array([5, 4, 3, 2, 1])
    cols = []
    for p in powers:
        if order > p:
            cols.append(np.zeros_like(t))
        else:
            coef = math.perm(int(p), order)
            cols.append(coef * t ** (p - order))
    return np.stack(cols, axis=-1)


def position_jacobian(tau) -> np.ndarray:
    """d position / d state at ``tau``: block-diagonal (3, 15), or (n, 3, 15)."""
    b = basis(tau)
    out = np.zeros(b.shape[:-1] + (3, STATE_DIM))
    for axis in range(3):
        out[..., axis, 5 * axis:5 * axis + 5] = b
    return out


@dataclass(frozen=True, eq=False)
class QuinticTrajectory:
    """Immutable quintic trajectory in a frame where ``position(0) == d``."""

    state: np.ndarray
    d: np.ndarray
    duration_s: float = 2.0

    def __post_init__(self):
        state = as_state(self.state)
        d = as_point(self.d)
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        state.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "duration_s", float(self.duration_s))

    @property
    def coefficients(self) -> np.ndarray:
        """State reshaped to (3 axes, 5 powers)."""
        return self.state.reshape(3, 5)

    def positions(self, taus) -> np.ndarray:
        """Vectorized evaluation; returns (n, 3)."""
        t = _check_tau(taus).reshape(-1)
        return basis(t) @ self.coefficients.T + self.d

    def evaluate(self, tau: float) -> np.ndarray:
        t = float(_check_tau(tau))
        return self.coefficients @ basis(t) + self.d

    def derivative(self, tau: float, order: int) -> np.ndarray:
        """Real-time derivative of the given order (m/s, m/s^2, m/s^3)."""
        if order not in (1, 2, 3):
            raise ValueError(f"derivative order must be 1, 2 or 3, got {order}")
        t = float(_check_tau(tau))
        return self.coefficients @ basis_derivative(t, order) / self.duration_s**order

    def sample(self, n: int) -> np.ndarray:
        """``n + 1`` points at ``tau_j = j / n``, endpoints included."""
        if int(n) != n or n < 1:
            raise ValueError(f"sample count must be >= 1, got {n}")
        return self.positions(np.arange(n + 1) / n)

    def chord_length(self, n: int) -> float:
        pts = self.sample(n)
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def shifted(self, offset) -> QuinticTrajectory:
        """Same polynomial with the constant terms translated by ``offset``."""
        return QuinticTrajectory(self.state, self.d + as_point(offset), self.duration_s)


def evaluate(traj: QuinticTrajectory, tau: float) -> np.ndarray:
    return traj.evaluate(tau)


def derivative(traj: QuinticTrajectory, tau: float, order: int) -> np.ndarray:
    return traj.derivative(tau, order)


def sample(traj: QuinticTrajectory, n: int) -> np.ndarray:
    return traj.sample(n)


def chord_length(traj: QuinticTrajectory, n: int) -> float:
    return traj.chord_length(n)


def straight_line_state(start_local, goal_local) -> np.ndarray:
    """Initial state: straight line from ``start_local`` (= d) to the goal at tau=1."""
    delta = as_point(goal_local) - as_point(start_local)
    c = np.zeros(STATE_DIM)
    c[list(LINEAR_INDICES)] = delta
    return c


def chord_length_times(waypoints: Sequence) -> np.ndarray:
    """Assign normalized times to waypoints assuming constant speed along them."""
    pts = np.array([as_point(w) for w in waypoints]) if len(waypoints) else np.empty((0, 3))
    if len(pts) < 2:
        raise DegenerateInputError(f"need at least 2 waypoints, got {len(pts)}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    if not total > 0:
        raise DegenerateInputError("waypoints have zero total chord length")
    taus = np.concatenate([[0.0], np.cumsum(seg) / total])
    taus[-1] = 1.0
    return taus


# -- export -----------------------------------------------------------------

def write_table(traj: QuinticTrajectory, stream: IO[str], n: int = 100) -> None:
    """Plain-text table of ``tau t x y z vx vy vz`` at ``n + 1`` samples."""
    stream.write("# tau t x y z vx vy vz\n")
    for j in range(n + 1):
        tau = j / n
        p = traj.evaluate(tau)
        v = traj.derivative(tau, 1)
        row = [tau, tau * traj.duration_s, *p, *v]
        stream.write(" ".join(f"{x:.9g}" for x in row) + "\n")


def to_record(traj: QuinticTrajectory) -> dict:
    """The 18 polynomial constants (15 state + 3 constant terms) and duration."""
    return {
        "format": "quintic-trajectory",
        "version": 1,
        "duration_s": traj.duration_s,
        "state": [float(x) for x in traj.state],
        "d": [float(x) for x in traj.d],
    }


def from_record(record: dict) -> QuinticTrajectory:
    if record.get("format") != "quintic-trajectory":
        raise ValueError("not a quintic-trajectory record")
    return QuinticTrajectory(np.array(record["state"]), np.array(record["d"]), record["duration_s"])


def dumps(traj: QuinticTrajectory) -> str:
    return json.dumps(to_record(traj), indent=2)


def loads(text: str) -> QuinticTrajectory:
    return from_record(json.loads(text))
