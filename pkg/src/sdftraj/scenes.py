"""Bundled benchmark fixtures.

These are desk-scale stand-ins for the building scenes used in the original
experiments, whose geometry is not published:

``scenario1``
    one sphere (r = 0.5 m) midway between the drone and the local goal,
    0.2 m off the global path, inside a 9 m wide corridor of boxes.
``scenario2``
    two adjacent spheres (r = 0.5 m) offset to opposite sides of the path.
``doorway``
    a wall across the corridor with a 1.6 m opening 0.9 m off-axis; the
    global path bends through the opening.  Used for the iteration-cap and
    sample-count comparisons.

All fixtures use a local window of 10 x 6 x 3.2 m (half extents 5, 3, 1.6)
so the local goal is 5 m ahead, and a goal safety threshold of 0.5 m so the
local goal does not move when sigma is swept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .planner import GlobalPath, LocalWindow
from .sdf import AnalyticScene, Box, Sphere

CRUISE_Z = 1.5
WAYPOINT_SPACING = 0.25


@dataclass(frozen=True)
class Fixture:
    name: str
    scene: AnalyticScene
    path: GlobalPath
    start: tuple
    window: LocalWindow
    config: dict = field(default_factory=dict)
    jitter: float = 0.0
    description: str = ""


def polyline(knots, spacing: float = WAYPOINT_SPACING) -> np.ndarray:
    """Resample a polyline so consecutive waypoints are at most ``spacing`` apart."""
    knots = np.asarray(knots, dtype=float)
    pts = []
    for a, b in zip(knots[:-1], knots[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
        pts.extend(a + (b - a) * k / n for k in range(n))
    pts.append(knots[-1])
    return np.array(pts)


def _corridor():
    return [Box((-2.0, 4.5, 0.0), (11.0, 5.0, 3.2)), Box((-2.0, -5.0, 0.0), (11.0, -4.5, 3.2))]


BOUNDS = ((-1.5, -4.5, -0.5), (9.5, 4.5, 3.5))
WINDOW = LocalWindow((5.0, 3.0, 1.6))
BENCH_CONFIG = {"safe_threshold": 0.5}
STRAIGHT = polyline([(0.0, 0.0, CRUISE_Z), (8.0, 0.0, CRUISE_Z)])


def scenario1() -> Fixture:
    scene = AnalyticScene([Sphere((2.5, 0.2, CRUISE_Z), 0.5)] + _corridor(), BOUNDS)
    return Fixture("scenario1", scene, GlobalPath(STRAIGHT), (0.0, 0.0, CRUISE_Z), WINDOW,
                   dict(BENCH_CONFIG), description="one unmapped sphere midway in a corridor")


def scenario2() -> Fixture:
    obstacles = [Sphere((2.2, -0.1, CRUISE_Z), 0.5), Sphere((2.9, 0.5, CRUISE_Z), 0.5)]
    scene = AnalyticScene(obstacles + _corridor(), BOUNDS)
    return Fixture("scenario2", scene, GlobalPath(STRAIGHT), (0.0, 0.0, CRUISE_Z), WINDOW,
                   dict(BENCH_CONFIG), description="two offset unmapped spheres in a corridor")


def doorway() -> Fixture:
    wall_x, door_y, half_width = 2.5, 0.9, 0.8
    walls = [
        Box((wall_x - 0.2, -4.0, 0.0), (wall_x + 0.2, door_y - half_width, 3.2)),
        Box((wall_x - 0.2, door_y + half_width, 0.0), (wall_x + 0.2, 4.0, 3.2)),
    ]
    path = polyline([(0.0, 0.0, CRUISE_Z), (wall_x, door_y, CRUISE_Z),
                     (2 * wall_x, 0.0, CRUISE_Z), (8.0, 0.0, CRUISE_Z)])
    scene = AnalyticScene(walls + _corridor(), BOUNDS)
    return Fixture("doorway", scene, GlobalPath(path), (0.0, 0.0, CRUISE_Z), WINDOW,
                   dict(BENCH_CONFIG), jitter=0.1,
                   description="wall with an off-axis opening; global path threads it")


def empty() -> Fixture:
    scene = AnalyticScene([], BOUNDS)
    return Fixture("empty", scene, GlobalPath(STRAIGHT), (0.0, 0.0, CRUISE_Z), WINDOW,
                   dict(BENCH_CONFIG), description="no obstacles")


FIXTURES = {"scenario1": scenario1, "scenario2": scenario2, "doorway": doorway, "empty": empty}


def get_fixture(name: str) -> Fixture:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
