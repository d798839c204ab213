"""Signed distance providers with analytic gradients.

Every provider answers ``eval(p) -> SdfSample`` and ``eval_batch(points)``
and exposes a vectorized ``distance_and_gradient(points)`` for bulk work
(grid construction, statistics).  Distances are in meters, positive in
free space.

Providers:

* :class:`AnalyticScene` -- exact union of spheres, boxes and capsules.
* :class:`GridSdf` -- trilinear interpolation of sampled values, the
  discrete baseline.
* :class:`sdftraj.siren.SirenMlp` -- sinusoidal MLP inference.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

DEFAULT_DISTANCE_CEILING = 100.0
DEFAULT_MAX_VOXELS = 20_000_000


class SdfError(Exception):
    pass


class OutOfBoundsError(SdfError):
    """Query point lies outside a bounded provider's domain."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ResourceError(SdfError):
    pass


class SceneFormatError(SdfError):
    pass


@dataclass(frozen=True, eq=False)
class SdfSample:
    distance: float
    gradient: np.ndarray

    def __repr__(self):
        g = ", ".join(f"{x:.4g}" for x in self.gradient)
        return f"SdfSample(distance={self.distance:.6g}, gradient=({g}))"


def _points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected points of shape (n, 3), got {np.shape(points)}")
    return arr


def _safe_normalize(v: np.ndarray, norm: np.ndarray) -> np.ndarray:
    # degenerate directions (exactly at a center/segment) get +x
    out = np.zeros_like(v)
    ok = norm > 0
    out[ok] = v[ok] / norm[ok, None]
    out[~ok] = (1.0, 0.0, 0.0)
    return out


class SdfProvider:
    """Shared eval/eval_batch plumbing on top of ``distance_and_gradient``.

    ``workers > 1`` fans a batch out over a thread pool.  Each point is
    still evaluated through :meth:`eval`, so batch results are identical
    to per-point calls.
    """

    workers: int = 1
    bounds = None

    def distance_and_gradient(self, points) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def eval(self, p) -> SdfSample:
        d, g = self.distance_and_gradient(_points(p))
        return SdfSample(float(d[0]), g[0])

    def eval_batch(self, points) -> list[SdfSample]:
        pts = _points(points) if len(points) else np.empty((0, 3))

        def one(i):
            try:
                return self.eval(pts[i])
            except OutOfBoundsError as exc:
                raise OutOfBoundsError(f"point {i}: {exc}", index=i) from exc

        if self.workers > 1 and len(pts) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(one, range(len(pts))))
        return [one(i) for i in range(len(pts))]


# -- primitives ---------------------------------------------------------------

@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be > 0")

    def sdf(self, p):
        v = p - np.asarray(self.center, dtype=float)
        n = np.linalg.norm(v, axis=1)
        return n - self.radius, _safe_normalize(v, n)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box between ``min_corner`` and ``max_corner``."""

    min_corner: tuple
    max_corner: tuple

    def __post_init__(self):
        if not np.all(np.asarray(self.min_corner, float) < np.asarray(self.max_corner, float)):
            raise ValueError("box min corner must be < max corner componentwise")

    def sdf(self, p):
        lo = np.asarray(self.min_corner, dtype=float)
        hi = np.asarray(self.max_corner, dtype=float)
        center, half = (lo + hi) / 2, (hi - lo) / 2
        rel = p - center
        q = np.abs(rel) - half
        sign = np.where(rel >= 0, 1.0, -1.0)
        outer = np.maximum(q, 0.0)
        outer_norm = np.linalg.norm(outer, axis=1)
        inside = outer_norm == 0
        dist = np.where(inside, q.max(axis=1), outer_norm)
        grad = np.zeros_like(p)
        out = ~inside
        grad[out] = sign[out] * outer[out] / outer_norm[out, None]
        if np.any(inside):
            axis = np.argmax(q[inside], axis=1)
            gi = np.zeros((int(inside.sum()), 3))
            gi[np.arange(len(axis)), axis] = sign[inside][np.arange(len(axis)), axis]
            grad[inside] = gi
        return dist, grad


@dataclass(frozen=True)
class Capsule:
    a: tuple
    b: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be > 0")

    def sdf(self, p):
        a = np.asarray(self.a, dtype=float)
        ba = np.asarray(self.b, dtype=float) - a
        pa = p - a
        denom = float(ba @ ba)
        h = np.clip(pa @ ba / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(p))
        v = pa - h[:, None] * ba
        n = np.linalg.norm(v, axis=1)
        return n - self.radius, _safe_normalize(v, n)


Primitive = Union[Sphere, Box, Capsule]


class AnalyticScene(SdfProvider):
    """Exact signed distance to a union of primitives.

    The union is a plain ``min``; on ties the first primitive in list order
    supplies the gradient.  An empty scene reports ``distance_ceiling``
    with zero gradient everywhere, and so does any point farther than the
    ceiling.
    """

    def __init__(self, primitives: Sequence[Primitive], bounds, *,
                 distance_ceiling: float = DEFAULT_DISTANCE_CEILING, workers: int = 1):
        lo, hi = (np.asarray(b, dtype=float).reshape(3) for b in bounds)
        if not np.all(lo < hi):
            raise ValueError("scene bounds must be nonempty")
        self.primitives = tuple(primitives)
        self.bounds = (lo, hi)
        self.distance_ceiling = float(distance_ceiling)
        self.workers = workers

    def __repr__(self):
        return f"AnalyticScene({len(self.primitives)} primitives, bounds={self.bounds[0].tolist()}..{self.bounds[1].tolist()})"

    def distance_and_gradient(self, points):
        p = _points(points)
        dist = np.full(len(p), self.distance_ceiling)
        grad = np.zeros((len(p), 3))
        for prim in self.primitives:
            d, g = prim.sdf(p)
            closer = d < dist
            dist = np.where(closer, d, dist)
            grad[closer] = g[closer]
        return dist, grad

    def with_primitives(self, extra: Sequence[Primitive]) -> AnalyticScene:
        return AnalyticScene(self.primitives + tuple(extra), self.bounds,
                             distance_ceiling=self.distance_ceiling, workers=self.workers)


class GridSdf(SdfProvider):
    """Trilinear interpolation of SDF values on a regular lattice.

    Node ``(i, j, k)`` sits at ``origin + (i, j, k) * voxel_size``.  The
    gradient is the exact derivative of the interpolant.  Queries outside
    the lattice raise :class:`OutOfBoundsError`; nothing is clamped.
    """

    def __init__(self, origin, voxel_size: float, values: np.ndarray, *, workers: int = 1):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if not voxel_size > 0:
            raise ValueError("voxel_size must be > 0")
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.voxel_size = float(voxel_size)
        self.values = values
        self.values.setflags(write=False)
        self.dims = values.shape
        self.bounds = (self.origin.copy(), self.origin + (np.array(self.dims) - 1) * self.voxel_size)
        self.workers = workers

    def __repr__(self):
        return f"GridSdf(dims={self.dims}, voxel_size={self.voxel_size})"

    def node_position(self, ijk) -> np.ndarray:
        return self.origin + np.asarray(ijk, dtype=float) * self.voxel_size

    def distance_and_gradient(self, points):
        p = _points(points)
        u = (p - self.origin) / self.voxel_size
        upper = np.array(self.dims, dtype=float) - 1
        eps = 1e-9
        bad = np.any((u < -eps) | (u > upper + eps), axis=1)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise OutOfBoundsError(f"{p[i].tolist()} outside grid bounds", index=i)
        u = np.clip(u, 0.0, upper)
        i0 = np.minimum(np.floor(u).astype(int), np.array(self.dims) - 2)
        f = u - i0
        v = self.values
        ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
        c = np.empty((len(p), 2, 2, 2))
        for a in (0, 1):
            for b in (0, 1):
                for e in (0, 1):
                    c[:, a, b, e] = v[ix + a, iy + b, iz + e]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        # collapse along z, then y, then x
        cz = c[..., 0] * (1 - fz)[:, None, None] + c[..., 1] * fz[:, None, None]
        dcz = c[..., 1] - c[..., 0]
        cy = cz[:, :, 0] * (1 - fy)[:, None] + cz[:, :, 1] * fy[:, None]
        dcy_dz = dcz[:, :, 0] * (1 - fy)[:, None] + dcz[:, :, 1] * fy[:, None]
        dcy_dy = cz[:, :, 1] - cz[:, :, 0]
        dist = cy[:, 0] * (1 - fx) + cy[:, 1] * fx
        gx = cy[:, 1] - cy[:, 0]
        gy = dcy_dy[:, 0] * (1 - fx) + dcy_dy[:, 1] * fx
        gz = dcy_dz[:, 0] * (1 - fx) + dcy_dz[:, 1] * fx
        grad = np.stack([gx, gy, gz], axis=1) / self.voxel_size
        return dist, grad


def build_grid(scene: AnalyticScene, voxel_size: float, *,
               max_voxels: int = DEFAULT_MAX_VOXELS) -> GridSdf:
    """Sample ``scene`` on a lattice covering its bounds."""
    if not voxel_size > 0:
        raise ValueError("voxel_size must be > 0")
    lo, hi = scene.bounds
    dims = np.ceil((hi - lo) / voxel_size - 1e-9).astype(int) + 1
    dims = np.maximum(dims, 2)
    count = int(np.prod(dims))
    if count > max_voxels:
        raise ResourceError(f"grid of {dims.tolist()} = {count} voxels exceeds ceiling {max_voxels}")
    axes = [lo[k] + np.arange(dims[k]) * voxel_size for k in range(3)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.empty(len(mesh))
    chunk = 200_000
    for s in range(0, len(mesh), chunk):
        values[s:s + chunk] = scene.distance_and_gradient(mesh[s:s + chunk])[0]
    return GridSdf(lo, voxel_size, values.reshape(tuple(dims)), workers=scene.workers)


# -- scene files ----------------------------------------------------------------

def _primitive_to_dict(prim: Primitive) -> dict:
    if isinstance(prim, Sphere):
        return {"type": "sphere", "center": list(map(float, prim.center)), "radius": float(prim.radius)}
    if isinstance(prim, Box):
        return {"type": "box", "min": list(map(float, prim.min_corner)), "max": list(map(float, prim.max_corner))}
    if isinstance(prim, Capsule):
        return {"type": "capsule", "a": list(map(float, prim.a)), "b": list(map(float, prim.b)),
                "radius": float(prim.radius)}
    raise TypeError(f"unknown primitive {prim!r}")


def _primitive_from_dict(d: dict) -> Primitive:
    kind = d.get("type")
    try:
        if kind == "sphere":
            return Sphere(tuple(d["center"]), float(d["radius"]))
        if kind == "box":
            return Box(tuple(d["min"]), tuple(d["max"]))
        if kind == "capsule":
            return Capsule(tuple(d["a"]), tuple(d["b"]), float(d["radius"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"bad {kind} primitive {d!r}: {exc}") from exc
    raise SceneFormatError(f"unknown primitive type {kind!r}")


def scene_to_dict(scene: AnalyticScene) -> dict:
    lo, hi = scene.bounds
    return {
        "units": "m",
        "bounds": {"min": lo.tolist(), "max": hi.tolist()},
        "distance_ceiling": scene.distance_ceiling,
        "primitives": [_primitive_to_dict(p) for p in scene.primitives],
    }


def scene_from_dict(data: dict) -> AnalyticScene:
    if data.get("units", "m") != "m":
        raise SceneFormatError(f"scene units must be meters, got {data.get('units')!r}")
    try:
        bounds = (data["bounds"]["min"], data["bounds"]["max"])
    except (KeyError, TypeError) as exc:
        raise SceneFormatError("scene needs bounds.min and bounds.max") from exc
    prims = [_primitive_from_dict(p) for p in data.get("primitives", [])]
    return AnalyticScene(prims, bounds,
                         distance_ceiling=data.get("distance_ceiling", DEFAULT_DISTANCE_CEILING))


def save_scene(scene: AnalyticScene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")


def load_scene(path) -> AnalyticScene:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: {exc}") from exc
    return scene_from_dict(data)


__all__ = [
    "AnalyticScene", "Box", "Capsule", "GridSdf", "OutOfBoundsError", "ResourceError",
    "SceneFormatError", "SdfError", "SdfProvider", "SdfSample", "Sphere", "build_grid",
    "load_scene", "save_scene", "scene_from_dict", "scene_to_dict",
]
