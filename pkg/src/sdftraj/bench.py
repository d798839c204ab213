"""Experiment runner: parameter sweeps, provider comparisons, metrics tables."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .costs import PlannerConfig
from .planner import GlobalPath, LocalWindow, PlanningError, plan_once, trajectory_metrics
from .scenes import get_fixture
from .sdf import AnalyticScene, SdfError, build_grid, load_scene
from .siren import load_siren

log = logging.getLogger(__name__)

BUILTIN_PREFIX = "builtin:"


@dataclass
class ExperimentSpec:
    scene: str = "builtin:scenario1"
    path: Optional[list] = None
    start: Optional[list] = None
    window: Optional[list] = None          # half extents
    config: dict = field(default_factory=dict)
    iter_ini: list = field(default_factory=lambda: [50])
    iter_main: list = field(default_factory=lambda: [30])
    n_esdf: list = field(default_factory=lambda: [5])
    sigma: list = field(default_factory=lambda: [1.5])
    provider: str = "analytic"             # analytic | grid | siren
    voxel_size: float = 0.1
    weights: Optional[str] = None
    repetitions: int = 1
    seed: int = 0
    jitter: Optional[float] = None         # start-pose jitter per repetition (m)
    workers: int = 1

    def __post_init__(self):
        for axis in ("iter_ini", "iter_main", "n_esdf", "sigma"):
            if not getattr(self, axis):
                raise ValueError(f"sweep axis {axis} must be nonempty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.provider not in ("analytic", "grid", "siren"):
            raise ValueError(f"unknown provider kind {self.provider!r}")

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentSpec:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> ExperimentSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Setup:
    """Everything resolved from a spec except the provider."""

    scene: AnalyticScene
    path: GlobalPath
    start: np.ndarray
    window: LocalWindow
    base_config: dict
    jitter: float


def resolve(spec: ExperimentSpec) -> Setup:
    if spec.scene.startswith(BUILTIN_PREFIX):
        fx = get_fixture(spec.scene[len(BUILTIN_PREFIX):])
        scene, path, start, window = fx.scene, fx.path, np.asarray(fx.start), fx.window
        base, jitter = dict(fx.config), fx.jitter
    else:
        scene = load_scene(spec.scene)
        if spec.path is None:
            raise ValueError("a scene file needs an inline global path")
        path = GlobalPath(np.asarray(spec.path, dtype=float))
        start, window, base, jitter = path.waypoints[0].copy(), LocalWindow(), {}, 0.0
    if spec.path is not None:
        path = GlobalPath(np.asarray(spec.path, dtype=float))
    if spec.start is not None:
        start = np.asarray(spec.start, dtype=float)
    if spec.window is not None:
        window = LocalWindow(tuple(spec.window))
    if spec.jitter is not None:
        jitter = spec.jitter
    base.update(spec.config)
    return Setup(scene, path, start, window, base, float(jitter))


def make_provider(kind: str, scene: AnalyticScene, voxel_size: float = 0.1, weights=None):
    if kind == "analytic":
        return scene
    if kind == "grid":
        return build_grid(scene, voxel_size)
    if kind == "siren":
        if weights is None:
            raise FileNotFoundError("siren provider needs a weight file")
        return load_siren(weights)
    raise ValueError(f"unknown provider kind {kind!r}")


@dataclass
class MetricsRow:
    iter_ini: int
    iter_main: int
    n_esdf: int
    time_mean_ms: float = float("nan")
    time_min_ms: float = float("nan")
    time_max_ms: float = float("nan")
    clearance_mean: float = float("nan")
    clearance_min: float = float("nan")
    path_length: float = float("nan")
    sigma: float = 1.5
    provider: str = "analytic"
    main_iterations: float = float("nan")
    goal_error_max: float = float("nan")
    failures: int = 0
    error: str = ""

    def check(self) -> bool:
        """Row invariants: min <= mean <= max for times, min <= mean clearance."""
        if self.error:
            return True
        return (self.time_min_ms <= self.time_mean_ms <= self.time_max_ms
                and self.clearance_min <= self.clearance_mean + 1e-12)

    def deterministic(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("time_mean_ms", "time_min_ms", "time_max_ms"):
            d.pop(k)
        return d


def repetition_offsets(seed: int, repetitions: int, jitter: float) -> np.ndarray:
    """Start-pose offsets, one per repetition; the same for every sweep point."""
    rng = np.random.default_rng(seed)
    off = np.zeros((repetitions, 3))
    off[:, :2] = rng.uniform(-jitter, jitter, size=(repetitions, 2))
    return off


def run_point(setup: Setup, provider, config: PlannerConfig, offsets, *, provider_name="analytic",
              skip_initial=False, truth: Optional[AnalyticScene] = None):
    """Plan once per offset; returns (MetricsRow, reports)."""
    times, cmean, cmin, length, its, gerr, reports = [], [], [], [], [], [], []
    failures = 0
    for off in offsets:
        rep = plan_once(setup.path, setup.start + off, setup.window, provider, config,
                        skip_initial=skip_initial)
        reports.append(rep)
        if rep.failed:
            failures += 1
        if truth is not None:
            m_mean, m_min, _, _ = trajectory_metrics(rep.trajectory, truth)
        else:
            m_mean, m_min = rep.clearance_mean, rep.clearance_min
        times.append(rep.loop_time_s * 1000)
        cmean.append(m_mean)
        cmin.append(m_min)
        length.append(rep.path_length)
        its.append(rep.main.iterations_used if rep.main else np.nan)
        gerr.append(rep.goal_error)
    row = MetricsRow(config.iter_ini, config.iter_main, config.n_esdf,
                     float(np.mean(times)), float(np.min(times)), float(np.max(times)),
                     float(np.mean(cmean)), float(np.mean(cmin)), float(np.mean(length)),
                     config.sigma, provider_name, float(np.mean(its)), float(np.max(gerr)), failures)
    return row, reports


def sweep_points(spec: ExperimentSpec):
    return list(itertools.product(spec.iter_ini, spec.iter_main, spec.n_esdf, spec.sigma))


def run_experiment(spec: ExperimentSpec) -> list[MetricsRow]:
    """One aggregated row per point of the sweep cross product, in sweep order."""
    setup = resolve(spec)
    points = sweep_points(spec)
    try:
        provider = make_provider(spec.provider, setup.scene, spec.voxel_size, spec.weights)
    except (OSError, SdfError, ValueError) as exc:
        return [MetricsRow(a, b, c, sigma=s, provider=spec.provider, error=f"provider: {exc}")
                for a, b, c, s in points]
    offsets = repetition_offsets(spec.seed, spec.repetitions, setup.jitter)

    def one(point):
        a, b, c, s = point
        try:
            cfg = PlannerConfig.from_dict({**setup.base_config, "iter_ini": a, "iter_main": b,
                                           "n_esdf": c, "sigma": s})
            return run_point(setup, provider, cfg, offsets, provider_name=spec.provider)[0]
        except (PlanningError, SdfError, ValueError) as exc:
            return MetricsRow(a, b, c, sigma=s, provider=spec.provider, error=str(exc))

    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            return list(pool.map(one, points))
    return [one(p) for p in points]


@dataclass
class ProviderComparison:
    provider: str
    row: Optional[MetricsRow]
    true_clearance_mean: float = float("nan")
    true_clearance_min: float = float("nan")
    note: str = ""

    @property
    def clearance_min_delta(self) -> float:
        """Reported minus ground-truth minimum clearance."""
        return self.row.clearance_min - self.true_clearance_min if self.row else float("nan")


def compare_providers(spec: ExperimentSpec, kinds: Sequence[str] = ("analytic", "grid", "siren"),
                      mlp=None) -> list[ProviderComparison]:
    """Plan the same problem against each provider; re-score against the analytic scene.

    ``mlp`` supplies an in-memory network for the siren kind; otherwise
    ``spec.weights`` is loaded.  Providers that cannot be built are skipped
    with a note.
    """
    setup = resolve(spec)
    a, b, c, s = sweep_points(spec)[0]
    cfg = PlannerConfig.from_dict({**setup.base_config, "iter_ini": a, "iter_main": b,
                                   "n_esdf": c, "sigma": s})
    offsets = repetition_offsets(spec.seed, spec.repetitions, setup.jitter)
    out = []
    for kind in kinds:
        try:
            provider = mlp if (kind == "siren" and mlp is not None) else \
                make_provider(kind, setup.scene, spec.voxel_size, spec.weights)
        except (OSError, SdfError, ValueError) as exc:
            log.warning("skipping %s provider: %s", kind, exc)
            out.append(ProviderComparison(kind, None, note=f"skipped: {exc}"))
            continue
        try:
            row, reports = run_point(setup, provider, cfg, offsets, provider_name=kind)
        except (PlanningError, SdfError) as exc:
            out.append(ProviderComparison(kind, None, note=f"failed: {exc}"))
            continue
        truth = [trajectory_metrics(r.trajectory, setup.scene)[:2] for r in reports]
        out.append(ProviderComparison(kind, row, float(np.mean([t[0] for t in truth])),
                                      float(np.mean([t[1] for t in truth]))))
    return out


# -- tables -------------------------------------------------------------------

COLUMNS = ["iter_ini", "iter_main", "n_esdf", "time_mean_ms", "time_min_ms", "time_max_ms",
           "clearance_mean", "clearance_min", "path_length", "sigma", "provider",
           "main_iterations", "goal_error_max", "failures", "error"]
TIME_COLUMNS = {"time_mean_ms", "time_min_ms", "time_max_ms"}
_INT_COLUMNS = {"iter_ini", "iter_main", "n_esdf", "failures"}
_STR_COLUMNS = {"provider", "error"}


def _fmt(col, value, mask_times):
    if mask_times and col in TIME_COLUMNS:
        return "-"
    if col in _INT_COLUMNS or col in _STR_COLUMNS:
        return str(value)
    if col in TIME_COLUMNS:
        return f"{value:.1f}"
    if col == "goal_error_max":
        return f"{value:.3e}"
    return f"{value:.4f}"


def emit_table(rows: Sequence[MetricsRow], fmt: str = "text", *, mask_times: bool = False) -> str:
    """Render rows as aligned text or comma-separated values.

    Columns: iterations, sample count, loop time mean/min/max in ms,
    clearance mean/min in m, path length in m, then the extra columns.  ``mask_times`` replaces timings with ``-`` for
    golden-file comparisons.
    """
    cells = [[_fmt(c, getattr(r, c), mask_times) for c in COLUMNS] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(cells)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown table format {fmt!r}")
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(COLUMNS)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(COLUMNS, widths)).rstrip()]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list[MetricsRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {}
        for col in COLUMNS:
            v = rec[col]
            if col in _STR_COLUMNS:
                kw[col] = v
            elif col in _INT_COLUMNS:
                kw[col] = int(v)
            else:
                kw[col] = float("nan") if v == "-" else float(v)
        rows.append(MetricsRow(**kw))
    return rows


def comparison_table(results: Sequence[ProviderComparison]) -> str:
    lines = ["provider  clearance_min  true_clearance_min  delta_min  true_clearance_mean  note"]
    for r in results:
        if r.row is None:
            lines.append(f"{r.provider:>8}  {'-':>13}  {'-':>18}  {'-':>9}  {'-':>19}  {r.note}")
        else:
            lines.append(f"{r.provider:>8}  {r.row.clearance_min:13.4f}  {r.true_clearance_min:18.4f}  "
                         f"{r.clearance_min_delta:9.4f}  {r.true_clearance_mean:19.4f}  {r.note}")
    return "\n".join(lines) + "\n"
