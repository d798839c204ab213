"""Command-line entry point: ``plan``, ``sweep``, ``compare`` and ``fit``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import trajectory
from .bench import (ExperimentSpec, comparison_table, compare_providers, emit_table,
                    make_provider, repetition_offsets, resolve, run_experiment)
from .costs import PlannerConfig
from .planner import PlanningError, plan_once
from .sdf import SdfError
from .siren import fit_siren, save_siren

log = logging.getLogger("sdftraj")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="experiment file (JSON) whose fields seed the defaults")
    p.add_argument("--scene", help="scene JSON file or builtin:<name> "
                                   "(scenario1, scenario2, doorway, empty)")
    p.add_argument("--path", help="global path as JSON list of [x, y, z] or a JSON file")
    p.add_argument("--start", type=_floats, help="start pose x,y,z")
    p.add_argument("--window", type=_floats, help="window half extents x,y,z (m)")
    p.add_argument("--config", help="planner config file (JSON)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="planner config override, repeatable")
    p.add_argument("--iter-ini", type=_ints)
    p.add_argument("--iter-main", type=_ints)
    p.add_argument("--n-esdf", type=_ints)
    p.add_argument("--sigma", type=_floats)
    p.add_argument("--provider", choices=["analytic", "grid", "siren"])
    p.add_argument("--voxel-size", type=float)
    p.add_argument("--weights", help="SIREN weight file")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jitter", type=float, help="start-pose jitter per repetition (m)")
    p.add_argument("--workers", type=int)


def spec_from_args(args) -> ExperimentSpec:
    data = json.loads(Path(args.spec).read_text()) if args.spec else {}
    config = dict(data.get("config", {}))
    if args.config:
        config.update(json.loads(Path(args.config).read_text()))
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        config[key.strip()] = _value(val)
    PlannerConfig.from_dict(config)          # fail early on unknown keys
    data["config"] = config
    if args.path:
        src = Path(args.path)
        data["path"] = json.loads(src.read_text() if src.is_file() else args.path)
    for name in ("scene", "start", "window", "iter_ini", "iter_main", "n_esdf", "sigma",
                 "provider", "voxel_size", "weights", "repetitions", "seed", "jitter", "workers"):
        val = getattr(args, name)
        if val is not None:
            data[name] = val
    return ExperimentSpec.from_dict(data)


def cmd_plan(args) -> int:
    spec = spec_from_args(args)
    setup = resolve(spec)
    provider = make_provider(spec.provider, setup.scene, spec.voxel_size, spec.weights)
    cfg = PlannerConfig.from_dict({**setup.base_config, "iter_ini": spec.iter_ini[0],
                                   "iter_main": spec.iter_main[0], "n_esdf": spec.n_esdf[0],
                                   "sigma": spec.sigma[0]})
    off = repetition_offsets(spec.seed, 1, setup.jitter)[0]
    rep = plan_once(setup.path, setup.start + off, setup.window, provider, cfg)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w")
    try:
        if args.format == "json":
            out.write(trajectory.dumps(rep.trajectory) + "\n")
        else:
            trajectory.write_table(rep.trajectory, out, args.samples)
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"local goal {np.round(rep.local_goal, 4).tolist()}  goal error {rep.goal_error:.2e} m  "
          f"clearance mean {rep.clearance_mean:.3f} min {rep.clearance_min:.3f} m  "
          f"length {rep.path_length:.3f} m  time {rep.loop_time_s * 1000:.1f} ms"
          + (f"  FAILED: {rep.message}" if rep.failed else ""), file=sys.stderr)
    return 1 if (rep.failed and args.strict) else 0


def cmd_sweep(args) -> int:
    rows = run_experiment(spec_from_args(args))
    sys.stdout.write(emit_table(rows, args.format, mask_times=args.mask_times))
    bad = [r for r in rows if r.error or r.failures]
    for r in bad:
        log.warning("row %s/%s/%s sigma %s: %s", r.iter_ini, r.iter_main, r.n_esdf, r.sigma,
                    r.error or f"{r.failures} failed plans")
    return 1 if (bad and args.strict) else 0


def cmd_compare(args) -> int:
    spec = spec_from_args(args)
    results = compare_providers(spec, args.providers)
    sys.stdout.write(comparison_table(results))
    return 1 if (args.strict and any(r.row is None or r.row.failures for r in results)) else 0


def cmd_fit(args) -> int:
    spec = spec_from_args(args)
    setup = resolve(spec)
    mlp = fit_siren(setup.scene, args.samples, args.iterations, args.step_size, spec.seed,
                    hidden_width=args.width, hidden_layers=args.layers)
    save_siren(mlp, args.out)
    print(f"wrote {args.out}  held-out rms {mlp.metadata['heldout_rms']:.4f} m", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdftraj", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan once and export the trajectory")
    _add_spec_args(p)
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sweep", help="run a parameter sweep and print a metrics table")
    _add_spec_args(p)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--mask-times", action="store_true", help="print '-' for wall-clock columns")
    p.add_argument("--strict", action="store_true", help="exit 1 if any row failed")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="plan against several providers, score on the analytic scene")
    _add_spec_args(p)
    p.add_argument("--providers", nargs="+", default=["analytic", "grid", "siren"])
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fit", help="fit a SIREN to a scene and write the weight file")
    _add_spec_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--step-size", type=float, default=1e-4)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--layers", type=int, default=4)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, SdfError, PlanningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
