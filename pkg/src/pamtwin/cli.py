"""Command-line entry point: ``pamtwin {simulate,openloop,refset,scenarios}``.

Errors are reported as one line on stderr,
``error: code=<n> kind=<kind> message=<text>``, with distinct exit codes.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from pamtwin import config, harness, refset
from pamtwin.estimator import FilterNumericalError
from pamtwin.statics import DEFAULT_PARAMS, ModelConsistencyError, ModelDomainError

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INVARIANT = 4
EXIT_IO = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pamtwin", description="Antagonistic PAM joint simulator, estimator and controller.")
    p.add_argument("--seed", type=int, default=None, help="noise seed (overrides the config)")
    p.add_argument("--params", type=Path, default=None, help="INI file with a [model] section")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for 'scenarios'")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="closed-loop run from a scenario config")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--no-estimator", action="store_true", help="feed the controller the true state")
    s.add_argument("--out", type=Path, required=True)

    o = sub.add_parser("openloop", help="fixed valve-voltage sweep, truth logged")
    o.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("refset", help="admissible (angle, stiffness) set")
    r.add_argument("--grid-kpa", type=float, default=5.0)
    r.add_argument("--out", type=Path, required=True, help="point cloud CSV")
    r.add_argument("--polygon", type=Path, default=None, help="closed boundary polygon CSV")

    c = sub.add_parser("scenarios", help="the three sinusoid/stiffness-step presets")
    c.add_argument("--which", nargs="+", choices=sorted(harness.PRESETS), default=list(harness.PRESETS))
    c.add_argument("--out-dir", type=Path, default=Path("."))
    c.add_argument("--no-estimator", action="store_true")
    return p


def _params(args):
    return config.load_params(args.params) if args.params else None


def _metrics_line(name: str, m: harness.Metrics) -> str:
    return (f"{name}: angle_rmse={m.angle_rmse_true:.4f}deg stiffness_rmse={m.stiffness_rmse_true:.4f} "
            f"estimation_rmse={m.angle_estimation_rmse:.4f}deg in_set={m.in_set_fraction:.4f} "
            f"saturation={m.saturation_duty:.4f}")


def _cmd_simulate(args) -> int:
    cfg = config.load_scenario(args.config)
    overrides = {}
    if (params := _params(args)) is not None:
        overrides["params"] = params
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_estimator:
        overrides["estimator"] = False
    cfg = dataclasses.replace(cfg, **overrides)
    trace = harness.run_closed_loop(cfg, refset.default_set(cfg.params))
    harness.write_trace_csv(args.out, trace)
    print(_metrics_line(str(args.config), harness.compute_metrics(trace)))
    return EXIT_OK


def _cmd_openloop(args) -> int:
    params = _params(args) or DEFAULT_PARAMS
    cfg = harness.ScenarioConfig(duration=55.0, estimator=False, params=params, seed=args.seed or 0)
    trace = harness.run_open_loop(cfg, refset.default_set(params))
    harness.write_trace_csv(args.out, trace)
    for t in harness.OPENLOOP_SNAPSHOTS:
        r = harness.snapshot(trace, t)
        print(f"t={t:g}s psi={r.psi_true:.3f}deg Kp={r.Kp_true:.3f} in_set={int(r.in_set)}")
    return EXIT_OK


def _cmd_refset(args) -> int:
    if not args.grid_kpa > 0:
        raise UsageError("--grid-kpa must be positive")
    params = _params(args) or DEFAULT_PARAMS
    cloud = refset.sweep(params, grid_step=args.grid_kpa * 1e3)
    aset = refset.build_set(cloud)
    refset.write_cloud_csv(args.out, cloud)
    if args.polygon is not None:
        refset.write_polygon_csv(args.polygon, aset)
    lo, hi = (math.degrees(v) for v in aset.psi_range)
    print(f"points={len(cloud)} skipped={cloud.skipped} vertices={len(aset.boundary)} "
          f"psi_range=[{lo:.3f},{hi:.3f}]deg")
    return EXIT_OK


def _run_preset(job):
    name, seed, estimator, params, out_dir = job
    overrides = {"estimator": estimator}
    if params is not None:
        overrides["params"] = params
    cfg = harness.preset(name, seed=seed, **overrides)
    trace = harness.run_closed_loop(cfg, refset.default_set(cfg.params))
    path = Path(out_dir) / f"scenario_{name}_seed{seed}.csv"
    harness.write_trace_csv(path, trace)
    return name, path, harness.compute_metrics(trace, t_from=cfg.duration - 20.0)


def _cmd_scenarios(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed or 0
    jobs = [(name, seed, not args.no_estimator, _params(args), args.out_dir) for name in args.which]
    if args.jobs == 1:
        results = [_run_preset(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_preset, jobs))
    for name, path, m in results:
        print(f"{_metrics_line(name, m)} trace={path}")
    return EXIT_OK


COMMANDS = {
    "simulate": _cmd_simulate,
    "openloop": _cmd_openloop,
    "refset": _cmd_refset,
    "scenarios": _cmd_scenarios,
}


def _fail(code: int, kind: str, exc: BaseException | str) -> int:
    text = " ".join(str(exc).split())
    print(f"error: code={code} kind={kind} message={text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except config.ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (harness.ScenarioError, ModelDomainError, ModelConsistencyError, FilterNumericalError,
            refset.DegenerateSetError) as exc:
        return _fail(EXIT_INVARIANT, "invariant", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    except Exception as exc:  # noqa: BLE001 - last-resort one-line report
        return _fail(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
