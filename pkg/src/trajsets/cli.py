"""Command-line front end.

Exit codes:

====  ==========================================================
0     success
1     planning failed (ATC did not converge, or a runtime error)
2     a check failed (``verify`` or ``gradcheck``)
64    usage error (bad arguments, unknown subcommand or option)
65    invalid input data (scenario, run record, tracks)
66    input file missing
74    other I/O error
====  ==========================================================
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import fileio, orchestrator, svg
from .model import InvalidInput, Limits, Scenario
from .nlp import SolverConfig

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CHECK_FAILED = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_NOINPUT = 66
EXIT_IOERR = 74


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_LIMIT_FIELDS = {f.name: f for f in dataclasses.fields(Limits)}
_SOLVER_FIELDS = {f.name: f for f in dataclasses.fields(SolverConfig)}


def _coerce(value, default):
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(value, bool):
        if float(value) != int(value):
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    return None if value is None else float(value)


def parse_overrides(items: Sequence[str]) -> tuple[dict, dict]:
    """Split ``--config`` items (``key=value`` or JSON files) into Limits
    and SolverConfig overrides."""
    pairs: dict = {}
    for item in items:
        if "=" in item:
            key, value = item.split("=", 1)
            pairs[key.strip()] = value.strip()
        else:
            path = Path(item)
            if not path.is_file():
                raise UsageError(f"--config {item!r}: expected key=value or an existing JSON file")
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise UsageError(f"{item}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
            if not isinstance(doc, dict):
                raise UsageError(f"{item}: expected a JSON object")
            pairs.update(doc)
    limits, solver = {}, {}
    for key, value in pairs.items():
        try:
            if key in _LIMIT_FIELDS:
                default = _LIMIT_FIELDS[key].default
                limits[key] = _coerce(value, 0.0 if default is None else default)
            elif key in _SOLVER_FIELDS:
                solver[key] = _coerce(value, _SOLVER_FIELDS[key].default)
            else:
                raise UsageError(f"--config: unknown field {key!r}")
        except (TypeError, ValueError) as exc:
            raise UsageError(f"--config {key}: {exc}") from exc
    return limits, solver


def _solver_config(base: dict, overrides: dict, seed: Optional[int]) -> SolverConfig:
    values = {**base, **overrides}
    if seed is not None:
        values["rng_seed"] = seed
    try:
        return SolverConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--config: {exc}") from exc


def _with_limits(scenario: Scenario, overrides: dict) -> Scenario:
    if not overrides:
        return scenario
    try:
        limits = scenario.limits.updated(**overrides)
    except (InvalidInput, ValueError) as exc:
        raise UsageError(f"--config: {exc}") from exc
    return dataclasses.replace(scenario, limits=limits)


def _meta(config: SolverConfig) -> dict:
    return {"solver": dataclasses.asdict(config)}


def _write_outputs(args, session, config):
    fileio.save_run_record(session, args.output, _meta(config))
    cycle = session.latest
    if args.corridors:
        fileio.export_corridors(cycle.atc, args.corridors)
    if args.trajectories:
        fileio.export_trajectories(session.selections, args.trajectories)
    if args.trace:
        Path(args.trace).write_text(cycle.atc.result.trace_csv())


def _report_cycle(session, out):
    cycle = session.latest
    res = cycle.atc.result
    print(
        f"step {cycle.plan_time}: ATC {res.status}, objective {res.objective_value:.9g}, "
        f"violation {res.max_constraint_violation:.3g}",
        file=out,
    )
    for c in sorted(cycle.atc.corridors, key=lambda c: c.aircraft_id):
        interior = c.radii[1:-1]
        print(f"  {c.aircraft_id}: mean radius {interior.mean():.6g}", file=out)
    for aid, p in sorted(cycle.pilots.items()):
        print(f"  pilot {aid}: {p.result.status}, cost {p.cost:.6g} (centre tracking {p.guess_cost:.6g})", file=out)
    for aid in cycle.dropped:
        print(f"  {aid}: no interior step left, dropped", file=out)


def cmd_plan(args, out) -> int:
    limits, solver = parse_overrides(args.config)
    scenario = _with_limits(fileio.load_scenario(args.scenario), limits)
    config = _solver_config({}, solver, args.seed)
    session = orchestrator.plan_cycle(orchestrator.Session(scenario), config, workers=args.workers)
    _write_outputs(args, session, config)
    _report_cycle(session, out)
    return EXIT_OK


def cmd_replan(args, out) -> int:
    limits, solver = parse_overrides(args.config)
    session, meta = fileio.load_run_record(args.run)
    if limits:
        raise UsageError("replan: limits are fixed by the run record; only solver fields may be overridden")
    config = _solver_config(meta.get("solver", {}), solver, args.seed)
    try:
        session = orchestrator.replan(session, args.tau, config, rerun_pilots=args.pilots, workers=args.workers)
    except InvalidInput as exc:
        raise UsageError(f"replan: {exc}") from exc
    _write_outputs(args, session, config)
    _report_cycle(session, out)
    return EXIT_OK


def cmd_verify(args, out) -> int:
    session, _ = fileio.load_run_record(args.run)
    report = orchestrator.verify(session, args.tol)
    print(report.summary(), file=out)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_plot(args, out) -> int:
    session, _ = fileio.load_run_record(args.run)
    layers = None if args.layers is None else [s for s in args.layers.split(",") if s]
    svg.render_svg(session, args.output, layers)
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    limits, solver = parse_overrides(args.config)
    scenario = _with_limits(fileio.load_scenario(args.scenario), limits)
    seed = args.seed if args.seed is not None else solver.get("rng_seed", 0)
    h = solver.get("finite_diff_step", SolverConfig().finite_diff_step)
    ok = True
    for label, rep in orchestrator.gradient_suite(scenario, args.perturbations, seed, args.tol, h):
        ok &= rep.passed
        worst = ", ".join(f"{k}={v:.2e}" for k, v in rep.errors.items() if v > args.tol)
        print(f"{'PASS' if rep.passed else 'FAIL'} {label}: max relative error {rep.max_error:.2e}"
              + (f" ({worst})" if worst else ""), file=out)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajsets", description="Corridor design and trajectory selection for air traffic.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, solver=True):
        p.add_argument("--config", action="append", default=[], metavar="KEY=VALUE|FILE",
                       help="override a Limits or SolverConfig field (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="random seed recorded in the solver config")
        if solver:
            p.add_argument("--workers", type=int, default=1, help="threads for pilot solves")

    def outputs(p):
        p.add_argument("-o", "--output", required=True, help="run record to write")
        p.add_argument("--corridors", help="also export corridors (.json or .csv)")
        p.add_argument("--trajectories", help="also export selected trajectories (.json or .csv)")
        p.add_argument("--trace", help="write the ATC solver trace as CSV")

    p = sub.add_parser("plan", help="first planning cycle")
    p.add_argument("scenario")
    outputs(p)
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("replan", help="re-plan an existing run")
    p.add_argument("run")
    p.add_argument("--tau", type=int, required=True, help="steps after the latest planning time")
    p.add_argument("--pilots", action="store_true", help="let pilots select again")
    outputs(p)
    common(p)
    p.set_defaults(func=cmd_replan)

    p = sub.add_parser("verify", help="audit the latest cycle of a run")
    p.add_argument("run")
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="render a run as SVG")
    p.add_argument("run")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--layers", default=None, help="comma list of " + ",".join(svg.LAYERS))
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("gradcheck", help="finite-difference check of all derivatives")
    p.add_argument("scenario")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--perturbations", type=int, default=5)
    common(p, solver=False)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("trajsets: a subcommand is required (plan, replan, verify, plot, gradcheck)")
        return args.func(args, out)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_USAGE
    except orchestrator.PlanningFailure as exc:
        print(f"error: {exc}", file=err)
        return EXIT_FAILURE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_NOINPUT
    except InvalidInput as exc:
        print(f"error: {exc}", file=err)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_IOERR
    except (ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_FAILURE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entry()
