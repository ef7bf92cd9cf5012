"""Scenario files, track import, result export and run records.

Scenario files are JSON validated against :data:`SCENARIO_SCHEMA`; unknown
fields are rejected.  Exports are deterministic: rows ordered by
``(aircraft_id, k)`` and floats printed with :data:`FLOAT_FORMAT`.  Run
records keep full float precision and round-trip losslessly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Optional, Sequence

import jsonschema
import numpy as np

from .atc import AtcSolution
from .model import (
    AircraftRecord,
    AircraftState,
    ControlInput,
    Corridor,
    Disturbance,
    InvalidInput,
    Limits,
    Scenario,
    Trajectory,
    track_from_positions,
)
from .nlp import SolveResult
from .orchestrator import PlanCycle, Session
from .pilot import PilotSolution

# nine digits after the point: 1e-9 resolution for any magnitude we plan at
FLOAT_FORMAT = ".9f"


class ScenarioError(InvalidInput):
    pass


def fmt(value: float) -> str:
    out = format(float(value), FLOAT_FORMAT)
    return "0." + "0" * 9 if out.startswith("-") and float(out) == 0 else out


_NUM = {"type": "number"}
_STATE = {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SCENARIO_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["limits", "aircraft"],
    "properties": {
        "timestep_seconds": {"type": "number", "exclusiveMinimum": 0},
        "units": {"type": "string"},
        "limits": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **{
                    name: _NUM
                    for name in (
                        "psi_max",
                        "u_max",
                        "v_min",
                        "v_max",
                        "delta_v",
                        "delta_theta",
                        "safety_margin",
                        "eps",
                        "alpha",
                        "tol_terminal",
                    )
                },
                "v_ter": {"type": ["number", "null"]},
                "theta_ter": {"type": ["number", "null"]},
            },
        },
        "aircraft": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "t", "T", "x0", "xT", "standard"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "t": {"type": "integer"},
                    "T": {"type": "integer"},
                    "x0": _STATE,
                    "xT": _STATE,
                    "standard": {"type": "array", "items": _POINT, "minItems": 2},
                    "wind": {"oneOf": [_POINT, {"type": "array", "items": _POINT}]},
                },
            },
        },
    },
}


def _path(parts: Iterable) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _schema_error(err: jsonschema.ValidationError) -> str:
    parts = list(err.absolute_path)
    if err.validator == "required" and isinstance(err.instance, dict):
        missing = [p for p in err.validator_value if p not in err.instance]
        if missing:
            return f"{_path(parts + [missing[0]])}: missing required field"
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            return f"{_path(parts + [extra[0]])}: unknown field"
    return f"{_path(parts)}: {err.message}"


def scenario_from_dict(doc: Mapping[str, Any]) -> Scenario:
    errors = sorted(jsonschema.Draft202012Validator(SCENARIO_SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ScenarioError(_schema_error(errors[0]))
    try:
        limits = Limits(**doc["limits"])
    except (InvalidInput, ValueError) as exc:
        raise ScenarioError(f"limits: {exc}") from exc
    recs = []
    for i, a in enumerate(doc["aircraft"]):
        where = f"aircraft[{i}]"
        try:
            t, T = a["t"], a["T"]
            initial = AircraftState(*a["x0"])
            terminal = AircraftState(*a["xT"])
            wind = a.get("wind", [0.0, 0.0])
            if wind and not isinstance(wind[0], list):
                wind = [wind] * max(T - t, 0)
            if len(wind) != T - t:
                raise ScenarioError(f"{where}.wind: expected {T - t} entries, got {len(wind)}")
            std = track_from_positions(a["id"], t, a["standard"], initial.theta)
            recs.append(
                AircraftRecord(a["id"], t, T, initial, terminal, std, tuple(Disturbance(*w) for w in wind))
            )
        except ScenarioError:
            raise
        except (InvalidInput, ValueError) as exc:
            raise ScenarioError(f"{where} ({a['id']}): {exc}") from exc
    try:
        return Scenario(
            tuple(recs), limits, float(doc.get("timestep_seconds", 360.0)), doc.get("units", "NM")
        )
    except InvalidInput as exc:
        raise ScenarioError(f"aircraft: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file; errors name the offending field
    (or line and column for malformed JSON)."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(doc)


def limits_to_dict(limits: Limits) -> dict[str, Any]:
    return {
        "psi_max": limits.psi_max,
        "u_max": limits.u_max,
        "v_min": limits.v_min,
        "v_max": limits.v_max,
        "delta_v": limits.delta_v,
        "delta_theta": limits.delta_theta,
        "safety_margin": limits.safety_margin,
        "eps": limits.eps,
        "alpha": limits.alpha,
        "tol_terminal": limits.tol_terminal,
        "v_ter": limits.v_ter,
        "theta_ter": limits.theta_ter,
    }


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    return {
        "timestep_seconds": scenario.timestep_seconds,
        "units": scenario.units,
        "limits": limits_to_dict(scenario.limits),
        "aircraft": [
            {
                "id": r.aircraft_id,
                "t": r.t_start,
                "T": r.t_end,
                "x0": list(r.initial.as_array().tolist()),
                "xT": list(r.terminal.as_array().tolist()),
                "standard": r.standard.positions.tolist(),
                "wind": r.disturbance_array().tolist(),
            }
            for r in scenario.aircraft
        ],
    }


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=1) + "\n")


# --- tracks -------------------------------------------------------------------------


def import_tracks(path: str | Path) -> list[Trajectory]:
    """Read ``id,k,x,y[,v,theta]`` rows into one trajectory per id.

    Rows may come in any order; steps of each id must be contiguous.
    Missing speed and heading come from the outgoing segment.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for name in ("id", "k", "x", "y"):
            if name not in fields:
                raise InvalidInput(f"{path}: missing column {name!r}")
        has_state = "v" in fields and "theta" in fields
        rows: dict[str, list] = {}
        for line, row in enumerate(reader, start=2):
            try:
                k = int(row["k"])
                vals = [float(row["x"]), float(row["y"])]
                if has_state and row["v"] not in ("", None) and row["theta"] not in ("", None):
                    vals += [float(row["v"]), float(row["theta"])]
            except (TypeError, ValueError) as exc:
                raise InvalidInput(f"{path}:{line}: {exc}") from exc
            rows.setdefault(row["id"], []).append((k, vals))
    out = []
    for aid in sorted(rows):
        pts = sorted(rows[aid], key=lambda r: r[0])
        ks = [k for k, _ in pts]
        if ks != list(range(ks[0], ks[0] + len(ks))):
            raise InvalidInput(f"{path}: steps of {aid} are not contiguous: {ks}")
        if all(len(v) == 4 for _, v in pts):
            out.append(Trajectory(aid, ks[0], tuple(AircraftState(*v) for _, v in pts)))
        else:
            out.append(track_from_positions(aid, ks[0], [v[:2] for _, v in pts]))
    return out


# --- exports ----------------------------------------------------------------------------


def _is_json(path) -> bool:
    return str(path).lower().endswith(".json")


def corridors_to_csv(corridors: Sequence[Corridor]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["aircraft_id", "k", "cx", "cy", "r"])
    for c in sorted(corridors, key=lambda c: c.aircraft_id):
        for i, (p, r) in enumerate(zip(c.centers, c.radii)):
            w.writerow([c.aircraft_id, c.t_start + i, fmt(p[0]), fmt(p[1]), fmt(r)])
    return buf.getvalue()


def corridors_to_json(corridors: Sequence[Corridor]) -> str:
    items = []
    for c in sorted(corridors, key=lambda c: c.aircraft_id):
        disks = ", ".join(f"[{fmt(p[0])}, {fmt(p[1])}, {fmt(r)}]" for p, r in zip(c.centers, c.radii))
        items.append(f'{{"aircraft_id": {json.dumps(c.aircraft_id)}, "t_start": {c.t_start}, "disks": [{disks}]}}')
    return "[\n" + ",\n".join(items) + "\n]\n"


def export_corridors(solution: AtcSolution | Sequence[Corridor], path: str | Path) -> None:
    corridors = solution.corridors if isinstance(solution, AtcSolution) else list(solution)
    text = corridors_to_json(corridors) if _is_json(path) else corridors_to_csv(corridors)
    Path(path).write_text(text)


def import_corridors(path: str | Path) -> list[Corridor]:
    if _is_json(path):
        doc = json.loads(Path(path).read_text())
        out = []
        for item in doc:
            disks = np.asarray(item["disks"], dtype=float).reshape(-1, 3)
            out.append(Corridor(item["aircraft_id"], int(item["t_start"]), disks[:, :2], disks[:, 2]))
        return out
    groups: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(row["aircraft_id"], []).append(
                (int(row["k"]), float(row["cx"]), float(row["cy"]), float(row["r"]))
            )
    out = []
    for aid in sorted(groups):
        rows = sorted(groups[aid])
        arr = np.array([r[1:] for r in rows])
        out.append(Corridor(aid, rows[0][0], arr[:, :2], arr[:, 2]))
    return out


def _trajectories(solutions) -> list[Trajectory]:
    items = solutions.values() if isinstance(solutions, Mapping) else solutions
    trajs = [s.trajectory if isinstance(s, PilotSolution) else s for s in items]
    return sorted(trajs, key=lambda t: t.aircraft_id)


def export_trajectories(solutions, path: str | Path) -> None:
    """Write pilot selections (or bare trajectories) as CSV rows
    ``aircraft_id,k,x,y,v,theta,u,psi`` or as JSON; the last state of each
    trajectory has no control."""
    trajs = _trajectories(solutions)
    if _is_json(path):
        items = []
        for t in trajs:
            states = ", ".join("[" + ", ".join(fmt(v) for v in s.as_array()) + "]" for s in t.states)
            ctrl = ", ".join(f"[{fmt(c.u)}, {fmt(c.psi)}]" for c in (t.controls or ()))
            items.append(
                f'{{"aircraft_id": {json.dumps(t.aircraft_id)}, "t_start": {t.t_start}, '
                f'"states": [{states}], "controls": [{ctrl}]}}'
            )
        Path(path).write_text("[\n" + ",\n".join(items) + "\n]\n")
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["aircraft_id", "k", "x", "y", "v", "theta", "u", "psi"])
    for t in trajs:
        ctrl = t.controls or ()
        for i, s in enumerate(t.states):
            c = ctrl[i] if i < len(ctrl) else None
            w.writerow(
                [t.aircraft_id, t.t_start + i, fmt(s.x), fmt(s.y), fmt(s.v), fmt(s.theta)]
                + ([fmt(c.u), fmt(c.psi)] if c is not None else ["", ""])
            )
    Path(path).write_text(buf.getvalue())


def import_trajectories(path: str | Path) -> list[Trajectory]:
    if _is_json(path):
        out = []
        for item in json.loads(Path(path).read_text()):
            states = tuple(AircraftState(*s) for s in item["states"])
            ctrl = tuple(ControlInput(*c) for c in item["controls"]) or None
            out.append(Trajectory(item["aircraft_id"], int(item["t_start"]), states, ctrl))
        return out
    groups: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(row["aircraft_id"], []).append(row)
    out = []
    for aid in sorted(groups):
        rows = sorted(groups[aid], key=lambda r: int(r["k"]))
        states = tuple(AircraftState(*(float(r[c]) for c in ("x", "y", "v", "theta"))) for r in rows)
        ctrl = tuple(ControlInput(float(r["u"]), float(r["psi"])) for r in rows if r["u"] != "")
        out.append(Trajectory(aid, int(rows[0]["k"]), states, ctrl or None))
    return out


# --- run records ----------------------------------------------------------------------


def _num(x: float):
    # json has no inf/nan; keep them as strings so the record stays valid JSON
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _unnum(x) -> float:
    return float(x)


def _traj_to(t: Trajectory) -> dict:
    return {
        "aircraft_id": t.aircraft_id,
        "t_start": t.t_start,
        "states": [s.as_array().tolist() for s in t.states],
        "controls": None if t.controls is None else [[c.u, c.psi] for c in t.controls],
    }


def _traj_from(d: Mapping) -> Trajectory:
    ctrl = None if d["controls"] is None else tuple(ControlInput(*c) for c in d["controls"])
    return Trajectory(d["aircraft_id"], d["t_start"], tuple(AircraftState(*s) for s in d["states"]), ctrl)


def _result_to(r: SolveResult) -> dict:
    return {
        "x_opt": r.x_opt.tolist(),
        "objective_value": _num(r.objective_value),
        "max_constraint_violation": _num(r.max_constraint_violation),
        "status": r.status,
        "stationarity": _num(r.stationarity),
        "trace": [[i, _num(f), _num(v)] for i, f, v in r.trace],
        "multipliers_eq": np.asarray(r.multipliers_eq).tolist(),
        "multipliers_ineq": np.asarray(r.multipliers_ineq).tolist(),
    }


def _result_from(d: Mapping) -> SolveResult:
    return SolveResult(
        np.array(d["x_opt"], dtype=float),
        _unnum(d["objective_value"]),
        _unnum(d["max_constraint_violation"]),
        d["status"],
        _unnum(d["stationarity"]),
        [(int(i), _unnum(f), _unnum(v)) for i, f, v in d["trace"]],
        np.array(d["multipliers_eq"], dtype=float),
        np.array(d["multipliers_ineq"], dtype=float),
    )


def _selections_to(sel: Optional[Mapping[str, Trajectory]]):
    return None if sel is None else {k: _traj_to(sel[k]) for k in sorted(sel)}


def _selections_from(d) -> Optional[Mapping[str, Trajectory]]:
    return None if d is None else MappingProxyType({k: _traj_from(v) for k, v in d.items()})


def _cycle_to(c: PlanCycle) -> dict:
    return {
        "plan_time": c.plan_time,
        "scenario": scenario_to_dict(c.scenario),
        "atc": {
            "corridors": [
                {"aircraft_id": k.aircraft_id, "t_start": k.t_start, "centers": k.centers.tolist(), "radii": k.radii.tolist()}
                for k in c.atc.corridors
            ],
            "controls": {k: [[u.u, u.psi] for u in v] for k, v in c.atc.controls.items()},
            "result": _result_to(c.atc.result),
            "residuals": {k: _num(v) for k, v in c.atc.residuals.items()},
        },
        "pilots": {
            k: {
                "trajectory": _traj_to(p.trajectory),
                "cost": _num(p.cost),
                "guess_cost": _num(p.guess_cost),
                "result": _result_to(p.result),
                "containment": [_num(m) for m in p.containment],
                "terminal_error": _num(p.terminal_error),
            }
            for k, p in sorted(c.pilots.items())
        },
        "prior_selections": _selections_to(c.prior_selections),
        "dropped": list(c.dropped),
    }


def _cycle_from(d: Mapping) -> PlanCycle:
    scenario = scenario_from_dict(d["scenario"])
    a = d["atc"]
    corridors = [Corridor(k["aircraft_id"], k["t_start"], np.array(k["centers"]), np.array(k["radii"])) for k in a["corridors"]]
    controls = {k: [ControlInput(*u) for u in v] for k, v in a["controls"].items()}
    atc_sol = AtcSolution(corridors, controls, _result_from(a["result"]), {k: _unnum(v) for k, v in a["residuals"].items()}, scenario)
    pilots = {}
    for k, p in d["pilots"].items():
        traj = _traj_from(p["trajectory"])
        pilots[k] = PilotSolution(
            k,
            traj,
            list(traj.controls or ()),
            _unnum(p["cost"]),
            _result_from(p["result"]),
            [_unnum(m) for m in p["containment"]],
            _unnum(p["terminal_error"]),
            _unnum(p["guess_cost"]),
        )
    return PlanCycle(
        d["plan_time"],
        scenario,
        atc_sol,
        MappingProxyType(pilots),
        _selections_from(d["prior_selections"]),
        tuple(d["dropped"]),
    )


RECORD_VERSION = 1


def session_to_dict(session: Session, meta: Optional[Mapping[str, Any]] = None) -> dict:
    return {
        "version": RECORD_VERSION,
        "meta": dict(meta or {}),
        "scenario": scenario_to_dict(session.scenario),
        "history": [_cycle_to(c) for c in session.history],
        "selections": _selections_to(session.selections),
    }


def session_from_dict(doc: Mapping) -> Session:
    if doc.get("version") != RECORD_VERSION:
        raise InvalidInput(f"unsupported run record version {doc.get('version')!r}")
    return Session(
        scenario_from_dict(doc["scenario"]),
        tuple(_cycle_from(c) for c in doc["history"]),
        _selections_from(doc["selections"]) or MappingProxyType({}),
    )


def dumps_run_record(session: Session, meta: Optional[Mapping[str, Any]] = None) -> str:
    return json.dumps(session_to_dict(session, meta), indent=1) + "\n"


def save_run_record(session: Session, path: str | Path, meta: Optional[Mapping[str, Any]] = None) -> None:
    Path(path).write_text(dumps_run_record(session, meta))


def load_run_record(path: str | Path) -> tuple[Session, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return session_from_dict(doc), dict(doc.get("meta", {}))
