"""Trajectory selection by one pilot inside the corridor assigned by ATC.

Each pilot solves its own small problem: minimise normalised control effort
while staying inside its disks under a known additive wind.  The decision
vector is ``[u(t) .. u(T-1), psi(t) .. psi(T-1)]``; states follow from the
disturbed rollout.  Nothing here reads other aircraft, so selections for
different aircraft can run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import (
    AircraftRecord,
    ControlInput,
    Corridor,
    Disturbance,
    InvalidInput,
    Limits,
    Trajectory,
    containment_margin,
    rollout,
    terminal_references,
)
from .nlp import CONVERGED, ConstraintBlock, NlpProblem, SolveResult, SolverConfig, solve
from .shooting import NormRow, NormRows, inverse_dynamics, shoot


def j_pilot(controls, limits: Limits) -> float:
    """Normalised control effort over all but the last control step.

    ``controls`` is a sequence of :class:`ControlInput` or an ``(n, 2)``
    array of ``(u, psi)`` rows.
    """
    arr = _control_array(controls)
    if len(arr) < 2:
        return 0.0
    head = arr[:-1]
    return float(np.sum((head[:, 0] / limits.u_max) ** 2) + np.sum((head[:, 1] / limits.psi_max) ** 2))


def _control_array(controls) -> np.ndarray:
    if isinstance(controls, np.ndarray):
        return np.asarray(controls, float).reshape(-1, 2)
    return np.array([[c.u, c.psi] for c in controls], dtype=float).reshape(-1, 2)


def _disturbance_array(rec: AircraftRecord, disturbance) -> np.ndarray:
    if disturbance is None:
        return rec.disturbance_array()
    if isinstance(disturbance, np.ndarray):
        arr = np.asarray(disturbance, float)
    else:
        arr = np.array([[d.dx, d.dy] for d in disturbance], dtype=float)
    if arr.shape != (rec.horizon, 2):
        raise InvalidInput(f"{rec.aircraft_id}: expected {rec.horizon} disturbances, got {len(arr)}")
    return arr


def _check_corridor(corridor: Corridor, rec: AircraftRecord) -> None:
    if corridor.aircraft_id != rec.aircraft_id:
        raise InvalidInput(f"corridor of {corridor.aircraft_id} given for aircraft {rec.aircraft_id}")
    if corridor.t_start != rec.t_start or corridor.t_end != rec.t_end:
        raise InvalidInput(
            f"{rec.aircraft_id}: corridor spans [{corridor.t_start}, {corridor.t_end}], "
            f"horizon is [{rec.t_start}, {rec.t_end}]"
        )
    if corridor.radii[0] != 0.0 or corridor.radii[-1] != 0.0:
        raise InvalidInput(f"{rec.aircraft_id}: corridor boundary radii must be zero")


@dataclass
class PilotProblem(NlpProblem):
    corridor: Optional[Corridor] = None
    record: Optional[AircraftRecord] = None
    limits: Optional[Limits] = None
    disturbance: Optional[np.ndarray] = None

    def unpack(self, x) -> list[ControlInput]:
        n = self.n // 2
        return [ControlInput(float(a), float(b)) for a, b in zip(x[:n], x[n:])]

    def pack(self, controls) -> np.ndarray:
        arr = _control_array(controls)
        return np.concatenate([arr[:, 0], arr[:, 1]])

    def j_pilot(self, x) -> float:
        return self.objective(np.asarray(x, float))


def build_problem(
    corridor: Corridor,
    record: AircraftRecord,
    limits: Limits,
    disturbance: Optional[Sequence[Disturbance] | np.ndarray] = None,
) -> PilotProblem:
    """Assemble one pilot's selection problem.

    ``disturbance`` defaults to the record's own wind sequence.  Interior
    positions must lie in their disks; the final position must lie within
    ``limits.tol_terminal`` of the final centre.
    """
    _check_corridor(corridor, record)
    dist = _disturbance_array(record, disturbance)
    n = record.horizon
    N = 2 * n
    x0 = record.initial.as_array()
    cache: dict = {}

    def shot(x):
        if cache.get("x") is None or not np.array_equal(cache["x"], x):
            cache["x"] = np.array(x, dtype=float)
            cache["shot"] = shoot(x0, x[:n], x[n:], dist)
        return [cache["shot"]]

    weights = np.zeros(N)
    weights[: n - 1] = 1.0 / limits.u_max**2
    weights[n : 2 * n - 1] = 1.0 / limits.psi_max**2

    def objective(x):
        return float(np.sum(weights * x * x))

    def gradient(x):
        return 2 * weights * x

    def hessian(x):
        return np.diag(2 * weights)

    def zero_hess(x, w):
        return np.zeros((N, N))

    def speed_fun(x):
        v = shot(x)[0].v[1:]
        return np.concatenate([limits.v_min - v, v - limits.v_max])

    def speed_jac(x):
        dv = shot(x)[0].dv[1:]
        return np.vstack([-dv, dv])

    v_ter, th_ter = terminal_references(record, limits)

    def terminal_fun(x):
        sh = shot(x)[0]
        dv, dth = sh.v[-1] - v_ter, sh.theta[-1] - th_ter
        return np.array([dv - limits.delta_v, -dv - limits.delta_v, dth - limits.delta_theta, -dth - limits.delta_theta])

    def terminal_jac(x):
        sh = shot(x)[0]
        return np.vstack([sh.dv[-1], -sh.dv[-1], sh.dth[-1], -sh.dth[-1]])

    cols = [np.arange(N)]
    contain = NormRows(
        [
            NormRow(((0, k, 1.0),), 1.0, False, -float(corridor.radii[k]), offset=-corridor.centers[k].astype(float))
            for k in range(1, n)
        ],
        cols,
        N,
    )
    final = NormRows(
        [NormRow(((0, n, 1.0),), 1.0, False, -limits.tol_terminal, offset=-corridor.centers[n].astype(float))],
        cols,
        N,
    )

    def norm_block(name, rows):
        return ConstraintBlock(
            name,
            lambda x: rows.values(shot(x), x),
            lambda x: rows.jac(shot(x), x),
            len(rows),
            lambda x, w: rows.hess(shot(x), x, w),
        )

    ineqs = [
        ConstraintBlock("speed", speed_fun, speed_jac, 2 * n, zero_hess),
        ConstraintBlock("terminal_window", terminal_fun, terminal_jac, 4, zero_hess),
        norm_block("containment", contain),
        norm_block("terminal_position", final),
    ]
    lower = np.concatenate([np.full(n, -limits.u_max), np.full(n, -limits.psi_max)])
    return PilotProblem(
        n=N,
        objective=objective,
        gradient=gradient,
        inequalities=ineqs,
        lower=lower,
        upper=-lower,
        hessian=hessian,
        corridor=corridor,
        record=record,
        limits=limits,
        disturbance=dist,
    )


def initial_guess_track_centers(
    corridor: Corridor,
    record: AircraftRecord,
    disturbance: Optional[Sequence[Disturbance] | np.ndarray] = None,
    limits: Optional[Limits] = None,
) -> list[ControlInput]:
    """Controls that fly through the corridor centres under the given wind,
    clipped into the control bounds."""
    _check_corridor(corridor, record)
    limits = limits or Limits()
    dist = _disturbance_array(record, disturbance)
    v_ter, th_ter = terminal_references(record, limits)
    u, psi = inverse_dynamics(record.initial.as_array(), corridor.centers, v_ter, th_ter, dist)
    u = np.clip(u, -limits.u_max, limits.u_max)
    psi = np.clip(psi, -limits.psi_max, limits.psi_max)
    return [ControlInput(float(a), float(b)) for a, b in zip(u, psi)]


@dataclass
class PilotSolution:
    aircraft_id: str
    trajectory: Trajectory
    controls: list[ControlInput]
    cost: float
    result: SolveResult
    containment: list[float] = field(default_factory=list)  # margin per interior step
    terminal_error: float = 0.0
    guess_cost: float = math.nan

    @property
    def converged(self) -> bool:
        return self.result.converged


def _finish(problem: PilotProblem, x: np.ndarray, result: SolveResult) -> PilotSolution:
    rec, cor = problem.record, problem.corridor
    controls = problem.unpack(x)
    dists = [Disturbance(float(a), float(b)) for a, b in problem.disturbance]
    traj = rollout(rec.initial, controls, dists, aircraft_id=rec.aircraft_id, t_start=rec.t_start)
    margins = [
        containment_margin(cor.center_at(k), cor.radius_at(k), traj.position_at(k)) for k in cor.interior_steps
    ]
    term = float(np.hypot(*(traj.position_at(rec.t_end) - cor.center_at(rec.t_end))))
    return PilotSolution(rec.aircraft_id, traj, controls, problem.j_pilot(x), result, margins, term)


def select_trajectory(
    corridor: Corridor,
    record: AircraftRecord,
    limits: Limits,
    disturbance: Optional[Sequence[Disturbance] | np.ndarray] = None,
    config: SolverConfig = SolverConfig(),
    warm_start: Optional[Sequence[ControlInput]] = None,
) -> PilotSolution:
    """Cheapest trajectory inside ``corridor`` found from the centre-tracking
    guess (or ``warm_start`` when given).

    A feasible starting point is never beaten by a worse solver result: if
    the solve ends above the cost of a feasible start, the start is
    returned.  A corridor of zero radii admits only the centre path, so its
    centre-tracking controls are returned without solving when they are
    feasible.
    """
    problem = build_problem(corridor, record, limits, disturbance)
    guess = problem.pack(initial_guess_track_centers(corridor, record, problem.disturbance, limits))
    starts = [guess] if warm_start is None else [problem.clip(problem.pack(warm_start)), guess]
    feasible = [x for x in starts if problem.violation(x) <= config.constraint_tol]
    guess_cost = problem.j_pilot(guess)

    if not np.any(corridor.radii) and feasible and feasible[-1] is guess:
        result = SolveResult(guess, guess_cost, problem.violation(guess), CONVERGED, 0.0)
        sol = _finish(problem, guess, result)
        sol.guess_cost = guess_cost
        return sol

    result = solve(problem, starts[0], config)
    x = result.x_opt
    if feasible:
        best = min(feasible, key=problem.j_pilot)
        if result.max_constraint_violation > config.constraint_tol or problem.j_pilot(best) < result.objective_value:
            x = best
            result = SolveResult(
                best,
                problem.j_pilot(best),
                problem.violation(best),
                result.status,
                result.stationarity,
                result.trace,
                result.multipliers_eq,
                result.multipliers_ineq,
            )
    sol = _finish(problem, x, result)
    sol.guess_cost = guess_cost
    return sol
