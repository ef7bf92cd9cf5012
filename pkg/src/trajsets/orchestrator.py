"""Two-stage planning cycles, re-planning and a post-hoc safety audit.

A :class:`Session` is immutable: every operation returns a new session that
shares the earlier :class:`PlanCycle` records with its parent.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

from . import atc, pilot
from .atc import AtcSolution
from .model import Corridor, InvalidInput, Limits, Scenario, Trajectory
from .nlp import GradientCheckReport, SolverConfig, check_gradient
from .pilot import PilotSolution


class PlanningFailure(RuntimeError):
    """ATC did not converge; ``solution`` holds the best iterate and residuals."""

    def __init__(self, message: str, solution: AtcSolution):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class PlanCycle:
    plan_time: int
    scenario: Scenario  # as planned, after advancing to ``plan_time``
    atc: AtcSolution
    pilots: Mapping[str, PilotSolution]
    prior_selections: Optional[Mapping[str, Trajectory]] = None  # operation constraint targets
    dropped: tuple[str, ...] = ()


@dataclass(frozen=True)
class Session:
    scenario: Scenario
    history: tuple[PlanCycle, ...] = ()
    selections: Mapping[str, Trajectory] = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        times = [c.plan_time for c in self.history]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidInput("plan times must be strictly increasing")

    @property
    def latest(self) -> PlanCycle:
        if not self.history:
            raise InvalidInput("session has no planning cycle")
        return self.history[-1]


def _run_pilots(
    scenario: Scenario,
    solution: AtcSolution,
    config: SolverConfig,
    warm: Optional[Mapping[str, Sequence]] = None,
    workers: int = 1,
) -> dict[str, PilotSolution]:
    recs = sorted(scenario.aircraft, key=lambda r: r.aircraft_id)

    def one(rec):
        return pilot.select_trajectory(
            solution.corridor(rec.aircraft_id),
            rec,
            scenario.limits,
            config=config,
            warm_start=None if warm is None else warm.get(rec.aircraft_id),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, recs))
    else:
        results = [one(rec) for rec in recs]
    return {rec.aircraft_id: res for rec, res in zip(recs, results)}


def plan_cycle(session: Session, config: SolverConfig = SolverConfig(), workers: int = 1) -> Session:
    """First planning: ATC designs corridors, then every pilot selects."""
    if session.history:
        raise InvalidInput("session already planned; use replan")
    scenario = session.scenario
    if not scenario.aircraft:
        raise InvalidInput("scenario has no aircraft")
    solution = atc.design_sets(scenario, config)
    if not solution.converged:
        raise PlanningFailure(_diagnostics(solution), solution)
    pilots = _run_pilots(scenario, solution, config, workers=workers)
    cycle = PlanCycle(atc.plan_start(scenario), scenario, solution, MappingProxyType(pilots))
    selections = MappingProxyType({k: p.trajectory for k, p in pilots.items()})
    return Session(scenario, (cycle,), selections)


def replan(
    session: Session,
    tau: int,
    config: SolverConfig = SolverConfig(),
    rerun_pilots: bool = False,
    workers: int = 1,
) -> Session:
    """Redesign corridors ``tau`` steps after the latest planning time.

    Aircraft already airborne restart from their selected state at the new
    time; those with no interior step left are dropped.  New corridors must
    contain the current selections.  With ``rerun_pilots`` each pilot
    selects again, warm-started from the tail of its previous selection.
    """
    if not session.history:
        raise InvalidInput("replan needs a previous planning cycle")
    if int(tau) != tau or tau < 1:
        raise InvalidInput(f"re-planning offset must be a positive integer, got {tau}")
    new_time = session.latest.plan_time + int(tau)
    scenario, dropped = atc.advance_scenario(session.scenario, session.selections, new_time)
    if not scenario.aircraft:
        raise InvalidInput(f"no aircraft left to plan at step {new_time}")
    prior = MappingProxyType({r.aircraft_id: session.selections[r.aircraft_id] for r in scenario.aircraft})
    solution = atc.design_sets(scenario, config, prev_selections=prior)
    if not solution.converged:
        raise PlanningFailure(_diagnostics(solution), solution)

    pilots: dict[str, PilotSolution] = {}
    selections = dict(session.selections)
    if rerun_pilots:
        warm = {}
        for rec in scenario.aircraft:
            ctrl = prior[rec.aircraft_id].controls
            if ctrl is not None:
                warm[rec.aircraft_id] = ctrl[rec.t_start - prior[rec.aircraft_id].t_start :]
        pilots = _run_pilots(scenario, solution, config, warm, workers)
        selections.update({k: p.trajectory for k, p in pilots.items()})
    for k in dropped:
        selections.pop(k, None)
    cycle = PlanCycle(new_time, scenario, solution, MappingProxyType(pilots), prior, tuple(dropped))
    return Session(session.scenario, session.history + (cycle,), MappingProxyType(selections))


def _diagnostics(solution: AtcSolution) -> str:
    res = solution.result
    worst = ", ".join(f"{k}={v:.3g}" for k, v in solution.residuals.items() if v > 0)
    return (
        f"ATC solve ended with status {res.status}: objective {res.objective_value:.6g}, "
        f"violation {res.max_constraint_violation:.3g}, stationarity {res.stationarity:.3g}"
        + (f" ({worst})" if worst else "")
    )


# --- audit ----------------------------------------------------------------------


@dataclass
class SafetyReport:
    conflict: dict[str, float]  # "i|j" -> min disk gap minus D
    separation: dict[str, float]  # "i|j" -> min distance between selections
    containment: dict[str, float]  # aircraft -> min margin of selection in its corridor
    feasibility: dict[str, float]  # aircraft -> min adjacent-gap margin
    operation: dict[str, float]  # aircraft -> min margin of prior selection
    terminal: dict[str, float]  # aircraft -> terminal miss minus tolerance
    tol: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def min_separation(self) -> float:
        return min(self.separation.values(), default=math.inf)

    def summary(self) -> str:
        lines = [f"tolerance {self.tol:.3g}"]
        for name in ("conflict", "separation", "containment", "feasibility", "operation", "terminal"):
            vals = getattr(self, name)
            if vals:
                lines.append(f"{name}: min {min(vals.values()):.9g}")
        lines.extend(f"FAIL {f}" for f in self.failures)
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def audit(
    corridors: Sequence[Corridor],
    selections: Mapping[str, Trajectory],
    limits: Limits,
    prior_selections: Optional[Mapping[str, Trajectory]] = None,
    tol: float = 1e-6,
) -> SafetyReport:
    """Check corridors and selected trajectories from their data alone.

    Conflict margins, adjacent-disk gaps, containment of ``selections``
    (and of ``prior_selections``, when given), pairwise selection distance
    and terminal miss are recomputed with plain Euclidean norms.
    """
    D = limits.safety_margin
    failures = []
    cors = sorted(corridors, key=lambda c: c.aircraft_id)

    conflict, separation = {}, {}
    for a in range(len(cors)):
        for b in range(a + 1, len(cors)):
            ca, cb = cors[a], cors[b]
            key = f"{ca.aircraft_id}|{cb.aircraft_id}"
            shared = sorted(set(ca.interior_steps) & set(cb.interior_steps))
            if not shared:
                continue
            worst, worst_k = math.inf, None
            for k in shared:
                gap = float(np.hypot(*(ca.center_at(k) - cb.center_at(k)))) - ca.radius_at(k) - cb.radius_at(k)
                if gap - D < worst:
                    worst, worst_k = gap - D, k
            conflict[key] = worst
            if worst < -tol:
                failures.append(f"conflict {key} at k={worst_k}: disk gap {worst + D:.9g} < {D:g}")
            sa, sb = selections.get(ca.aircraft_id), selections.get(cb.aircraft_id)
            if sa is not None and sb is not None:
                ks = [k for k in shared if sa.t_start <= k <= sa.t_end and sb.t_start <= k <= sb.t_end]
                if ks:
                    dists = [float(np.hypot(*(sa.position_at(k) - sb.position_at(k)))) for k in ks]
                    i = int(np.argmin(dists))
                    separation[key] = dists[i]
                    if dists[i] < D - 2 * tol:
                        failures.append(f"separation {key} at k={ks[i]}: {dists[i]:.9g} < {D:g}")

    feasibility, containment, operation, terminal = {}, {}, {}, {}
    for c in cors:
        cid = c.aircraft_id
        gaps = np.hypot(*np.diff(c.centers, axis=0).T)
        rsum = c.radii[1:] + c.radii[:-1]
        margins = np.minimum(gaps - rsum - limits.v_min, limits.v_max - gaps - rsum)
        feasibility[cid] = float(margins.min())
        if feasibility[cid] < -tol:
            k = c.t_start + int(np.argmin(margins))
            failures.append(f"feasibility {cid} between k={k} and k={k + 1}: margin {feasibility[cid]:.9g}")

        for label, store, trajs in (("containment", containment, selections), ("operation", operation, prior_selections)):
            traj = (trajs or {}).get(cid)
            if traj is None:
                continue
            ks = [k for k in c.interior_steps if traj.t_start <= k <= traj.t_end]
            if not ks:
                continue
            m = [c.radius_at(k) - float(np.hypot(*(traj.position_at(k) - c.center_at(k)))) for k in ks]
            i = int(np.argmin(m))
            store[cid] = m[i]
            if m[i] < -tol:
                failures.append(f"{label} {cid} at k={ks[i]}: margin {m[i]:.9g}")

        traj = selections.get(cid)
        if traj is not None and traj.t_end == c.t_end:
            miss = float(np.hypot(*(traj.position_at(c.t_end) - c.center_at(c.t_end))))
            terminal[cid] = miss - limits.tol_terminal
            if terminal[cid] > tol:
                failures.append(f"terminal {cid}: miss {miss:.9g} > {limits.tol_terminal:g}")

    return SafetyReport(conflict, separation, containment, feasibility, operation, terminal, tol, failures)


def verify(session: Session, tol: Optional[float] = None) -> SafetyReport:
    """Audit the latest cycle: its corridors against the current selections
    and, after a re-plan, against the selections it had to contain."""
    cycle = session.latest
    tol = SolverConfig().constraint_tol if tol is None else tol
    ids = {c.aircraft_id for c in cycle.atc.corridors}
    selections = {k: v for k, v in session.selections.items() if k in ids}
    return audit(cycle.atc.corridors, selections, cycle.scenario.limits, cycle.prior_selections, tol)


def with_cycle(session: Session, index: int, **changes) -> Session:
    """Copy of ``session`` with one cycle's fields replaced (for tests and
    tooling; the original session is untouched)."""
    history = list(session.history)
    history[index] = replace(history[index], **changes)
    return replace(session, history=tuple(history))


# --- derivative audit -------------------------------------------------------------


def gradient_suite(
    scenario: Scenario, perturbations: int = 5, seed: int = 0, tol: float = 1e-4, h: float = 1e-6
) -> list[tuple[str, GradientCheckReport]]:
    """Compare analytic and finite-difference derivatives of both planning
    problems at the initial guesses and at ``perturbations`` random points.

    Pilot problems use the corridors decoded from the ATC point of the same
    round.
    """

    lim = scenario.limits
    rng = np.random.default_rng(seed)
    problem = atc.build_problem(scenario)
    base = atc.initial_guess(scenario)
    out = []
    for round_ in range(perturbations + 1):
        x = base.copy()
        if round_:
            for s in problem.layout.slots:
                x[s.u] += rng.normal(0.0, 0.05 * lim.u_max, s.n)
                x[s.psi] += rng.normal(0.0, 0.05 * lim.psi_max, s.n)
                x[s.r] = rng.uniform(1.0, 10.0, s.n - 1)
            x = np.clip(x, problem.lower, problem.upper)
        label = "guess" if round_ == 0 else f"perturbation {round_}"
        out.append((f"atc @ {label}", check_gradient(problem, x, tol, h)))
        corridors, _ = atc.decode(problem, x)
        for rec, cor in zip(scenario.aircraft, corridors):
            pp = pilot.build_problem(cor, rec, lim)
            z = pp.pack(pilot.initial_guess_track_centers(cor, rec, None, lim))
            if round_:
                n = rec.horizon
                z[:n] += rng.normal(0.0, 0.05 * lim.u_max, n)
                z[n:] += rng.normal(0.0, 0.05 * lim.psi_max, n)
                z = pp.clip(z)
            out.append((f"pilot {rec.aircraft_id} @ {label}", check_gradient(pp, z, tol, h)))
    return out
