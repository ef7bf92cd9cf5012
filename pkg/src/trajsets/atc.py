"""Corridor design by ATC.

All aircraft are planned jointly.  States are eliminated by single shooting,
so the decision vector holds only controls and interior radii.  Per aircraft
(in scenario order) the block layout is::

    [u(t) .. u(T-1) | psi(t) .. psi(T-1) | r(t+1) .. r(T-1)]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .model import (
    AircraftRecord,
    ControlInput,
    Corridor,
    InvalidInput,
    Scenario,
    Trajectory,
    conflict_margin,
    rollout,
    terminal_references,
)
from .nlp import ConstraintBlock, NlpProblem, SolveResult, SolverConfig, solve
from .shooting import NormRow, NormRows, inverse_dynamics, shoot


@dataclass(frozen=True)
class AircraftSlot:
    aircraft_id: str
    t_start: int
    t_end: int
    offset: int

    @property
    def n(self) -> int:
        return self.t_end - self.t_start

    @property
    def size(self) -> int:
        return 3 * self.n - 1

    @property
    def u(self) -> slice:
        return slice(self.offset, self.offset + self.n)

    @property
    def psi(self) -> slice:
        return slice(self.offset + self.n, self.offset + 2 * self.n)

    @property
    def r(self) -> slice:
        return slice(self.offset + 2 * self.n, self.offset + 3 * self.n - 1)

    def r_index(self, k: int) -> int:
        return self.offset + 2 * self.n + (k - self.t_start - 1)


@dataclass(frozen=True)
class AtcLayout:
    """Bijection between the flat decision vector and (u, psi, r) per aircraft."""

    slots: tuple[AircraftSlot, ...]

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "AtcLayout":
        slots, off = [], 0
        for rec in scenario.aircraft:
            slot = AircraftSlot(rec.aircraft_id, rec.t_start, rec.t_end, off)
            slots.append(slot)
            off += slot.size
        return cls(tuple(slots))

    @property
    def size(self) -> int:
        return sum(s.size for s in self.slots)

    def pack(self, u: Sequence[np.ndarray], psi: Sequence[np.ndarray], r: Sequence[np.ndarray]) -> np.ndarray:
        x = np.zeros(self.size)
        for s, ui, pi, ri in zip(self.slots, u, psi, r):
            x[s.u], x[s.psi], x[s.r] = ui, pi, ri
        return x

    def unpack(self, x: np.ndarray):
        return (
            [x[s.u] for s in self.slots],
            [x[s.psi] for s in self.slots],
            [x[s.r] for s in self.slots],
        )


# --- cost terms ------------------------------------------------------------------


def j1(radii, eps: float) -> float:
    """Negative log-volume of the corridors over interior steps.

    ``radii`` is one aircraft's radius sequence or a list of them.
    """
    flat = np.concatenate([np.atleast_1d(np.asarray(r, float)) for r in radii]) if len(radii) else np.zeros(0)
    return -float(np.sum(np.log(flat + eps)))


def j2(centers, standard) -> float:
    """Squared deviation from the standard trajectories plus squared
    step-to-step change of that deviation, over interior steps.

    Arguments are one aircraft's ``(m, 2)`` point lists or lists of them.
    """
    total = 0.0
    for c, s in zip(_per_aircraft(centers), _per_aircraft(standard)):
        if c.shape != s.shape:
            raise InvalidInput(f"centers {c.shape} and standard {s.shape} misaligned")
        delta = c - s
        total += float(np.sum(delta**2) + np.sum(np.diff(delta, axis=0) ** 2))
    return total


def _per_aircraft(points) -> list[np.ndarray]:
    if isinstance(points, np.ndarray) and points.ndim == 2 or len(points) and np.ndim(points[0]) == 1:
        return [np.asarray(points, float).reshape(-1, 2)]
    return [np.asarray(p, float).reshape(-1, 2) for p in points]


# --- problem assembly --------------------------------------------------------------


class _Evaluator:
    """Caches shooting results for the last decision vector."""

    def __init__(self, scenario: Scenario, layout: AtcLayout, disturbed: bool = False):
        self.recs = scenario.aircraft
        self.layout = layout
        self.disturbed = disturbed
        self._x = None
        self._shots = None

    def shots(self, x):
        if self._x is None or not np.array_equal(x, self._x):
            self._x = np.array(x, dtype=float)
            self._shots = [
                shoot(
                    rec.initial.as_array(),
                    x[s.u],
                    x[s.psi],
                    rec.disturbance_array() if self.disturbed else None,
                )
                for rec, s in zip(self.recs, self.layout.slots)
            ]
        return self._shots


def zcols(slot: AircraftSlot) -> np.ndarray:
    """Flat columns of one aircraft's stacked ``[u, psi]`` controls."""
    return np.r_[slot.u, slot.psi]


@dataclass
class AtcProblem(NlpProblem):
    scenario: Optional[Scenario] = None
    layout: Optional[AtcLayout] = None
    prev_selections: Optional[Mapping[str, Trajectory]] = None

    def j_atc(self, x) -> float:
        return self.objective(np.asarray(x, float))


def _norm_block(name: str, rows: NormRows, ev: _Evaluator) -> ConstraintBlock:
    return ConstraintBlock(
        name,
        lambda x: rows.values(ev.shots(x), x),
        lambda x: rows.jac(ev.shots(x), x),
        len(rows),
        lambda x, w: rows.hess(ev.shots(x), x, w),
    )


def _state_window_rows(slots, shots, N, attr, ks):
    """Jacobian rows of ``v`` (or ``theta``) at state indices ``ks`` per aircraft."""
    rows = []
    for s, sh, kk in zip(slots, shots, ks):
        block = np.zeros((len(kk), N))
        block[:, zcols(s)] = getattr(sh, attr)[kk]
        rows.append(block)
    return rows


def build_problem(
    scenario: Scenario,
    prev_selections: Optional[Mapping[str, Trajectory]] = None,
    tau: Optional[int] = None,
) -> AtcProblem:
    """Assemble the joint corridor-design NLP.

    With ``tau`` the scenario is first advanced ``tau`` steps past its
    earliest start (see :func:`advance_scenario`), and the redesigned
    corridors must contain ``prev_selections`` at every interior step.
    Control bounds are variable bounds; all other families are constraint
    blocks.
    """
    if tau is not None:
        if prev_selections is None:
            raise InvalidInput("re-planning offset given without previous selections")
        scenario, _ = advance_scenario(scenario, prev_selections, plan_start(scenario) + tau)
    if not scenario.aircraft:
        raise InvalidInput("scenario has no aircraft")
    lim = scenario.limits
    layout = AtcLayout.for_scenario(scenario)
    ev = _Evaluator(scenario, layout)
    N = layout.size
    recs = scenario.aircraft
    slots = layout.slots
    cols = [zcols(s) for s in slots]

    if prev_selections is not None:
        for rec in recs:
            sel = prev_selections.get(rec.aircraft_id)
            if sel is None:
                raise InvalidInput(f"no previous selection for aircraft {rec.aircraft_id}")
            if sel.t_start > rec.t_start + 1 or sel.t_end < rec.t_end - 1:
                raise InvalidInput(
                    f"previous selection of {rec.aircraft_id} does not span [{rec.t_start + 1}, {rec.t_end - 1}]"
                )

    standards = [rec.standard.positions[1:-1] for rec in recs]

    def _dev_grad(sh, std):
        # d J2 / d interior centres
        d = sh.pos[1:-1] - std
        dd = np.diff(d, axis=0)
        gd = 2 * d
        gd[1:] += 2 * dd
        gd[:-1] -= 2 * dd
        return lim.alpha * gd

    def objective(x):
        shots = ev.shots(x)
        val = 0.0
        for s, sh, std in zip(slots, shots, standards):
            val -= np.sum(np.log(x[s.r] + lim.eps))
            if lim.alpha:
                d = sh.pos[1:-1] - std
                val += lim.alpha * (np.sum(d**2) + np.sum(np.diff(d, axis=0) ** 2))
        return float(val)

    def gradient(x):
        shots = ev.shots(x)
        g = np.zeros(N)
        for s, c, sh, std in zip(slots, cols, shots, standards):
            g[s.r] = -1.0 / (x[s.r] + lim.eps)
            if lim.alpha:
                g[c] += np.einsum("kc,kcm->m", _dev_grad(sh, std), sh.D[1:-1])
        return g

    def hessian(x):
        shots = ev.shots(x)
        H = np.zeros((N, N))
        for s, c, sh, std in zip(slots, cols, shots, standards):
            ri = np.arange(s.r.start, s.r.stop)
            H[ri, ri] = 1.0 / (x[s.r] + lim.eps) ** 2
            if lim.alpha:
                Dk = sh.D[1:-1]
                dD = np.diff(Dk, axis=0)
                gn = np.einsum("kcm,kcl->ml", Dk, Dk) + np.einsum("kcm,kcl->ml", dD, dD)
                curv = np.einsum("kc,kcml->ml", _dev_grad(sh, std), sh.T[1:-1])
                H[np.ix_(c, c)] += 2 * lim.alpha * gn + curv
        return H

    ks_all = [np.arange(1, s.n + 1) for s in slots]

    # speed bounds at every reconstructed state
    def speed_fun(x):
        shots = ev.shots(x)
        return np.concatenate(
            [np.concatenate([lim.v_min - sh.v[1:], sh.v[1:] - lim.v_max]) for sh in shots]
        )

    def speed_jac(x):
        shots = ev.shots(x)
        out = []
        for r in _state_window_rows(slots, shots, N, "dv", ks_all):
            out.extend([-r, r])
        return np.vstack(out)

    refs = [terminal_references(rec, lim) for rec in recs]

    def terminal_fun(x):
        shots = ev.shots(x)
        out = []
        for sh, (v_ter, th_ter) in zip(shots, refs):
            dv, dth = sh.v[-1] - v_ter, sh.theta[-1] - th_ter
            out.extend([dv - lim.delta_v, -dv - lim.delta_v, dth - lim.delta_theta, -dth - lim.delta_theta])
        return np.array(out)

    def terminal_jac(x):
        shots = ev.shots(x)
        J = np.zeros((4 * len(slots), N))
        for i, (c, sh) in enumerate(zip(cols, shots)):
            J[4 * i, c] = sh.dv[-1]
            J[4 * i + 1, c] = -sh.dv[-1]
            J[4 * i + 2, c] = sh.dth[-1]
            J[4 * i + 3, c] = -sh.dth[-1]
        return J

    conflict_rows = []
    for i in range(len(recs)):
        for j in range(i + 1, len(recs)):
            si, sj = slots[i], slots[j]
            for k in sorted(set(recs[i].interior_steps) & set(recs[j].interior_steps)):
                conflict_rows.append(
                    NormRow(
                        terms=((i, k - si.t_start, 1.0), (j, k - sj.t_start, -1.0)),
                        sign=-1.0,
                        lower=True,
                        const=lim.safety_margin,
                        linear=((si.r_index(k), 1.0), (sj.r_index(k), 1.0)),
                    )
                )

    # adjacent-disk gaps; boundary disks have zero radius
    feas_rows = []
    for a, s in enumerate(slots):
        low, high = [], []
        for k in range(s.n):
            radii = tuple((s.r.start + idx - 1, 1.0) for idx in (k, k + 1) if 1 <= idx <= s.n - 1)
            terms = ((a, k + 1, 1.0), (a, k, -1.0))
            low.append(NormRow(terms, -1.0, True, lim.v_min, linear=radii))
            high.append(NormRow(terms, 1.0, False, -lim.v_max, linear=radii))
        feas_rows.extend(low + high)

    term_offsets = [np.array(rec.terminal.position) for rec in recs]

    def term_pos_fun(x):
        shots = ev.shots(x)
        return np.concatenate([sh.pos[-1] - t for sh, t in zip(shots, term_offsets)])

    def term_pos_jac(x):
        shots = ev.shots(x)
        J = np.zeros((2 * len(slots), N))
        for i, (c, sh) in enumerate(zip(cols, shots)):
            J[2 * i : 2 * i + 2, c] = sh.D[-1]
        return J

    def term_pos_hess(x, w):
        shots = ev.shots(x)
        H = np.zeros((N, N))
        for i, (c, sh) in enumerate(zip(cols, shots)):
            H[np.ix_(c, c)] += np.tensordot(w[2 * i : 2 * i + 2], sh.T[-1], axes=1)
        return H

    def zero_hess(x, w):
        return np.zeros((N, N))

    n_total = sum(s.n for s in slots)
    ineqs = [
        ConstraintBlock("speed", speed_fun, speed_jac, 2 * n_total, zero_hess),
        ConstraintBlock("terminal_window", terminal_fun, terminal_jac, 4 * len(slots), zero_hess),
        _norm_block("conflict", NormRows(conflict_rows, cols, N), ev),
        _norm_block("feasibility", NormRows(feas_rows, cols, N), ev),
    ]

    if prev_selections is not None:
        op_rows = []
        for a, (rec, s) in enumerate(zip(recs, slots)):
            sel = prev_selections[rec.aircraft_id]
            for k in rec.interior_steps:
                op_rows.append(
                    NormRow(
                        terms=((a, k - s.t_start, 1.0),),
                        sign=1.0,
                        lower=False,
                        offset=-np.array(sel.position_at(k), dtype=float),
                        linear=((s.r_index(k), -1.0),),
                    )
                )
        ineqs.append(_norm_block("operation", NormRows(op_rows, cols, N), ev))

    eqs = [ConstraintBlock("terminal_position", term_pos_fun, term_pos_jac, 2 * len(slots), term_pos_hess)]

    lower = np.empty(N)
    upper = np.empty(N)
    for s in slots:
        lower[s.u], upper[s.u] = -lim.u_max, lim.u_max
        lower[s.psi], upper[s.psi] = -lim.psi_max, lim.psi_max
        lower[s.r], upper[s.r] = 0.0, np.inf

    return AtcProblem(
        n=N,
        objective=objective,
        gradient=gradient,
        inequalities=ineqs,
        equalities=eqs,
        lower=lower,
        upper=upper,
        hessian=hessian,
        scenario=scenario,
        layout=layout,
        prev_selections=prev_selections,
    )


def initial_guess(
    scenario: Scenario,
    prev_selections: Optional[Mapping[str, Trajectory]] = None,
) -> np.ndarray:
    """Controls by inverse dynamics on the standard trajectory (or on the
    previous pilot selection when re-planning); radii start at zero."""
    lim = scenario.limits
    layout = AtcLayout.for_scenario(scenario)
    us, psis, rs = [], [], []
    for rec in scenario.aircraft:
        if prev_selections is not None and rec.aircraft_id in prev_selections:
            sel = prev_selections[rec.aircraft_id]
            ref = np.array([sel.position_at(k) for k in range(rec.t_start, rec.t_end + 1)])
        else:
            ref = rec.standard.positions
        v_ter, th_ter = terminal_references(rec, lim)
        u, psi = inverse_dynamics(rec.initial.as_array(), ref, v_ter, th_ter)
        us.append(np.clip(u, -lim.u_max, lim.u_max))
        psis.append(np.clip(psi, -lim.psi_max, lim.psi_max))
        rs.append(np.zeros(rec.horizon - 1))
    return layout.pack(us, psis, rs)


# --- solutions --------------------------------------------------------------------


@dataclass
class AtcSolution:
    corridors: list[Corridor]
    controls: dict[str, list[ControlInput]]
    result: SolveResult
    residuals: dict[str, float] = field(default_factory=dict)
    scenario: Optional[Scenario] = None

    @property
    def converged(self) -> bool:
        return self.result.converged

    def corridor(self, aircraft_id: str) -> Corridor:
        for c in self.corridors:
            if c.aircraft_id == aircraft_id:
                return c
        raise KeyError(aircraft_id)

    def center_trajectory(self, aircraft_id: str) -> Trajectory:
        rec = self.scenario.record(aircraft_id)
        return rollout(rec.initial, self.controls[aircraft_id], aircraft_id=aircraft_id, t_start=rec.t_start)


def decode(problem: AtcProblem, x: np.ndarray) -> tuple[list[Corridor], dict[str, list[ControlInput]]]:
    corridors, controls = [], {}
    for rec, s in zip(problem.scenario.aircraft, problem.layout.slots):
        ctrl = [ControlInput(float(a), float(b)) for a, b in zip(x[s.u], x[s.psi])]
        traj = rollout(rec.initial, ctrl)
        radii = np.concatenate([[0.0], np.maximum(x[s.r], 0.0), [0.0]])
        corridors.append(Corridor(rec.aircraft_id, rec.t_start, traj.positions, radii))
        controls[rec.aircraft_id] = ctrl
    return corridors, controls


def constraint_residuals(problem: NlpProblem, x: np.ndarray) -> dict[str, float]:
    """Largest violation per constraint family (0 when satisfied)."""
    out = {}
    for b in problem.inequalities:
        out[b.name] = max(0.0, float(np.max(b.fun(x), initial=0.0)))
    for b in problem.equalities:
        out[b.name] = float(np.max(np.abs(b.fun(x)), initial=0.0))
    return out


def design_sets(
    scenario: Scenario,
    config: SolverConfig = SolverConfig(),
    prev_selections: Optional[Mapping[str, Trajectory]] = None,
    tau: Optional[int] = None,
) -> AtcSolution:
    problem = build_problem(scenario, prev_selections, tau)
    x0 = initial_guess(problem.scenario, prev_selections)
    result = solve(problem, x0, config)
    corridors, controls = decode(problem, result.x_opt)
    return AtcSolution(corridors, controls, result, constraint_residuals(problem, result.x_opt), problem.scenario)


# --- re-planning helpers -------------------------------------------------------------


def plan_start(scenario: Scenario) -> int:
    return min(rec.t_start for rec in scenario.aircraft)


def advance_scenario(
    scenario: Scenario, selections: Mapping[str, Trajectory], new_time: int
) -> tuple[Scenario, list[str]]:
    """Move every airborne aircraft's start to ``new_time``.

    The new initial state is the selected state at ``new_time``.  Aircraft
    that would have fewer than one interior step left are dropped; aircraft
    that have not started yet are kept unchanged.
    """
    kept, dropped = [], []
    for rec in scenario.aircraft:
        if new_time <= rec.t_start:
            kept.append(rec)
            continue
        if new_time >= rec.t_end - 1:
            dropped.append(rec.aircraft_id)
            continue
        sel = selections.get(rec.aircraft_id)
        if sel is None:
            raise InvalidInput(f"no previous selection for aircraft {rec.aircraft_id}")
        if not sel.t_start <= new_time <= sel.t_end:
            raise InvalidInput(f"selection of {rec.aircraft_id} does not reach step {new_time}")
        shift = new_time - rec.t_start
        kept.append(
            AircraftRecord(
                aircraft_id=rec.aircraft_id,
                t_start=new_time,
                t_end=rec.t_end,
                initial=sel.state_at(new_time),
                terminal=rec.terminal,
                standard=rec.standard.tail(new_time),
                disturbance=rec.disturbance[shift:],
            )
        )
    new = Scenario(tuple(kept), scenario.limits, scenario.timestep_seconds, scenario.units)
    return new, dropped


def corridor_conflict_margins(corridors: Sequence[Corridor]) -> list[tuple[str, str, int, float]]:
    """Exact pairwise disk separations over shared interior steps."""
    out = []
    for a in range(len(corridors)):
        for b in range(a + 1, len(corridors)):
            ca, cb = corridors[a], corridors[b]
            for k in sorted(set(ca.interior_steps) & set(cb.interior_steps)):
                m = conflict_margin(ca.center_at(k), cb.center_at(k), ca.radius_at(k), cb.radius_at(k))
                out.append((ca.aircraft_id, cb.aircraft_id, k, m))
    return out
