"""Domain types, point-mass dynamics and constraint margins.

Units follow the bundled scenario: distances in nautical miles, one timestep
is six minutes, speeds are NM per step and headings are unwrapped radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

#: Smoothing added under square roots so norms stay differentiable at 0.
NORM_EPS = 1e-12
NORM_DELTA = math.sqrt(NORM_EPS)


class InvalidInput(ValueError):
    """Raised when an operation receives malformed or non-finite input."""


def _finite(*values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise InvalidInput(f"non-finite value {value!r}")


@dataclass(frozen=True)
class AircraftState:
    x: float
    y: float
    v: float
    theta: float

    def __post_init__(self):
        _finite(self.x, self.y, self.v, self.theta)

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.theta])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "AircraftState":
        x, y, v, theta = (float(a) for a in values)
        return cls(x, y, v, theta)


@dataclass(frozen=True)
class ControlInput:
    u: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        _finite(self.u, self.psi)


@dataclass(frozen=True)
class Disturbance:
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        _finite(self.dx, self.dy)


@dataclass(frozen=True)
class Limits:
    """Bounds and weights shared by the ATC and pilot problems.

    ``v_ter`` and ``theta_ter`` are global terminal references; when left as
    ``None`` each aircraft uses the speed and heading of its own terminal
    state.  ``tol_terminal`` is the radius within which a pilot must reach the
    terminal position under wind.
    """

    psi_max: float = math.pi / 4
    u_max: float = 15.0
    v_min: float = 5.0
    v_max: float = 80.0
    delta_v: float = 1.0
    delta_theta: float = 0.1
    safety_margin: float = 3.0
    eps: float = 0.1
    alpha: float = 0.01
    tol_terminal: float = 0.5
    v_ter: Optional[float] = None
    theta_ter: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                _finite(value)
        if self.psi_max <= 0 or self.u_max <= 0:
            raise InvalidInput("psi_max and u_max must be positive")
        if not 0 <= self.v_min < self.v_max:
            raise InvalidInput("need 0 <= v_min < v_max")
        if self.delta_v < 0 or self.delta_theta < 0:
            raise InvalidInput("terminal windows must be non-negative")
        if self.safety_margin <= 0 or self.eps <= 0:
            raise InvalidInput("safety_margin and eps must be positive")
        if self.alpha < 0:
            raise InvalidInput("alpha must be non-negative")
        if self.tol_terminal < 0:
            raise InvalidInput("tol_terminal must be non-negative")

    def updated(self, **changes) -> "Limits":
        return replace(self, **changes)


@dataclass(frozen=True)
class Trajectory:
    """States of one aircraft at consecutive timesteps starting at ``t_start``.

    ``controls`` is optional and, when present, holds the inputs that map
    ``states[k]`` to ``states[k + 1]``.
    """

    aircraft_id: str
    t_start: int
    states: tuple[AircraftState, ...]
    controls: Optional[tuple[ControlInput, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if not self.states:
            raise InvalidInput("trajectory needs at least one state")
        if self.controls is not None:
            object.__setattr__(self, "controls", tuple(self.controls))
            if len(self.controls) != len(self.states) - 1:
                raise InvalidInput("controls must number len(states) - 1")

    @property
    def t_end(self) -> int:
        return self.t_start + len(self.states) - 1

    @property
    def positions(self) -> np.ndarray:
        return np.array([[s.x, s.y] for s in self.states])

    def state_at(self, k: int) -> AircraftState:
        if not self.t_start <= k <= self.t_end:
            raise InvalidInput(f"step {k} outside [{self.t_start}, {self.t_end}]")
        return self.states[k - self.t_start]

    def position_at(self, k: int) -> np.ndarray:
        s = self.state_at(k)
        return np.array([s.x, s.y])

    def tail(self, k: int) -> "Trajectory":
        """Sub-trajectory from step ``k`` to the end."""
        i = k - self.t_start
        if not 0 <= i < len(self.states):
            raise InvalidInput(f"step {k} outside trajectory")
        controls = None if self.controls is None else self.controls[i:]
        return Trajectory(self.aircraft_id, k, self.states[i:], controls)


@dataclass(frozen=True)
class Corridor:
    """Allowable safe set of one aircraft: one disk per timestep."""

    aircraft_id: str
    t_start: int
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(-1, 2)
        radii = np.array(self.radii, dtype=float).reshape(-1)
        if len(centers) != len(radii):
            raise InvalidInput("centers and radii lengths differ")
        if len(radii) == 0:
            raise InvalidInput("empty corridor")
        if not (np.all(np.isfinite(centers)) and np.all(np.isfinite(radii))):
            raise InvalidInput("corridor contains non-finite values")
        if np.any(radii < 0):
            raise InvalidInput("negative radius")
        centers.flags.writeable = False
        radii.flags.writeable = False
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)

    @property
    def t_end(self) -> int:
        return self.t_start + len(self.radii) - 1

    @property
    def interior_steps(self) -> range:
        return range(self.t_start + 1, self.t_end)

    def center_at(self, k: int) -> np.ndarray:
        return self.centers[k - self.t_start]

    def radius_at(self, k: int) -> float:
        return float(self.radii[k - self.t_start])

    def __eq__(self, other):
        if not isinstance(other, Corridor):
            return NotImplemented
        return (
            self.aircraft_id == other.aircraft_id
            and self.t_start == other.t_start
            and np.array_equal(self.centers, other.centers)
            and np.array_equal(self.radii, other.radii)
        )

    __hash__ = None


@dataclass(frozen=True)
class AircraftRecord:
    """Planning inputs for one aircraft.

    ``disturbance`` has one entry per control step, i.e. ``t_end - t_start``
    entries, and is only visible to the pilot.
    """

    aircraft_id: str
    t_start: int
    t_end: int
    initial: AircraftState
    terminal: AircraftState
    standard: Trajectory
    disturbance: tuple[Disturbance, ...] = field(default=())

    def __post_init__(self):
        if self.t_start >= self.t_end - 1:
            raise InvalidInput(
                f"aircraft {self.aircraft_id}: need t < T - 1, got t={self.t_start}, T={self.t_end}"
            )
        if self.standard.t_start != self.t_start or self.standard.t_end != self.t_end:
            raise InvalidInput(
                f"aircraft {self.aircraft_id}: standard trajectory must span "
                f"[{self.t_start}, {self.t_end}]"
            )
        dist = tuple(self.disturbance) or (Disturbance(),) * self.horizon
        if len(dist) != self.horizon:
            raise InvalidInput(
                f"aircraft {self.aircraft_id}: expected {self.horizon} disturbance entries, got {len(dist)}"
            )
        object.__setattr__(self, "disturbance", dist)

    @property
    def horizon(self) -> int:
        """Number of control steps, ``T - t``."""
        return self.t_end - self.t_start

    @property
    def interior_steps(self) -> range:
        return range(self.t_start + 1, self.t_end)

    def disturbance_array(self) -> np.ndarray:
        return np.array([[d.dx, d.dy] for d in self.disturbance], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class Scenario:
    aircraft: tuple[AircraftRecord, ...]
    limits: Limits = field(default_factory=Limits)
    timestep_seconds: float = 360.0
    units: str = "NM"

    def __post_init__(self):
        object.__setattr__(self, "aircraft", tuple(self.aircraft))
        ids = [a.aircraft_id for a in self.aircraft]
        if len(set(ids)) != len(ids):
            raise InvalidInput("duplicate aircraft ids")

    def record(self, aircraft_id: str) -> AircraftRecord:
        for rec in self.aircraft:
            if rec.aircraft_id == aircraft_id:
                return rec
        raise KeyError(aircraft_id)


def track_from_positions(aircraft_id: str, t_start: int, positions, initial_theta: Optional[float] = None) -> Trajectory:
    """Trajectory whose speed and heading at each step are those of the
    outgoing segment; the last state repeats its predecessor's.  Headings
    are unwrapped, starting near ``initial_theta`` when given."""
    pos = np.asarray(positions, dtype=float)
    if len(pos) < 2:
        raise InvalidInput(f"{aircraft_id}: a track needs at least two points")
    seg = np.diff(pos, axis=0)
    v = np.hypot(seg[:, 0], seg[:, 1])
    th = np.arctan2(seg[:, 1], seg[:, 0])
    if initial_theta is not None:
        th = np.unwrap(np.concatenate([[initial_theta], th]))[1:]
    else:
        th = np.unwrap(th)
    v = np.append(v, v[-1])
    th = np.append(th, th[-1])
    states = tuple(AircraftState(float(p[0]), float(p[1]), float(a), float(b)) for p, a, b in zip(pos, v, th))
    return Trajectory(aircraft_id, t_start, states)


# --- dynamics ---------------------------------------------------------------


def step(state: AircraftState, control: ControlInput) -> AircraftState:
    return AircraftState(
        state.x + state.v * math.cos(state.theta),
        state.y + state.v * math.sin(state.theta),
        state.v + control.u,
        state.theta + control.psi,
    )


def step_disturbed(state: AircraftState, control: ControlInput, d: Disturbance) -> AircraftState:
    nxt = step(state, control)
    return AircraftState(nxt.x + d.dx, nxt.y + d.dy, nxt.v, nxt.theta)


def rollout(
    x0: AircraftState,
    controls: Sequence[ControlInput],
    disturbances: Optional[Sequence[Disturbance]] = None,
    aircraft_id: str = "",
    t_start: int = 0,
) -> Trajectory:
    controls = tuple(controls)
    if disturbances is not None and len(disturbances) != len(controls):
        raise InvalidInput(
            f"{len(disturbances)} disturbances for {len(controls)} controls"
        )
    states = [x0]
    for k, c in enumerate(controls):
        if disturbances is None:
            states.append(step(states[-1], c))
        else:
            states.append(step_disturbed(states[-1], c, disturbances[k]))
    return Trajectory(aircraft_id, t_start, tuple(states), controls)


def rollout_arrays(x0: np.ndarray, u: np.ndarray, psi: np.ndarray, dist: Optional[np.ndarray] = None):
    """Vectorised rollout returning ``(x, y, v, theta)`` arrays of length n+1.

    Bit-for-bit equal to iterating :func:`step` since both accumulate in the
    same order.
    """
    n = len(u)
    x = np.empty(n + 1)
    y = np.empty(n + 1)
    v = np.empty(n + 1)
    th = np.empty(n + 1)
    x[0], y[0], v[0], th[0] = x0
    for k in range(n):
        x[k + 1] = x[k] + v[k] * math.cos(th[k])
        y[k + 1] = y[k] + v[k] * math.sin(th[k])
        if dist is not None:
            x[k + 1] += dist[k, 0]
            y[k + 1] += dist[k, 1]
        v[k + 1] = v[k] + u[k]
        th[k + 1] = th[k] + psi[k]
    return x, y, v, th


def controls_from_states(states: Sequence[AircraftState]) -> list[ControlInput]:
    """Recover controls from consecutive speeds and headings."""
    return [
        ControlInput(b.v - a.v, b.theta - a.theta) for a, b in zip(states[:-1], states[1:])
    ]


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    w = math.remainder(a, 2 * math.pi)
    return math.pi if w == -math.pi else w


def terminal_heading_reference(initial_theta: float, terminal_theta: float) -> float:
    """Terminal heading shifted by whole turns onto the branch closest to the
    initial heading, so the unwrapped window does not demand a full loop."""
    return initial_theta + wrap_angle(terminal_theta - initial_theta)


def terminal_references(rec: AircraftRecord, limits: Limits) -> tuple[float, float]:
    v_ter = rec.terminal.v if limits.v_ter is None else limits.v_ter
    theta = rec.terminal.theta if limits.theta_ter is None else limits.theta_ter
    return v_ter, terminal_heading_reference(rec.initial.theta, theta)


# --- margins ------------------------------------------------------------------


def conflict_margin(ci, cj, ri: float, rj: float) -> float:
    d = math.hypot(ci[0] - cj[0], ci[1] - cj[1])
    return d - (ri + rj)


def feasibility_margins(corridor: Corridor) -> list[tuple[float, float]]:
    c, r = corridor.centers, corridor.radii
    out = []
    for k in range(len(r) - 1):
        dist = math.hypot(c[k + 1, 0] - c[k, 0], c[k + 1, 1] - c[k, 1])
        out.append((dist - (r[k + 1] + r[k]), dist + (r[k + 1] + r[k])))
    return out


def containment_margin(center, radius: float, point) -> float:
    return radius - math.hypot(center[0] - point[0], center[1] - point[1])
