"""Synthetic standard trajectories and scenarios.

Recorded tracks are not redistributable, so standard trajectories are cubic
Hermite curves in time: they start and end at the given positions with the
given velocity vectors, which makes the first and last segments roughly
consistent with the boundary speeds and headings.
"""

from __future__ import annotations

import math

import numpy as np

from .model import (
    AircraftRecord,
    AircraftState,
    Disturbance,
    Limits,
    Scenario,
    terminal_heading_reference,
    track_from_positions,
)


def hermite_track(initial: AircraftState, terminal: AircraftState, steps: int) -> np.ndarray:
    """``steps + 1`` positions of a cubic Hermite curve between two states."""
    s = np.linspace(0.0, 1.0, steps + 1)[:, None]
    p0 = np.array(initial.position)
    p1 = np.array(terminal.position)
    th1 = terminal_heading_reference(initial.theta, terminal.theta)
    m0 = steps * initial.v * np.array([math.cos(initial.theta), math.sin(initial.theta)])
    m1 = steps * terminal.v * np.array([math.cos(th1), math.sin(th1)])
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1


def make_record(
    aircraft_id: str,
    t_start: int,
    t_end: int,
    initial: AircraftState,
    terminal: AircraftState,
    wind: tuple[float, float] = (0.0, 0.0),
    standard: np.ndarray | None = None,
) -> AircraftRecord:
    if standard is None:
        standard = hermite_track(initial, terminal, t_end - t_start)
    traj = track_from_positions(aircraft_id, t_start, standard, initial.theta)
    dist = (Disturbance(*wind),) * (t_end - t_start)
    return AircraftRecord(aircraft_id, t_start, t_end, initial, terminal, traj, dist)


def random_scenario(
    n_aircraft: int = 3,
    seed: int = 0,
    limits: Limits | None = None,
    radius: float = 300.0,
    wind: tuple[float, float] = (0.0, 0.0),
) -> Scenario:
    """Aircraft crossing a circular sector, entering and leaving on its rim.

    Entry/exit bearings, start times and speeds are drawn from ``seed``; the
    flight time is chosen so the mean ground speed lies within the limits.
    """
    limits = limits or Limits()
    rng = np.random.default_rng(seed)
    recs = []
    cruise = 0.5 * (limits.v_min + limits.v_max)
    for i in range(n_aircraft):
        a_in = rng.uniform(0, 2 * math.pi)
        a_out = a_in + math.pi + rng.uniform(-0.6, 0.6)
        p0 = radius * np.array([math.cos(a_in), math.sin(a_in)])
        p1 = radius * np.array([math.cos(a_out), math.sin(a_out)])
        dist = float(np.hypot(*(p1 - p0)))
        steps = max(4, int(round(dist / cruise)))
        heading = math.atan2(*(p1 - p0)[::-1])
        v = dist / steps
        t0 = int(rng.integers(0, 3))
        initial = AircraftState(float(p0[0]), float(p0[1]), v, heading)
        terminal = AircraftState(float(p1[0]), float(p1[1]), v, heading)
        recs.append(make_record(f"AC{i + 1}", t0, t0 + steps, initial, terminal, wind))
    return Scenario(tuple(recs), limits)
