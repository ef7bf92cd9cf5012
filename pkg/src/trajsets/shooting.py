"""Single-shooting kinematics with first and second control derivatives.

For one aircraft with ``n`` control steps the controls are stacked as
``z = [u_0 .. u_{n-1}, psi_0 .. psi_{n-1}]``.  Positions are

    p[k] = p[0] + sum_{j<k} v_j (cos theta_j, sin theta_j) (+ disturbances)

so every derivative is a windowed sum over ``j`` and is obtained from prefix
sums.  Disturbances are additive constants and do not change derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import NORM_DELTA, NORM_EPS, rollout_arrays


@dataclass
class Shot:
    pos: np.ndarray  # (n+1, 2)
    v: np.ndarray  # (n+1,)
    theta: np.ndarray  # (n+1,)
    D: np.ndarray  # (n+1, 2, 2n)   d pos / dz
    T: np.ndarray  # (n+1, 2, 2n, 2n)   d2 pos / dz2
    dv: np.ndarray  # (n+1, 2n)
    dth: np.ndarray  # (n+1, 2n)

    @property
    def n(self) -> int:
        return len(self.v) - 1

    @property
    def dpos_du(self) -> np.ndarray:
        return self.D[:, :, : self.n]

    @property
    def dpos_dpsi(self) -> np.ndarray:
        return self.D[:, :, self.n :]


def _prefix(a):
    return np.concatenate([[0.0], np.cumsum(a)])


def shoot(x0: np.ndarray, u: np.ndarray, psi: np.ndarray, dist: Optional[np.ndarray] = None) -> Shot:
    n = len(u)
    x, y, v, th = rollout_arrays(x0, u, psi, dist)
    c, s = np.cos(th[:n]), np.sin(th[:n])
    vn = v[:n]

    k = np.arange(n + 1)[:, None]
    m = np.arange(n)[None, :]
    first = k >= m + 2

    def window(a):
        # sum_{j=m+1}^{k-1} a_j
        p = _prefix(a)
        return np.where(first, p[:, None] - p[None, 1:], 0.0)

    D = np.zeros((n + 1, 2, 2 * n))
    D[:, 0, :n] = window(c)
    D[:, 1, :n] = window(s)
    D[:, 0, n:] = window(-vn * s)
    D[:, 1, n:] = window(vn * c)

    # second derivatives: sum over j from max(m, l) + 1 to k - 1
    start = np.maximum.outer(np.arange(n), np.arange(n)) + 1
    kk = np.arange(n + 1)[:, None, None]
    valid = start[None] <= kk - 1

    def window2(a):
        p = _prefix(a)
        return np.where(valid, p[:, None, None] - p[start][None], 0.0)

    T = np.zeros((n + 1, 2, 2 * n, 2 * n))
    cross_x, cross_y = window2(-s), window2(c)
    T[:, 0, :n, n:] = cross_x
    T[:, 0, n:, :n] = cross_x.transpose(0, 2, 1)
    T[:, 1, :n, n:] = cross_y
    T[:, 1, n:, :n] = cross_y.transpose(0, 2, 1)
    T[:, 0, n:, n:] = window2(-vn * c)
    T[:, 1, n:, n:] = window2(-vn * s)

    lower = (k > m).astype(float)
    dv = np.zeros((n + 1, 2 * n))
    dth = np.zeros((n + 1, 2 * n))
    dv[:, :n] = lower
    dth[:, n:] = lower
    return Shot(np.column_stack([x, y]), v, th, D, T, dv, dth)


def smooth_norm(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``sqrt(|z|^2 + eps)`` and its gradient w.r.t. ``z``."""
    z = np.atleast_2d(z)
    rho = np.sqrt(np.sum(z * z, axis=1) + NORM_EPS)
    return rho, z / rho[:, None]


def norm_upper(z):
    """Smoothed norm that never underestimates the true norm."""
    return smooth_norm(z)


def norm_lower(z):
    """Smoothed norm that never overestimates the true norm."""
    rho, g = smooth_norm(z)
    return rho - NORM_DELTA, g


@dataclass
class NormRow:
    """Constraint ``sign * |q| + sum(coef * x[col]) + const`` with
    ``q = sum(sigma * pos_a[k]) + offset``.

    ``lower`` selects the smoothed norm that never overestimates (use it
    when a large norm is the safe direction) instead of the one that never
    underestimates.
    """

    terms: tuple[tuple[int, int, float], ...]  # (aircraft index, state index, sigma)
    sign: float
    lower: bool
    const: float = 0.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    linear: tuple[tuple[int, float], ...] = ()


class NormRows:
    """Values, Jacobian and weighted Hessian of a list of :class:`NormRow`.

    ``zcols[a]`` gives the columns of aircraft ``a``'s controls in the flat
    decision vector.
    """

    def __init__(self, rows: Sequence[NormRow], zcols: Sequence[np.ndarray], n_vars: int):
        self.rows = list(rows)
        self.zcols = [np.asarray(z) for z in zcols]
        self.n_vars = n_vars

    def __len__(self):
        return len(self.rows)

    def _q(self, row, shots):
        q = row.offset.astype(float).copy()
        for a, k, sig in row.terms:
            q += sig * shots[a].pos[k]
        return q

    def values(self, shots, x) -> np.ndarray:
        out = np.empty(len(self.rows))
        for i, row in enumerate(self.rows):
            q = self._q(row, shots)
            rho = math.sqrt(q @ q + NORM_EPS)
            if row.lower:
                rho -= NORM_DELTA
            out[i] = row.sign * rho + row.const + sum(c * x[col] for col, c in row.linear)
        return out

    def jac(self, shots, x) -> np.ndarray:
        J = np.zeros((len(self.rows), self.n_vars))
        for i, row in enumerate(self.rows):
            q = self._q(row, shots)
            g = q / math.sqrt(q @ q + NORM_EPS)
            for a, k, sig in row.terms:
                J[i, self.zcols[a]] += row.sign * sig * (g @ shots[a].D[k])
            for col, c in row.linear:
                J[i, col] += c
        return J

    def hess(self, shots, x, w) -> np.ndarray:
        H = np.zeros((self.n_vars, self.n_vars))
        for i, row in enumerate(self.rows):
            if w[i] == 0.0:
                continue
            q = self._q(row, shots)
            rho = math.sqrt(q @ q + NORM_EPS)
            g = q / rho
            hq = (np.eye(2) - np.outer(g, g)) / rho
            scale = w[i] * row.sign
            for a, k, sa in row.terms:
                Da = shots[a].D[k]
                H[np.ix_(self.zcols[a], self.zcols[a])] += scale * sa * np.tensordot(g, shots[a].T[k], axes=1)
                for b, kb, sb in row.terms:
                    H[np.ix_(self.zcols[a], self.zcols[b])] += scale * sa * sb * (Da.T @ hq @ shots[b].D[kb])
        return H


def heading_unwrap(prev: float, angle: float) -> float:
    """Shift ``angle`` by whole turns so it lies within pi of ``prev``."""
    return prev + math.remainder(angle - prev, 2 * math.pi)


def inverse_dynamics(
    x0: np.ndarray,
    ref: np.ndarray,
    v_end: float,
    theta_end: float,
    dist: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Controls that make a rollout from ``x0`` follow the polyline ``ref``.

    Segment ``k`` of the polyline (minus the disturbance of that step) gives
    the speed and heading wanted at state ``k``.  The first state is fixed by
    ``x0`` and the last by the terminal references.  Heading changes are
    taken on the branch in (-pi, pi]; a zero-length segment keeps the
    previous heading.
    """
    ref = np.asarray(ref, dtype=float)
    seg = np.diff(ref, axis=0)
    if dist is not None:
        seg = seg - dist
    n = len(seg)
    speeds = np.hypot(seg[:, 0], seg[:, 1])
    headings = np.empty(n)
    prev = float(x0[3])
    for k in range(n):
        if speeds[k] > 0:
            prev = heading_unwrap(prev, math.atan2(seg[k, 1], seg[k, 0]))
        headings[k] = prev
    v = np.concatenate([[x0[2]], speeds[1:], [v_end]])
    th = np.concatenate([[x0[3]], headings[1:], [0.0]])
    th[-1] = heading_unwrap(th[-2], theta_end)
    return np.diff(v), np.diff(th)
