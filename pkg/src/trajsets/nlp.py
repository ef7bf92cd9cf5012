"""Smooth constrained NLPs and an augmented-Lagrangian solver.

Problems are stated as

    minimize f(x)  s.t.  g(x) <= 0,  h(x) = 0,  lower <= x <= upper

with constraints grouped into named blocks (one block per constraint family)
that return a value vector and its dense Jacobian.  The outer loop updates
Powell-Hestenes-Rockafellar multipliers; each inner subproblem is minimised
under the box bounds by a projected Newton method.  Problems may supply
second derivatives (objective Hessian, weighted constraint Hessians);
missing ones are formed by differencing the analytic gradients.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray


class NumericalFailure(ArithmeticError):
    pass


@dataclass
class ConstraintBlock:
    """A vector of constraints sharing one evaluation routine."""

    name: str
    fun: Callable[[Array], Array]
    jac: Callable[[Array], Array]
    size: int
    hess: Optional[Callable[[Array, Array], Array]] = None  # (x, weights) -> sum_j w_j grad2 c_j


@dataclass
class NlpProblem:
    n: int
    objective: Callable[[Array], float]
    gradient: Callable[[Array], Array]
    inequalities: list[ConstraintBlock] = field(default_factory=list)
    equalities: list[ConstraintBlock] = field(default_factory=list)
    lower: Optional[Array] = None
    upper: Optional[Array] = None
    hessian: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        self.lower = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bound vectors must have length n")

    @property
    def n_inequalities(self) -> int:
        return sum(b.size for b in self.inequalities)

    @property
    def n_equalities(self) -> int:
        return sum(b.size for b in self.equalities)

    @property
    def n_bounds(self) -> int:
        """Number of finite one-sided variable bounds."""
        return int(np.isfinite(self.lower).sum() + np.isfinite(self.upper).sum())

    def ineq(self, x: Array) -> Array:
        return _stack([b.fun(x) for b in self.inequalities])

    def eq(self, x: Array) -> Array:
        return _stack([b.fun(x) for b in self.equalities])

    def ineq_jac(self, x: Array) -> Array:
        return _vstack([b.jac(x) for b in self.inequalities], self.n)

    def eq_jac(self, x: Array) -> Array:
        return _vstack([b.jac(x) for b in self.equalities], self.n)

    def violation(self, x: Array) -> float:
        g, h = self.ineq(x), self.eq(x)
        v = 0.0
        if g.size:
            v = max(v, float(np.max(g)))
        if h.size:
            v = max(v, float(np.max(np.abs(h))))
        return max(v, 0.0)

    def clip(self, x: Array) -> Array:
        return np.clip(x, self.lower, self.upper)


def _stack(parts):
    return np.concatenate([np.atleast_1d(p) for p in parts]) if parts else np.zeros(0)


def _vstack(parts, n):
    return np.vstack(parts) if parts else np.zeros((0, n))


@dataclass(frozen=True)
class SolverConfig:
    max_outer_iters: int = 50
    max_inner_iters: int = 500
    constraint_tol: float = 1e-6
    stationarity_tol: float = 1e-5
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    max_penalty: float = 1e10
    finite_diff_step: float = 1e-6
    rng_seed: int = 0

    def __post_init__(self):
        if self.constraint_tol <= 0 or self.stationarity_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValueError("iteration limits must be positive")


CONVERGED = "converged"
MAX_ITERS = "max_iters"
INFEASIBLE_START = "infeasible_start"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolveResult:
    x_opt: Array
    objective_value: float
    max_constraint_violation: float
    status: str
    stationarity: float = math.inf
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    multipliers_eq: Array = field(default_factory=lambda: np.zeros(0))
    multipliers_ineq: Array = field(default_factory=lambda: np.zeros(0))

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["outer_iter", "objective", "violation"])
        for it, f, v in self.trace:
            w.writerow([it, f"{f:.9g}", f"{v:.9g}"])
        return buf.getvalue()


def _column_scale(problem: NlpProblem, x: Array) -> Array:
    cols = np.abs(problem.gradient(x))
    J = np.vstack([problem.ineq_jac(x), problem.eq_jac(x), cols[None, :]])
    norms = np.sqrt(np.sum(J * J, axis=0))
    norms = np.where(np.isfinite(norms) & (norms > 0), norms, 1.0)
    return 1.0 / np.maximum(norms, 1e-8)


def _projected_gradient_norm(x, grad, lower, upper) -> float:
    return float(np.max(np.abs(x - np.clip(x - grad, lower, upper)), initial=0.0))


def _fd_symmetric(grad_fun: Callable[[Array], Array], x: Array, h: float) -> Array:
    """Hessian by forward differences of an analytic gradient."""
    g0 = grad_fun(x)
    H = np.empty((x.size, x.size))
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += step
        H[:, i] = (grad_fun(xp) - g0) / step
    return 0.5 * (H + H.T)


class _Merit:
    """PHR augmented Lagrangian for fixed multipliers and penalty."""

    def __init__(self, problem: NlpProblem, lam: Array, mu: Array, rho: float, h: float):
        self.p, self.lam, self.mu, self.rho, self.h = problem, lam, mu, rho, h

    def value(self, x: Array) -> float:
        p, rho = self.p, self.rho
        val = p.objective(x)
        if self.lam.size:
            h = p.eq(x)
            val += self.lam @ h + 0.5 * rho * (h @ h)
        if self.mu.size:
            s = np.maximum(0.0, self.mu + rho * p.ineq(x))
            val += (s @ s - self.mu @ self.mu) / (2 * rho)
        if not math.isfinite(val):
            raise NumericalFailure("non-finite augmented Lagrangian")
        return float(val)

    def _weights(self, x):
        we = self.lam + self.rho * self.p.eq(x) if self.lam.size else np.zeros(0)
        wi = np.maximum(0.0, self.mu + self.rho * self.p.ineq(x)) if self.mu.size else np.zeros(0)
        return we, wi

    def gradient(self, x: Array) -> Array:
        p = self.p
        we, wi = self._weights(x)
        grad = p.gradient(x).copy()
        if we.size:
            grad += p.eq_jac(x).T @ we
        if wi.size:
            grad += p.ineq_jac(x).T @ wi
        if not np.all(np.isfinite(grad)):
            raise NumericalFailure("non-finite augmented Lagrangian gradient")
        return grad

    def hessian(self, x: Array) -> Array:
        # generalised Hessian: the max(0, .) term contributes only rows with
        # positive shifted value
        p, rho = self.p, self.rho
        we, wi = self._weights(x)
        if p.hessian is not None:
            H = np.array(p.hessian(x), dtype=float)
        else:
            H = _fd_symmetric(p.gradient, x, self.h)
        for blocks, w in ((p.equalities, we), (p.inequalities, wi)):
            off = 0
            for b in blocks:
                wb = w[off : off + b.size]
                off += b.size
                if not np.any(wb):
                    continue
                if b.hess is not None:
                    H += b.hess(x, wb)
                else:
                    H += _fd_symmetric(lambda z, b=b, wb=wb: b.jac(z).T @ wb, x, self.h)
        if we.size:
            Je = p.eq_jac(x)
            H += rho * Je.T @ Je
        if wi.size:
            Ji = p.ineq_jac(x)[wi > 0]
            H += rho * Ji.T @ Ji
        if not np.all(np.isfinite(H)):
            raise NumericalFailure("non-finite augmented Lagrangian Hessian")
        return H


def _projected_newton(merit: _Merit, x: Array, d: Array, lo: Array, hi: Array, gtol: float, max_iter: int) -> tuple[Array, int]:
    """Minimise ``merit`` over the box in scaled variables ``z = x / d``.

    Variables near a bound whose gradient pushes outward are held by a
    scaled gradient step; the rest take a Newton step with eigenvalues
    floored to keep the model convex.  A projected Armijo search along the
    bent path ``clip(z + a * step)`` enforces descent.
    """
    zlo, zhi = lo / d, hi / d
    z = np.clip(x / d, zlo, zhi)
    f = merit.value(z * d)
    it = 0
    for it in range(1, max_iter + 1):
        g = merit.gradient(z * d) * d
        pg = _projected_gradient_norm(z, g, zlo, zhi)
        if pg <= gtol:
            break
        eps = min(1e-3, pg)
        active = ((z <= zlo + eps) & (g > 0)) | ((z >= zhi - eps) & (g < 0))
        free = ~active
        H = merit.hessian(z * d) * np.outer(d, d)
        step = np.zeros_like(z)
        if free.any():
            w, V = np.linalg.eigh(H[np.ix_(free, free)])
            floor = 1e-10 * max(1.0, float(np.max(np.abs(w))))
            w = np.maximum(np.abs(w), floor)
            step[free] = -V @ ((V.T @ g[free]) / w)
        diag = np.maximum(np.abs(np.diag(H)), 1e-10)
        step[active] = -g[active] / diag[active]

        alpha, accepted = 1.0, False
        for _ in range(40):
            z_new = np.clip(z + alpha * step, zlo, zhi)
            try:
                f_new = merit.value(z_new * d)
            except (NumericalFailure, ArithmeticError, ValueError):
                alpha *= 0.5
                continue
            if f_new <= f + 1e-4 * (g @ (z_new - z)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted or np.max(np.abs(z_new - z)) == 0.0:
            break
        z, f = z_new, f_new
    return np.clip(z * d, lo, hi), it


def solve(problem: NlpProblem, x0: Sequence[float], config: SolverConfig = SolverConfig()) -> SolveResult:
    """Minimise ``problem`` from the warm start ``x0``.

    Convergence requires the constraint violation to be within
    ``constraint_tol`` and the projected Lagrangian gradient, relative to
    ``max(1, |grad f|)``, within ``stationarity_tol``; both are measured in
    variables rescaled so that every constraint column has unit size at
    ``x0``.
    """
    lo, hi = problem.lower, problem.upper
    x = problem.clip(np.asarray(x0, dtype=float).copy())
    me, mi = problem.n_equalities, problem.n_inequalities

    try:
        f0 = problem.objective(x)
        g0, h0 = problem.ineq(x), problem.eq(x)
    except (ArithmeticError, ValueError):
        f0 = math.nan
        g0 = h0 = np.zeros(0)
    if not (math.isfinite(f0) and np.all(np.isfinite(g0)) and np.all(np.isfinite(h0))):
        return SolveResult(x, f0, math.inf, INFEASIBLE_START)

    lam = np.zeros(me)
    mu = np.zeros(mi)
    rho = config.initial_penalty
    trace = []
    prev_viol = math.inf
    best = None  # (key, x, f, viol, stat)
    status = MAX_ITERS
    d = _column_scale(problem, x)
    zlo, zhi = lo / d, hi / d
    last_good = x.copy()
    polished = False
    for outer in range(config.max_outer_iters):
        try:
            gf = problem.gradient(x) * d
            scale = max(1.0, float(np.max(np.abs(gf), initial=0.0)))
            merit = _Merit(problem, lam, mu, rho, config.finite_diff_step)
            x_new, _ = _projected_newton(
                merit, x, d, lo, hi, 0.5 * config.stationarity_tol * scale, config.max_inner_iters
            )
            f = float(problem.objective(x_new))
            g, h = problem.ineq(x_new), problem.eq(x_new)
        except (NumericalFailure, np.linalg.LinAlgError):
            status = NUMERICAL_FAILURE
            break
        if not (math.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            status = NUMERICAL_FAILURE
            break
        x = x_new
        last_good = x.copy()
        viol = max(float(np.max(g, initial=0.0)), float(np.max(np.abs(h), initial=0.0)), 0.0)
        trace.append((outer, f, viol))

        # first-order multiplier update, then KKT residual with new estimates
        if me:
            lam = lam + rho * h
        if mi:
            mu = np.maximum(0.0, mu + rho * g)
        grad_l = problem.gradient(x).copy()
        if me:
            grad_l += problem.eq_jac(x).T @ lam
        if mi:
            grad_l += problem.ineq_jac(x).T @ mu
        gf = problem.gradient(x) * d
        scale = max(1.0, float(np.max(np.abs(gf), initial=0.0)))
        stat = _projected_gradient_norm(x / d, grad_l * d, zlo, zhi) / scale

        key = (viol > config.constraint_tol, viol if viol > config.constraint_tol else f)
        if best is None or key < best[0]:
            best = (key, x.copy(), f, viol, stat)

        if viol <= config.constraint_tol and stat <= config.stationarity_tol:
            if polished or viol <= 0.1 * config.constraint_tol:
                status = CONVERGED
                best = (key, x.copy(), f, viol, stat)
                break
            # one extra pass with the refreshed multipliers tightens feasibility
            polished = True

        if viol > max(config.constraint_tol, 0.25 * prev_viol) and rho < config.max_penalty:
            rho = min(rho * config.penalty_growth, config.max_penalty)
        prev_viol = min(prev_viol, viol)

    if best is None:
        f = problem.objective(last_good)
        return SolveResult(last_good, f, problem.violation(last_good), status, trace=trace)
    _, xb, fb, vb, sb = best
    if status != CONVERGED and vb <= config.constraint_tol and sb <= config.stationarity_tol:
        status = CONVERGED
    return SolveResult(xb, fb, vb, status, sb, trace, lam, mu)


# --- derivative checks ----------------------------------------------------------


def finite_diff_gradient(f: Callable[[Array], float], x: Sequence[float], h: float = 1e-6) -> Array:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericalFailure(f"non-finite evaluation at component {i}")
        out[i] = (fp - fm) / (2 * h)
    return out


def finite_diff_jacobian(f: Callable[[Array], Array], x: Sequence[float], h: float = 1e-6) -> Array:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = np.atleast_1d(f(xp)), np.atleast_1d(f(xm))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NumericalFailure(f"non-finite evaluation at component {i}")
        cols.append((fp - fm) / (2 * h))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


@dataclass
class GradientCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def failures(self) -> list[str]:
        return [k for k, e in self.errors.items() if e > self.tol]


def relative_error(analytic: Array, numeric: Array) -> float:
    """Row-wise ``|a - fd|_inf / max(|fd|_inf, 1)``, maximised over rows."""
    a = np.atleast_2d(analytic)
    fd = np.atleast_2d(numeric)
    if a.size == 0:
        return 0.0
    num = np.max(np.abs(a - fd), axis=1)
    den = np.maximum(np.max(np.abs(fd), axis=1), 1.0)
    return float(np.max(num / den))


def check_gradient(problem: NlpProblem, x: Sequence[float], tol: float = 1e-4, h: float = 1e-6) -> GradientCheckReport:
    x = np.asarray(x, dtype=float)
    errors = {
        "objective": relative_error(problem.gradient(x), finite_diff_gradient(problem.objective, x, h))
    }
    for kind, blocks in (("ineq", problem.inequalities), ("eq", problem.equalities)):
        for b in blocks:
            if b.size == 0:
                continue
            errors[f"{kind}:{b.name}"] = relative_error(b.jac(x), finite_diff_jacobian(b.fun, x, h).reshape(b.size, -1))
    return GradientCheckReport(errors, tol)
