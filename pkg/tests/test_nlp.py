import math

import numpy as np
import pytest

from trajsets.nlp import (
    CONVERGED,
    INFEASIBLE_START,
    NUMERICAL_FAILURE,
    ConstraintBlock,
    NlpProblem,
    NumericalFailure,
    SolverConfig,
    check_gradient,
    finite_diff_gradient,
    finite_diff_jacobian,
    solve,
)


def lin(name, a, b):
    """Affine block a @ x + b."""
    a = np.atleast_2d(np.asarray(a, float))
    return ConstraintBlock(name, lambda x: a @ x + b, lambda x: a, a.shape[0])


def projection_problem():
    # min |x|^2  s.t.  1 - x1 <= 0
    return NlpProblem(2, lambda x: float(x @ x), lambda x: 2 * x, [lin("x1>=1", [[-1.0, 0.0]], 1.0)])


def log_problem():
    # min -ln(r + 1)  s.t.  r - 3 <= 0,  r >= 0 as a bound
    return NlpProblem(
        1,
        lambda x: -math.log(x[0] + 1),
        lambda x: np.array([-1 / (x[0] + 1)]),
        [lin("r<=3", [[1.0]], -3.0)],
        lower=np.zeros(1),
    )


def pinned_problem():
    return NlpProblem(1, lambda x: (x[0] - 2) ** 2, lambda x: np.array([2 * (x[0] - 2)]), equalities=[lin("x=5", [[1.0]], -5.0)])


EXAMPLES = {
    "projection": (projection_problem, [3.0, 2.0], [1.0, 0.0], 1.0),
    "log": (log_problem, [0.5], [3.0], -math.log(4)),
    "pinned": (pinned_problem, [0.0], [5.0], 9.0),
}


@pytest.mark.parametrize("name", EXAMPLES)
def test_trivial_examples(name):
    make, x0, x_star, f_star = EXAMPLES[name]
    cfg = SolverConfig()
    res = solve(make(), x0, cfg)
    assert res.status == CONVERGED
    assert np.allclose(res.x_opt, x_star, atol=1e-5)
    assert res.objective_value == pytest.approx(f_star, abs=1e-5)
    assert res.max_constraint_violation <= cfg.constraint_tol


def _projected_lagrangian_gradient(problem, res):
    x = res.x_opt
    g = problem.gradient(x).copy()
    if problem.n_equalities:
        g += problem.eq_jac(x).T @ res.multipliers_eq
    if problem.n_inequalities:
        g += problem.ineq_jac(x).T @ res.multipliers_ineq
    step = np.clip(x - g, problem.lower, problem.upper) - x
    return float(np.max(np.abs(step)))


@pytest.mark.parametrize("name", EXAMPLES)
def test_kkt_spot_check(name):
    make, x0, _, _ = EXAMPLES[name]
    cfg = SolverConfig()
    problem = make()
    res = solve(problem, x0, cfg)
    assert _projected_lagrangian_gradient(problem, res) <= 10 * cfg.stationarity_tol


@pytest.mark.parametrize("name", EXAMPLES)
def test_violation_non_increasing_after_first_update(name):
    make, x0, _, _ = EXAMPLES[name]
    # force several outer iterations by demanding a tight tolerance
    res = solve(make(), x0, SolverConfig(initial_penalty=0.1, penalty_growth=2.0, constraint_tol=1e-10))
    viol = [v for _, _, v in res.trace]
    assert len(viol) >= 2
    assert all(b <= a + 1e-15 for a, b in zip(viol[1:], viol[2:]))


def test_deterministic():
    a = solve(projection_problem(), [3.0, 2.0], SolverConfig(rng_seed=4))
    b = solve(projection_problem(), [3.0, 2.0], SolverConfig(rng_seed=4))
    assert np.array_equal(a.x_opt, b.x_opt)
    assert a.trace == b.trace
    assert a.objective_value == b.objective_value


def test_start_is_clamped_into_bounds():
    res = solve(log_problem(), [-5.0])
    assert res.status == CONVERGED
    assert res.x_opt[0] == pytest.approx(3.0, abs=1e-5)


def test_nan_at_start_is_infeasible_start():
    p = NlpProblem(1, lambda x: math.nan, lambda x: np.zeros(1))
    assert solve(p, [0.0]).status == INFEASIBLE_START


def test_nan_mid_run_is_numerical_failure():
    # the value stays finite, so the line search accepts x = 0 where the gradient breaks
    p = NlpProblem(1, lambda x: x[0] ** 2, lambda x: np.array([2 * x[0] if x[0] > 0.5 else math.nan]))
    res = solve(p, [1.0])
    assert res.status == NUMERICAL_FAILURE
    assert np.all(np.isfinite(res.x_opt)) and math.isfinite(res.objective_value)


def test_nan_region_is_avoided_by_line_search():
    p = NlpProblem(1, lambda x: math.nan if x[0] < 0.5 else x[0] ** 2, lambda x: np.array([2 * x[0]]))
    res = solve(p, [1.0])
    assert res.x_opt[0] >= 0.5 and math.isfinite(res.objective_value)


def test_trace_csv():
    res = solve(pinned_problem(), [0.0])
    lines = res.trace_csv().splitlines()
    assert lines[0] == "outer_iter,objective,violation"
    assert len(lines) == len(res.trace) + 1


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(constraint_tol=0)
    with pytest.raises(ValueError):
        SolverConfig(penalty_growth=1.0)


class TestFiniteDifferences:
    def test_quadratic(self):
        assert finite_diff_gradient(lambda x: x[0] ** 2, [3.0], 1e-5)[0] == pytest.approx(6, abs=1e-6)

    def test_constant(self):
        assert np.array_equal(finite_diff_gradient(lambda x: 4.0, [1.0, 2.0]), np.zeros(2))

    def test_bilinear(self):
        assert np.allclose(finite_diff_gradient(lambda x: x[0] * x[1], [2.0, 3.0]), [3, 2], atol=1e-6)

    def test_non_finite_raises(self):
        with pytest.raises(NumericalFailure):
            finite_diff_gradient(lambda x: 1 / x[0] if x[0] > 0 else math.inf, [0.0])
        with pytest.raises(NumericalFailure):
            finite_diff_jacobian(lambda x: np.array([math.nan]), [0.0])


class TestCheckGradient:
    def test_correct_gradients_pass(self):
        rep = check_gradient(projection_problem(), [0.3, -0.7])
        assert rep.passed and rep.max_error < 1e-8
        assert set(rep.errors) == {"objective", "ineq:x1>=1"}

    def test_planted_factor_two_fails(self):
        p = projection_problem()
        p.gradient = lambda x: 4 * x
        rep = check_gradient(p, [3.0, 2.0])
        assert not rep.passed
        assert rep.failures() == ["objective"]
        assert rep.errors["objective"] == pytest.approx(1.0, abs=1e-6)

    def test_wrong_constraint_jacobian_is_named(self):
        p = pinned_problem()
        p.equalities[0].jac = lambda x: np.array([[-1.0]])
        assert check_gradient(p, [1.0]).failures() == ["eq:x=5"]
