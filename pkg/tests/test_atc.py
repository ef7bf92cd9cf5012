import math

import numpy as np
import pytest

from trajsets import atc
from trajsets.fileio import corridors_to_csv, import_corridors
from trajsets.model import AircraftState, ControlInput, InvalidInput, Limits, Scenario, Trajectory, rollout
from trajsets.nlp import CONVERGED, check_gradient
from trajsets.synthetic import make_record

from oracles import atc_constraint_count, j2_loops

LIM = Limits(u_max=5, v_min=5, v_max=40, eps=0.1, alpha=0.01, safety_margin=3)


def straight(aid, t0, n, x0=(0.0, 0.0), v=20.0, heading=0.0):
    c, s = math.cos(heading), math.sin(heading)
    start = AircraftState(x0[0], x0[1], v, heading)
    end = AircraftState(x0[0] + n * v * c, x0[1] + n * v * s, v, heading)
    std = np.array([[x0[0] + k * v * c, x0[1] + k * v * s] for k in range(n + 1)])
    return make_record(aid, t0, t0 + n, start, end, standard=std)


class TestCosts:
    def test_j1_examples(self):
        assert atc.j1([0.0], 1.0) == 0.0
        assert atc.j1([math.e - 1], 1.0) == pytest.approx(-1.0)
        assert atc.j1([1.0, 1.0], 1.0) == pytest.approx(-2 * math.log(2))
        assert atc.j1([[1.0], [1.0]], 1.0) == pytest.approx(-2 * math.log(2))

    def test_j2_examples(self):
        std = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
        assert atc.j2(std, std) == 0.0
        assert atc.j2(std + [1.0, 0.0], std) == pytest.approx(3.0)
        assert atc.j2(np.array([[0.0, 0.0], [1.0, 0.0]]), np.zeros((2, 2))) == pytest.approx(2.0)
        with pytest.raises(InvalidInput):
            atc.j2(std[:2], std)

    def test_j2_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for m in (1, 2, 7):
            c, s = rng.normal(size=(m, 2)), rng.normal(size=(m, 2))
            assert atc.j2(c, s) == pytest.approx(j2_loops(c.tolist(), s.tolist()), rel=1e-12)

    def test_j_atc_alpha_zero_is_j1(self):
        sc = Scenario((straight("A", 0, 4),), LIM.updated(alpha=0.0))
        p = atc.build_problem(sc)
        x = atc.initial_guess(sc) + 0.3
        r = atc.AtcLayout.for_scenario(sc).unpack(x)[2]
        assert p.j_atc(x) == pytest.approx(atc.j1(r, LIM.eps))

    def test_j_atc_zero_radii_on_standard(self):
        sc = Scenario((straight("A", 0, 4),), LIM.updated(eps=1.0))
        p = atc.build_problem(sc)
        assert p.j_atc(atc.initial_guess(sc)) == pytest.approx(0.0, abs=1e-12)

    def test_j_atc_decreases_with_eps(self):
        rng = np.random.default_rng(1)
        sc = Scenario((straight("A", 0, 5), straight("B", 1, 4, (0.0, 50.0))), LIM)
        x = atc.initial_guess(sc) + np.abs(rng.normal(size=atc.AtcLayout.for_scenario(sc).size))
        values = [atc.build_problem(Scenario(sc.aircraft, LIM.updated(eps=e))).j_atc(x) for e in (0.01, 0.1, 1.0, 5.0)]
        assert all(b < a for a, b in zip(values, values[1:]))


class TestLayout:
    def test_round_trip(self):
        sc = Scenario((straight("A", 0, 3), straight("B", 2, 5, (0.0, 80.0))), LIM)
        lay = atc.AtcLayout.for_scenario(sc)
        assert lay.size == (3 * 3 - 1) + (3 * 5 - 1)
        x = np.arange(lay.size, dtype=float)
        u, psi, r = lay.unpack(x)
        assert np.array_equal(lay.pack(u, psi, r), x)
        assert lay.slots[1].r_index(3) == 8 + 10


class TestBuildProblem:
    def test_single_aircraft_count_by_hand(self):
        sc = Scenario((straight("A", 0, 3),), LIM)
        p = atc.build_problem(sc)
        ineq, eq, bounds = atc_constraint_count([3], [])
        assert (p.n_inequalities, p.n_equalities, p.n_bounds) == (ineq, eq, bounds)
        assert {b.name: b.size for b in p.inequalities}["conflict"] == 0

    def test_disjoint_spans_have_no_conflict_rows(self):
        sc = Scenario((straight("A", 0, 4), straight("B", 6, 4, (0.0, 5.0))), LIM)
        p = atc.build_problem(sc)
        assert {b.name: b.size for b in p.inequalities}["conflict"] == 0

    def test_bundled_scenario_conflict_rows(self, haneda):
        # interior steps 2..11, 3..12 and 3..14 give overlaps of 9, 9 and 10
        p = atc.build_problem(haneda)
        sizes = {b.name: b.size for b in p.inequalities}
        assert sizes["conflict"] == 28
        ineq, eq, bounds = atc_constraint_count([11, 11, 13], [9, 9, 10])
        assert (p.n_inequalities, p.n_equalities, p.n_bounds) == (ineq, eq, bounds)

    def test_replan_adds_operation_rows(self, planned):
        cycle = planned.latest
        p = atc.build_problem(planned.scenario, planned.selections, 4)
        sizes = {b.name: b.size for b in p.inequalities}
        assert sizes["operation"] == sum(rec.horizon - 1 for rec in p.scenario.aircraft)
        assert all(rec.t_start == 5 for rec in p.scenario.aircraft)
        assert cycle.plan_time == 1

    def test_tau_without_selections(self, haneda):
        with pytest.raises(InvalidInput):
            atc.build_problem(haneda, None, 3)

    def test_selection_not_spanning_horizon(self):
        rec = straight("A", 0, 4)
        short = Trajectory("A", 0, rec.standard.states[:3])
        with pytest.raises(InvalidInput):
            atc.build_problem(Scenario((rec,), LIM), {"A": short})

    def test_empty_scenario(self):
        with pytest.raises(InvalidInput):
            atc.build_problem(Scenario((), LIM))

    def test_gradients_at_guess_and_perturbations(self):
        sc = Scenario((straight("A", 0, 5), straight("B", 1, 5, (60.0, -40.0), heading=1.2)), LIM)
        p = atc.build_problem(sc)
        x0 = atc.initial_guess(sc)
        rng = np.random.default_rng(5)
        for i in range(3):
            x = x0 if i == 0 else x0 + rng.normal(0, 0.05, x0.size)
            x[p.lower == 0] = np.abs(x[p.lower == 0]) + 0.5
            assert check_gradient(p, x).passed


class TestInitialGuess:
    def test_straight_reference_gives_zero_controls(self):
        sc = Scenario((straight("A", 0, 6, heading=0.4),), LIM)
        assert np.allclose(atc.initial_guess(sc), 0.0, atol=1e-12)

    def test_rollout_reproduces_consistent_reference(self):
        x0 = AircraftState(0.0, 0.0, 20.0, 0.0)
        ctrl = [ControlInput(1.0, 0.1), ControlInput(-2.0, 0.2), ControlInput(0.5, -0.1), ControlInput(0.0, 0.0)]
        traj = rollout(x0, ctrl)
        rec = make_record("A", 0, 4, x0, traj.states[-1], standard=traj.positions)
        sc = Scenario((rec,), LIM)
        u, psi, _ = atc.AtcLayout.for_scenario(sc).unpack(atc.initial_guess(sc))
        back = rollout(x0, [ControlInput(a, b) for a, b in zip(u[0], psi[0])])
        assert np.allclose(back.positions, traj.positions, atol=1e-9)

    def test_bundled_guess_respects_turn_limit(self, haneda):
        lay = atc.AtcLayout.for_scenario(haneda)
        _, psi, r = lay.unpack(atc.initial_guess(haneda))
        assert max(np.max(np.abs(p)) for p in psi) <= haneda.limits.psi_max
        assert all(np.all(ri == 0) for ri in r)


class TestDesignSets:
    def test_single_aircraft_opens_every_radius(self):
        sol = atc.design_sets(Scenario((straight("A", 0, 8),), LIM))
        assert sol.result.status == CONVERGED
        assert np.all(sol.corridors[0].radii[1:-1] > 0)
        assert sol.corridors[0].radii[0] == sol.corridors[0].radii[-1] == 0

    def test_head_on_pair_is_separated(self):
        a = straight("A", 0, 10)
        b = straight("B", 0, 10, (200.0, 0.0), heading=math.pi)
        sol = atc.design_sets(Scenario((a, b), LIM))
        assert sol.result.status == CONVERGED
        margins = atc.corridor_conflict_margins(sol.corridors)
        assert len(margins) == 9
        assert min(m for *_, m in margins) >= LIM.safety_margin - 1e-6

    def test_centers_are_exact_rollouts(self, planned):
        sol = planned.latest.atc
        for c in sol.corridors:
            traj = sol.center_trajectory(c.aircraft_id)
            assert np.array_equal(traj.positions, c.centers)

    def test_mean_radius_order_of_magnitude(self, planned):
        means = [c.radii[1:-1].mean() for c in planned.latest.atc.corridors]
        assert all(1.0 <= m <= 100.0 for m in means)

    def test_centers_satisfy_speed_bounds(self, planned):
        lim = planned.scenario.limits
        for c in planned.latest.atc.corridors:
            steps = np.hypot(*np.diff(c.centers, axis=0).T)
            assert steps.min() >= lim.v_min - 1e-6 and steps.max() <= lim.v_max + 1e-6

    def test_objective_recomputed_from_export(self, planned, tmp_path):
        sol = planned.latest.atc
        lim = planned.scenario.limits
        path = tmp_path / "c.csv"
        path.write_text(corridors_to_csv(sol.corridors))
        total = 0.0
        for c in import_corridors(path):
            rec = planned.scenario.record(c.aircraft_id)
            total -= sum(math.log(r + lim.eps) for r in c.radii[1:-1])
            total += lim.alpha * j2_loops(c.centers[1:-1].tolist(), rec.standard.positions[1:-1].tolist())
        assert total == pytest.approx(sol.result.objective_value, abs=1e-9)
        assert total < 0
