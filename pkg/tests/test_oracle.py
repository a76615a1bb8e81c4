import itertools

import numpy as np
import pytest

from attencopt.features import maintenance_cost_matrix
from attencopt.instance import GeneratorConfig, Schedule, check_feasible, generate, generate_many
from attencopt.oracle import (
    InfeasibleScheduleError,
    cost_from_matrix,
    evaluate,
    evaluate_cost,
    evaluate_profit,
    objective_equivalence_residual,
    optimality_gap,
    random_feasible_schedule,
    recourse_production,
    solve_exact,
)

from conftest import make_instance


def all_feasible_schedules(inst):
    """Every assignment of turbines to periods respecting capacity."""
    for periods in itertools.product(range(inst.n_periods), repeat=inst.n_turbines):
        if max(np.bincount(periods, minlength=inst.n_periods)) <= inst.capacity:
            yield Schedule.from_periods(inst, periods)


def brute_force_optimum(inst):
    return min(evaluate(inst, s).cost for s in all_feasible_schedules(inst))


def small_random(rng, I_max=4, T_max=3, M_max=2, S=2):
    while True:
        I, T, M = int(rng.integers(1, I_max + 1)), int(rng.integers(1, T_max + 1)), int(rng.integers(1, M_max + 1))
        if T * M >= I:
            break
    return generate(
        GeneratorConfig(
            seed=int(rng.integers(2**32)), n_turbines=I, n_periods=T, capacity=M, n_scenarios=S, n_locations=3
        )
    )


# -- recourse -----------------------------------------------------------------


def test_recourse_producing_before_failure():
    P = np.array([[[4.0, 5.0, 6.0]]])
    inst = make_instance(I=1, T=3, max_production=P, failure_time=np.array([[4]]))
    y = recourse_production(inst, np.array([[0, 0, 1]]))
    assert y.tolist() == [[[4.0, 5.0, 0.0]]]


def test_recourse_zero_after_failure_without_maintenance():
    P = np.full((1, 1, 3), 7.0)
    inst = make_instance(I=1, T=3, max_production=P, failure_time=np.array([[2]]))
    y = recourse_production(inst, np.array([[0, 0, 1]]))
    # period 1 produces; periods 2 and 3 are failed and unrepaired before the period
    assert y.tolist() == [[[7.0, 0.0, 0.0]]]


def test_recourse_resumes_after_repair():
    P = np.full((1, 1, 4), 3.0)
    inst = make_instance(I=1, T=4, max_production=P, failure_time=np.array([[2]]))
    y = recourse_production(inst, np.array([[0, 1, 0, 0]]))
    assert y.tolist() == [[[3.0, 0.0, 3.0, 3.0]]]


def test_recourse_matches_per_cell_enumeration(rng):
    for _ in range(50):
        inst = small_random(rng)
        sched = random_feasible_schedule(inst, rng)
        m = sched.maint
        y = recourse_production(inst, sched)
        for s, i, t in itertools.product(range(inst.n_scenarios), range(inst.n_turbines), range(inst.n_periods)):
            P = inst.max_production[s, i, t]
            F = inst.failure_time[s, i]
            ok = []
            for cand in (0.0, P):
                if t + 1 < F:
                    allowed = cand <= P * (1 - m[i, t])
                else:
                    allowed = cand <= P * m[i, :t].sum()
                if allowed:
                    ok.append(cand)
            assert y[s, i, t] == max(ok)


def test_recourse_rejects_infeasible():
    inst = make_instance(I=2, T=2, M=1)
    with pytest.raises(InfeasibleScheduleError):
        recourse_production(inst, np.array([[1, 0], [1, 0]]))


# -- objective forms ----------------------------------------------------------


def hand_toy():
    return make_instance(
        I=1,
        T=3,
        maint_cost=np.array([[5.0, 5.0, 5.0]]),
        price=np.ones((1, 3)),
        max_production=np.full((1, 1, 3), 10.0),
    )


def test_hand_toy_profit():
    b = evaluate_profit(hand_toy(), np.array([[1, 0, 0]]))
    assert b.production_revenue == 20.0
    assert b.preventive_cost == 5.0
    assert b.profit == 15.0


def test_hand_toy_cost_is_constant_minus_profit():
    b = evaluate_cost(hand_toy(), np.array([[1, 0, 0]]))
    assert b.constant_term == 30.0
    assert b.cost == b.constant_term - 15.0


def test_zero_prices_profit_is_minus_costs():
    inst = generate(GeneratorConfig.preset("desk-a", seed=3))
    inst = make_instance(
        I=inst.n_turbines,
        T=inst.n_periods,
        M=inst.capacity,
        J=inst.n_locations,
        S=inst.n_scenarios,
        maint_cost=inst.maint_cost,
        failure_cost=inst.failure_cost,
        visit_cost=inst.visit_cost,
        location_of=inst.location_of,
        max_production=inst.max_production,
        failure_time=inst.failure_time,
    )
    sched = random_feasible_schedule(inst, np.random.default_rng(0))
    b = evaluate(inst, sched)
    assert b.profit == pytest.approx(-(b.preventive_cost + b.corrective_cost + b.visit_cost), abs=1e-9)


def test_profit_matches_grid_search_over_production():
    """2 turbines x 2 periods: maximize revenue over discretized feasible y."""
    rng = np.random.default_rng(4)
    levels = np.linspace(0.0, 1.0, 5)
    for _ in range(20):
        inst = generate(
            GeneratorConfig(seed=int(rng.integers(2**32)), n_turbines=2, n_periods=2, capacity=2, n_scenarios=2)
        )
        for sched in all_feasible_schedules(inst):
            m = sched.maint
            best = 0.0
            for s in range(inst.n_scenarios):
                per_cell = []
                for i, t in itertools.product(range(2), range(2)):
                    P = inst.max_production[s, i, t]
                    cap = P * (1 - m[i, t]) if t + 1 < inst.failure_time[s, i] else P * m[i, :t].sum()
                    per_cell.append(max(inst.price[s, t] * lv * P for lv in levels if lv * P <= cap + 1e-12))
                best += sum(per_cell)
            revenue = best / inst.n_scenarios
            b = evaluate(inst, sched)
            assert b.production_revenue == pytest.approx(revenue, rel=1e-12, abs=1e-12)
            costs = b.preventive_cost + b.corrective_cost + b.visit_cost
            assert b.profit == pytest.approx(revenue - costs, rel=1e-12, abs=1e-9)


def test_cost_equals_matrix_form():
    rng = np.random.default_rng(5)
    for name in ("desk-a", "desk-b", "desk-c", "case1"):
        inst = generate(GeneratorConfig.preset(name, seed=int(rng.integers(1000))))
        x = maintenance_cost_matrix(inst)
        for _ in range(20):
            sched = random_feasible_schedule(inst, rng)
            c = evaluate(inst, sched).cost
            assert cost_from_matrix(x, sched, inst.visit_cost) == pytest.approx(c, rel=1e-9)


def test_zero_visit_cost_is_matrix_sum():
    inst = generate(GeneratorConfig.preset("desk-b", seed=1, visit_cost=0.0))
    sched = random_feasible_schedule(inst, np.random.default_rng(1))
    x = maintenance_cost_matrix(inst)
    assert evaluate(inst, sched).cost == pytest.approx(float((x * sched.maint).sum()), rel=1e-12)


@pytest.mark.parametrize("name", ["desk-a", "case1", "case3"])
def test_equivalence_on_presets(name):
    inst = generate(GeneratorConfig.preset(name, seed=21))
    assert objective_equivalence_residual(inst, n_samples=30) <= 1e-9


def test_equivalence_with_many_scenarios():
    inst = generate(GeneratorConfig.preset("desk-c", seed=2, n_scenarios=20))
    assert objective_equivalence_residual(inst, n_samples=50) <= 1e-9


def test_equivalence_zero_prices_zero_visit():
    inst = make_instance(I=2, T=2, M=1, maint_cost=np.ones((2, 2)), failure_cost=4.0, failure_time=np.array([[1, 3]]))
    assert objective_equivalence_residual(inst, n_samples=10) == 0.0


def test_evaluate_rejects_infeasible():
    inst = make_instance(I=2, T=2, M=2)
    with pytest.raises(InfeasibleScheduleError):
        evaluate(inst, np.zeros((2, 2), dtype=int))


# -- exact search -------------------------------------------------------------


def test_single_turbine_argmin():
    inst = make_instance(I=1, T=2, maint_cost=np.array([[3.0, 7.0]]))
    res = solve_exact(inst)
    assert res.optimal
    assert res.value == 3.0
    assert res.schedule.maint.tolist() == [[1, 0]]


def test_bb_matches_brute_force_three_by_three(rng):
    for _ in range(10):
        inst = generate(GeneratorConfig(seed=int(rng.integers(2**32)), n_turbines=3, n_periods=3, capacity=1))
        res = solve_exact(inst)
        assert res.value == pytest.approx(brute_force_optimum(inst), rel=1e-12)
        assert check_feasible(inst, res.schedule).feasible


def test_bb_matches_exhaustive(rng):
    for _ in range(20):
        inst = small_random(rng, I_max=6, T_max=4, M_max=2)
        bb = solve_exact(inst)
        ex = solve_exact(inst, exhaustive=True)
        assert bb.optimal and ex.optimal
        assert bb.value == ex.value
        assert bb.search_value == pytest.approx(bb.value, rel=1e-9)


def test_large_visit_cost_groups_in_one_period():
    # apart, the crew leaves site 1 in period 2; together nobody leaves a site
    x = np.array([[1.0, 10.0], [10.0, 1.0]])
    inst = make_instance(I=2, T=2, M=2, J=2, location_of=np.array([1, 2]), maint_cost=x)
    assert solve_exact(inst).schedule.periods().tolist() == [0, 1]
    res = solve_exact(inst.with_visit_cost(1e6))
    periods = res.schedule.periods()
    assert periods[0] == periods[1]
    assert res.value == pytest.approx(brute_force_optimum(inst.with_visit_cost(1e6)))
    assert res.schedule.change_flags.sum() == 0


def test_idle_gap_counts_as_leaving_site():
    x = np.array([[1.0, 100.0, 100.0], [100.0, 100.0, 1.0]])
    inst = make_instance(I=2, T=3, M=2, maint_cost=x)
    assert solve_exact(inst).value == 2.0
    res = solve_exact(inst.with_visit_cost(1e6))
    assert res.value == 101.0
    assert res.schedule.change_flags.sum() == 0


def test_relabeling_invariance(rng):
    for _ in range(5):
        inst = generate(GeneratorConfig.preset("desk-a", seed=int(rng.integers(1000))))
        order = rng.permutation(inst.n_turbines)
        a = solve_exact(inst)
        b = solve_exact(inst.permute_turbines(order))
        assert b.value == pytest.approx(a.value, rel=1e-12)
        # the permuted optimum is optimal for the original instance too
        back = np.empty_like(b.schedule.maint)
        back[order] = b.schedule.maint
        assert evaluate(inst, back).cost == pytest.approx(a.value, rel=1e-12)


def test_visit_cost_monotone(rng):
    inst = generate(GeneratorConfig.preset("desk-b", seed=6))
    values = [solve_exact(inst.with_visit_cost(d)).value for d in (0.0, 10.0, 100.0, 1000.0, 1e5)]
    assert all(a <= b + 1e-9 for a, b in zip(values, values[1:]))


def test_budget_exceeded_returns_incumbent():
    inst = generate(GeneratorConfig.preset("desk-c", seed=2))
    res = solve_exact(inst, node_limit=5)
    assert not res.optimal
    assert check_feasible(inst, res.schedule).feasible
    assert res.value >= solve_exact(inst).value - 1e-9


def test_ceiling_enforced():
    with pytest.raises(ValueError):
        solve_exact(generate(GeneratorConfig.preset("case1")))


def test_gap_formula():
    assert optimality_gap(110.0, 100.0) == pytest.approx(10.0)
    assert optimality_gap(100.0, 100.0) == 0.0
