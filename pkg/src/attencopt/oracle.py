"""Schedule evaluation and exact solution of small instances.

Two objective forms are evaluated: the expected-profit form (maximize
revenue minus maintenance, failure and visit costs, with the second-stage
production chosen optimally in closed form) and the equivalent cost form
(minimize scheduling cost plus visit cost). Their sum is the constant
scenario-mean total revenue, which :func:`objective_equivalence_residual`
checks numerically.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .features import maintenance_cost_matrix
from .instance import Instance, Schedule, check_feasible

DEFAULT_EXACT_CEILING = 10


class InfeasibleScheduleError(ValueError):
    pass


def _checked(instance: Instance, schedule) -> Schedule:
    report = check_feasible(instance, schedule)
    if not report.feasible:
        raise InfeasibleScheduleError("; ".join(report.violations))
    return report.schedule


def recourse_production(instance: Instance, schedule) -> np.ndarray:
    """Optimal production y[s, i, t] for a fixed maintenance plan.

    Before failure a turbine produces at its limit except in its maintenance
    period; from the failure period on it produces only once maintenance has
    been completed in an earlier period.
    """
    sched = _checked(instance, schedule)
    m = sched.maint.astype(np.float64)
    T = instance.n_periods
    P = instance.max_production
    done_before = np.cumsum(m, axis=1) - m  # sum over l < t
    before = np.arange(T)[None, None, :] < (instance.failure_time - 1)[:, :, None]
    return np.where(before, P * (1.0 - m)[None], P * done_before[None])


@dataclass(frozen=True)
class ObjectiveBreakdown:
    production_revenue: float
    preventive_cost: float
    corrective_cost: float
    visit_cost: float
    profit: float  # maximization form
    cost: float  # minimization form
    constant_term: float  # scenario-mean total revenue at full availability

    @property
    def residual(self) -> float:
        num = abs(self.profit + self.cost - self.constant_term)
        return num / abs(self.constant_term) if self.constant_term != 0 else num


def evaluate(instance: Instance, schedule) -> ObjectiveBreakdown:
    """Evaluate a feasible schedule under both objective forms."""
    sched = _checked(instance, schedule)
    inst = instance
    S, T = inst.n_scenarios, inst.n_periods
    m = sched.maint.astype(np.float64)
    y = recourse_production(inst, sched)
    rev = inst.price[:, None, :] * inst.max_production  # (S, I, T)
    before = np.arange(T)[None, None, :] < (inst.failure_time - 1)[:, :, None]
    mm = np.broadcast_to(m[None], rev.shape)

    revenue = float((inst.price[:, None, :] * y).sum()) / S
    preventive = float((inst.maint_cost[None] * mm * before).sum()) / S
    corrective = float((inst.failure_cost * mm * ~before).sum()) / S
    visits = float(sched.change_flags.sum()) * inst.visit_cost
    profit = revenue - (preventive + corrective) - visits

    # cost form: lost production in the maintenance period before failure,
    # or from the failure period through maintenance after it
    first_failed = inst.failure_time - 1
    pre_loss = (rev * mm * before).sum()
    post_loss = 0.0
    for s in range(S):
        for i, t in zip(*np.nonzero(m)):
            f = first_failed[s, i]
            if t >= f:
                post_loss += rev[s, i, f : t + 1].sum()
    cost = (preventive * S + corrective * S + pre_loss + post_loss) / S + visits
    constant = float(rev.sum()) / S
    return ObjectiveBreakdown(
        production_revenue=revenue,
        preventive_cost=preventive,
        corrective_cost=corrective,
        visit_cost=visits,
        profit=profit,
        cost=float(cost),
        constant_term=constant,
    )


def evaluate_profit(instance: Instance, schedule) -> ObjectiveBreakdown:
    return evaluate(instance, schedule)


def evaluate_cost(instance: Instance, schedule) -> ObjectiveBreakdown:
    return evaluate(instance, schedule)


def cost_from_matrix(x: np.ndarray, schedule: Schedule, visit_cost: float) -> float:
    """Cost form rebuilt from the per-(turbine, period) cost matrix."""
    return float((x * schedule.maint).sum()) + float(schedule.change_flags.sum()) * visit_cost


def random_feasible_schedule(instance: Instance, rng: np.random.Generator) -> Schedule:
    """Each turbine takes a distinct random slot; period = slot // M."""
    slots = rng.permutation(instance.n_slots)[: instance.n_turbines]
    return Schedule.from_periods(instance, slots // instance.capacity)


def objective_equivalence_residual(instance: Instance, n_samples: int = 100, seed: int = 0) -> float:
    """Largest relative residual of profit + cost - constant over random schedules."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        worst = max(worst, evaluate(instance, random_feasible_schedule(instance, rng)).residual)
    return worst


# ---------------------------------------------------------------------------
# exact search
# ---------------------------------------------------------------------------


@dataclass
class ExactResult:
    schedule: Schedule
    value: float  # cost form of ``schedule``
    nodes: int
    wall_time: float
    optimal: bool
    search_value: float  # objective as accumulated by the search


class _BudgetExceeded(Exception):
    pass


class _Problem:
    """Costs, location bitmasks and bounds shared by both exact searches."""

    def __init__(self, instance: Instance):
        self.x = maintenance_cost_matrix(instance)
        self.I, self.T = self.x.shape
        self.M = instance.capacity
        self.delta = instance.visit_cost
        self.loc_bit = [1 << int(j) for j in instance.location_of]
        # cheapest cost of turbine i in periods t..T-1
        self.suffix_min = np.minimum.accumulate(self.x[:, ::-1], axis=1)[:, ::-1]

    def period_cost(self, t: int, chosen, prev_sites: int) -> tuple[float, int]:
        occupied = 0
        c = 0.0
        for i in chosen:
            c += self.x[i, t]
            occupied |= self.loc_bit[i]
        if not chosen:
            occupied = 1  # depot
        if prev_sites & ~occupied:
            c += self.delta
        return c, occupied & ~1

    def lower_bound(self, t: int, remaining: tuple) -> float:
        if t >= self.T:
            return 0.0
        return float(sum(self.suffix_min[i, t] for i in remaining))


def _branch_and_bound(problem: _Problem, deadline: float | None, node_limit: int | None):
    memo: dict = {}
    nodes = 0
    p = problem

    def search(t: int, remaining: tuple, prev: int, budget: float):
        nonlocal nodes
        key = (t, remaining, prev)
        hit = memo.get(key)
        if hit is not None:
            value, exact, _ = hit
            if exact or value > budget:
                return value, exact
        nodes += 1
        if node_limit is not None and nodes > node_limit:
            raise _BudgetExceeded
        if deadline is not None and nodes % 512 == 0 and time.perf_counter() > deadline:
            raise _BudgetExceeded
        if not remaining:
            value = p.delta if (prev and t < p.T) else 0.0
            memo[key] = (value, True, None)
            return value, True

        slack = (p.T - t - 1) * p.M
        children = []
        order = 0
        for size in range(min(p.M, len(remaining)), -1, -1):
            if len(remaining) - size > slack:
                continue
            for chosen in itertools.combinations(remaining, size):
                rest = tuple(i for i in remaining if i not in chosen)
                c, sites = p.period_cost(t, chosen, prev)
                lb = c + p.lower_bound(t + 1, rest)
                children.append((lb, order, c, chosen, rest, sites))
                order += 1
        children.sort(key=lambda ch: (ch[0], ch[1]))

        best = float("inf")
        best_choice = None
        pruned = float("inf")
        for lb, _, c, chosen, rest, sites in children:
            child_hit = memo.get((t + 1, rest, sites))
            if child_hit is not None and not child_hit[1]:
                lb = max(lb, c + child_hit[0])
            if lb > budget or lb >= best:
                pruned = min(pruned, lb)
                continue
            limit = min(budget, best) - c
            v, exact = search(t + 1, rest, sites, limit)
            if exact and c + v < best:
                best = c + v
                best_choice = (chosen, rest, sites)
            elif not exact:
                pruned = min(pruned, c + v)
        if best <= budget:
            memo[key] = (best, True, best_choice)
            return best, True
        bound = min(best, pruned)
        memo[key] = (bound, False, None)
        return bound, False

    all_turbines = tuple(range(p.I))
    value, exact = search(0, all_turbines, 0, float("inf"))
    assert exact
    periods = np.zeros(p.I, dtype=np.int64)
    t, remaining, prev = 0, all_turbines, 0
    while remaining:
        _, _, choice = memo[(t, remaining, prev)]
        chosen, remaining, prev = choice
        periods[list(chosen)] = t
        t += 1
    return periods, value, nodes


def _exhaustive(problem: _Problem):
    p = problem
    best = float("inf")
    best_periods = None
    nodes = 0
    for assign in itertools.product(range(p.T), repeat=p.I):
        counts = np.bincount(assign, minlength=p.T)
        if counts.max() > p.M:
            continue
        nodes += 1
        total = 0.0
        prev = 0
        for t in range(p.T):
            chosen = [i for i in range(p.I) if assign[i] == t]
            c, prev = p.period_cost(t, chosen, prev)
            total += c
        if total < best:
            best = total
            best_periods = np.array(assign, dtype=np.int64)
    return best_periods, best, nodes


def _greedy_incumbent(problem: _Problem) -> np.ndarray:
    p = problem
    load = np.zeros(p.T, dtype=np.int64)
    periods = np.zeros(p.I, dtype=np.int64)
    for i in np.argsort(p.x.min(axis=1), kind="stable"):
        for t in np.argsort(p.x[i], kind="stable"):
            if load[t] < p.M:
                periods[i] = t
                load[t] += 1
                break
    return periods


def solve_exact(
    instance: Instance,
    time_limit: float | None = None,
    node_limit: int | None = None,
    max_turbines: int = DEFAULT_EXACT_CEILING,
    exhaustive: bool = False,
) -> ExactResult:
    """Optimal schedule of the cost form by depth-first branch and bound.

    The search walks periods in order; a state is (period, unscheduled
    turbines, sites occupied in the previous period), and a subtree is cut
    when its partial cost plus the cheapest remaining period cost of every
    unscheduled turbine cannot beat the incumbent. Solved states are cached.
    ``exhaustive=True`` enumerates every capacity-feasible assignment instead.
    When the time or node budget runs out the greedy incumbent is returned
    with ``optimal=False``.
    """
    if instance.n_turbines > max_turbines:
        raise ValueError(f"exact solve limited to {max_turbines} turbines, got {instance.n_turbines}")
    start = time.perf_counter()
    problem = _Problem(instance)
    deadline = start + time_limit if time_limit is not None else None
    optimal = True
    try:
        if exhaustive:
            periods, search_value, nodes = _exhaustive(problem)
        else:
            periods, search_value, nodes = _branch_and_bound(problem, deadline, node_limit)
    except _BudgetExceeded:
        periods = _greedy_incumbent(problem)
        nodes = node_limit or -1
        optimal = False
        search_value = float("nan")
    schedule = Schedule.from_periods(instance, periods)
    value = evaluate(instance, schedule).cost
    if not optimal:
        search_value = cost_from_matrix(problem.x, schedule, instance.visit_cost)
    return ExactResult(
        schedule=schedule,
        value=value,
        nodes=nodes,
        wall_time=time.perf_counter() - start,
        optimal=optimal,
        search_value=search_value,
    )


def optimality_gap(model_cost: float, optimal_cost: float) -> float:
    """Percentage gap of a model's cost over the proven optimum."""
    return (model_cost - optimal_cost) / optimal_cost * 100.0
