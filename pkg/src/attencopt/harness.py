"""Experiment runners: optimality gaps, cross-size transfer, timing, plot tables."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .decoder import ScheduleSolution
from .instance import PRESETS, GeneratorConfig, Instance, Schedule, check_feasible, generate_many, preset_name
from .oracle import evaluate, optimality_gap, solve_exact


class OracleSolver:
    """Exact solver behind the same ``solve`` interface as the policy."""

    def __init__(self, time_limit: float | None = None, max_turbines: int = 10):
        self.time_limit = time_limit
        self.max_turbines = max_turbines

    def solve(self, instances, **_) -> list[ScheduleSolution]:
        out = []
        for inst in instances:
            res = solve_exact(inst, time_limit=self.time_limit, max_turbines=self.max_turbines)
            out.append(
                ScheduleSolution(
                    sequence=sequence_from_schedule(inst, res.schedule),
                    schedule=res.schedule,
                    cost=res.value,
                    sequence_cost=float("nan"),
                    log_prob=0.0,
                    wall_time=res.wall_time,
                )
            )
        return out


def sequence_from_schedule(instance: Instance, schedule: Schedule) -> np.ndarray:
    """Slot sequence for a schedule: each period's turbines by index, then idle fillers."""
    seq = []
    idle = iter(range(instance.n_turbines, instance.n_slots))
    for t in range(instance.n_periods):
        real = [int(i) for i in np.flatnonzero(schedule.maint[:, t])]
        seq.extend(real)
        seq.extend(next(idle) for _ in range(instance.capacity - len(real)))
    return np.array(seq, dtype=np.int64)


@dataclass
class GapReport:
    case: str
    gaps: list = field(default_factory=list)  # only instances the oracle proved optimal
    solved: list = field(default_factory=list)
    model_costs: list = field(default_factory=list)
    optimal_costs: list = field(default_factory=list)
    inference_times: list = field(default_factory=list)
    oracle_times: list = field(default_factory=list)
    feasible: list = field(default_factory=list)

    def _q(self, q):
        return float(np.percentile(self.gaps, q)) if self.gaps else float("nan")

    @property
    def mean(self) -> float:
        return float(np.mean(self.gaps)) if self.gaps else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.gaps)) if self.gaps else float("nan")

    @property
    def q1(self) -> float:
        return self._q(25)

    @property
    def median(self) -> float:
        return self._q(50)

    @property
    def q3(self) -> float:
        return self._q(75)

    @property
    def pct_solved(self) -> float:
        return 100.0 * float(np.mean(self.solved)) if self.solved else float("nan")

    @property
    def pct_feasible(self) -> float:
        return 100.0 * float(np.mean(self.feasible)) if self.feasible else float("nan")

    def summary(self) -> dict:
        return {
            "case": self.case,
            "gap_basis": "cost form (minimization objective)",
            "n_instances": len(self.solved),
            "mean_gap": self.mean,
            "q1_gap": self.q1,
            "median_gap": self.median,
            "q3_gap": self.q3,
            "std_gap": self.std,
            "pct_solved": self.pct_solved,
            "pct_feasible": self.pct_feasible,
            "mean_inference_time": float(np.mean(self.inference_times)) if self.inference_times else float("nan"),
            "mean_oracle_time": float(np.mean(self.oracle_times)) if self.oracle_times else float("nan"),
        }

    def rows(self) -> list[dict]:
        out = []
        gap_iter = iter(self.gaps)
        for k, ok in enumerate(self.solved):
            out.append(
                {
                    "instance": k,
                    "solved": int(ok),
                    "feasible": int(self.feasible[k]),
                    "model_cost": self.model_costs[k],
                    "optimal_cost": self.optimal_costs[k],
                    "gap_pct": next(gap_iter) if ok and self.feasible[k] else float("nan"),
                    "inference_time": self.inference_times[k],
                    "oracle_time": self.oracle_times[k],
                }
            )
        return out

    @classmethod
    def from_rows(cls, case: str, rows) -> "GapReport":
        rep = cls(case=case)
        for r in rows:
            rep.solved.append(bool(int(r["solved"])))
            rep.feasible.append(bool(int(r["feasible"])))
            rep.model_costs.append(float(r["model_cost"]))
            rep.optimal_costs.append(float(r["optimal_cost"]))
            rep.inference_times.append(float(r["inference_time"]))
            rep.oracle_times.append(float(r["oracle_time"]))
            if rep.solved[-1] and rep.feasible[-1]:
                rep.gaps.append(float(r["gap_pct"]))
        return rep

    def write(self, out_dir, stem: str = "gaps") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = self.rows()
        with (out / f"{stem}.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["instance"], lineterminator="\n")
            writer.writeheader()
            for r in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        (out / f"{stem}_summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")


def study_instances(case: str, n_instances: int, seed: int = 0) -> list[Instance]:
    return generate_many(GeneratorConfig.preset(case, seed=seed), n_instances)


def run_gap_study(
    model,
    case: str,
    n_instances: int = 100,
    time_limit: float | None = None,
    seed: int = 0,
    instances=None,
    pad_to: int | None = None,
    oracle_results=None,
) -> GapReport:
    """Greedy-decode each instance and compare with the exact optimum.

    ``model`` needs a ``solve(instances, pad_to=...)`` method. Instances the
    oracle cannot prove optimal within ``time_limit`` are excluded from the
    gap statistics and counted against ``pct_solved``.
    """
    if instances is None:
        instances = study_instances(case, n_instances, seed)
    try:
        case = preset_name(case)
    except KeyError:
        pass
    report = GapReport(case=case)
    kwargs = {"pad_to": pad_to} if pad_to is not None else {}
    for k, inst in enumerate(instances):
        start = time.perf_counter()
        sol = model.solve([inst], **kwargs)[0]
        report.inference_times.append(time.perf_counter() - start)
        feasible = check_feasible(inst, sol.schedule).feasible
        report.feasible.append(feasible)
        cost = evaluate(inst, sol.schedule).cost if feasible else float("nan")
        exact = oracle_results[k] if oracle_results is not None else solve_exact(inst, time_limit=time_limit)
        report.oracle_times.append(exact.wall_time)
        report.model_costs.append(cost)
        report.optimal_costs.append(exact.value)
        report.solved.append(exact.optimal)
        if exact.optimal and feasible:
            report.gaps.append(optimality_gap(cost, exact.value))
    return report


@dataclass
class TransferMatrix:
    reports: dict = field(default_factory=dict)  # (train_case, test_case) -> GapReport

    def summary(self) -> list[dict]:
        return [{"train": tr, "test": te, **rep.summary()} for (tr, te), rep in sorted(self.reports.items())]

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for (tr, te), rep in self.reports.items():
            rep.write(out, stem=f"train_{tr}__test_{te}")
        (out / "transfer_summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")


def trained_candidates(case: str) -> int:
    I, J, M, T, S = PRESETS[preset_name(case)]
    return T * M


def run_transfer_study(
    models: dict,
    test_cases,
    n_instances: int = 50,
    seed: int = 0,
    time_limit: float | None = None,
    pad: bool = True,
) -> TransferMatrix:
    """Evaluate every trained model on every test case.

    Smaller test instances are padded with extra idle candidates up to the
    candidate count of the training case.
    """
    matrix = TransferMatrix()
    cache = {}
    for test in test_cases:
        test = preset_name(test)
        instances = study_instances(test, n_instances, seed)
        cache[test] = (instances, [solve_exact(inst, time_limit=time_limit) for inst in instances])
    for train_case, model in models.items():
        train_case = preset_name(train_case)
        target = trained_candidates(train_case)
        for test in cache:
            instances, optima = cache[test]
            pad_to = target if pad and target > trained_candidates(test) else None
            matrix.reports[(train_case, test)] = run_gap_study(
                model, test, instances=instances, pad_to=pad_to, oracle_results=optima
            )
    return matrix


# ---------------------------------------------------------------------------
# plot tables
# ---------------------------------------------------------------------------

PLOT_FIELDS = ("variant", "period", "slot", "turbine", "location", "is_idle", "delta")


def emit_schedule_plot_data(instance: Instance, solution, variant: str = "") -> list[dict]:
    """One row per slot (period, slot, turbine, location, idle flag, visit flag).

    Periods, slots and turbines are 1-based; idle slots report turbine 0 at
    the depot.
    """
    if isinstance(solution, ScheduleSolution):
        schedule, seq = solution.schedule, solution.sequence
    else:
        schedule = solution if isinstance(solution, Schedule) else Schedule.from_maint(instance, solution)
        seq = sequence_from_schedule(instance, schedule)
    rows = []
    for k, v in enumerate(seq):
        t, slot = divmod(k, instance.capacity)
        idle = int(v) >= instance.n_turbines
        rows.append(
            {
                "variant": variant,
                "period": t + 1,
                "slot": slot + 1,
                "turbine": 0 if idle else int(v) + 1,
                "location": 0 if idle else int(instance.location_of[v]),
                "is_idle": int(idle),
                "delta": int(schedule.change_flags[t]),
            }
        )
    return rows


def location_changes(rows) -> int:
    """Periods in which the crew leaves a site it occupied in the previous period.

    Recomputed from the per-slot rows (idle slots mean the depot), so it can
    be checked against the ``delta`` column.
    """
    sites: dict = {}
    for r in rows:
        occ = sites.setdefault(r["period"], set())
        if not r["is_idle"]:
            occ.add(r["location"])
    changes = 0
    prev: set = set()
    for period in sorted(sites):
        if prev - sites[period]:
            changes += 1
        prev = sites[period]
    return changes


def compare_visit_costs(instance: Instance, solver, high: float | None = None) -> list[dict]:
    """Plot rows for the instance with zero visit cost and with a positive one."""
    high = instance.visit_cost if high is None else high
    rows = []
    for variant, delta in (("zero_visit_cost", 0.0), ("visit_cost", high)):
        inst = replace(instance, visit_cost=delta)
        rows.extend(emit_schedule_plot_data(inst, solver.solve([inst])[0], variant=variant))
    return rows


def write_plot_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(PLOT_FIELDS), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def bench_inference(model, case: str, n: int = 10, seed: int = 0, repeats: int = 1) -> dict:
    """Wall-clock greedy decode time per instance, one instance at a time."""
    instances = study_instances(case, n, seed)
    times = []
    for inst in instances:
        for _ in range(repeats):
            start = time.perf_counter()
            model.solve([inst])
            times.append(time.perf_counter() - start)
    arr = np.array(times)
    I, J, M, T, S = PRESETS[preset_name(case)]
    return {
        "case": preset_name(case),
        "n_slots": T * M,
        "n": len(times),
        "mean": float(arr.mean()),
        "p50": float(np.percentile(arr, 50)),
        "p90": float(np.percentile(arr, 90)),
        "max": float(arr.max()),
        "times": times,
    }
