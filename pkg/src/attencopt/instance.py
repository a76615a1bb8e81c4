"""Problem instances for wind-farm maintenance scheduling.

Index conventions
-----------------
Arrays are 0-based internally: turbine ``i`` is row ``i`` and period ``t``
(1..T in the model) is column ``t - 1``. Two fields keep their 1-based
meaning because their values are labels rather than positions:

* ``location_of[i]`` is in ``1..J``; ``0`` is reserved for the depot.
* ``failure_time[s, i]`` is the 1-based failure period ``F``; ``T + 1``
  means the turbine does not fail within the horizon. Period column ``c``
  is "before failure" iff ``c + 1 < F``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
DEPOT = 0


class InstanceFormatError(ValueError):
    """Malformed or unreadable instance document."""


class SchemaVersionError(InstanceFormatError):
    pass


@dataclass(frozen=True, eq=False)
class Instance:
    n_turbines: int
    n_periods: int
    capacity: int
    n_locations: int
    n_scenarios: int
    maint_cost: np.ndarray  # (I, T)
    failure_cost: float
    visit_cost: float
    location_of: np.ndarray  # (I,), values 1..J
    price: np.ndarray  # (S, T)
    max_production: np.ndarray  # (S, I, T)
    failure_time: np.ndarray  # (S, I), values 1..T+1

    def __post_init__(self):
        for name, dtype in (
            ("maint_cost", np.float64),
            ("price", np.float64),
            ("max_production", np.float64),
            ("location_of", np.int64),
            ("failure_time", np.int64),
        ):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("n_turbines", "n_periods", "capacity", "n_locations", "n_scenarios"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "failure_cost", float(self.failure_cost))
        object.__setattr__(self, "visit_cost", float(self.visit_cost))

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None

    @property
    def n_slots(self) -> int:
        return self.n_periods * self.capacity

    @property
    def n_idle(self) -> int:
        return self.n_slots - self.n_turbines

    def with_visit_cost(self, visit_cost: float) -> "Instance":
        return replace(self, visit_cost=visit_cost)

    def permute_turbines(self, order) -> "Instance":
        order = np.asarray(order)
        return replace(
            self,
            maint_cost=self.maint_cost[order],
            location_of=self.location_of[order],
            max_production=self.max_production[:, order],
            failure_time=self.failure_time[:, order],
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_turbines": self.n_turbines,
            "n_periods": self.n_periods,
            "capacity": self.capacity,
            "n_locations": self.n_locations,
            "n_scenarios": self.n_scenarios,
            "maint_cost": self.maint_cost.tolist(),
            "failure_cost": self.failure_cost,
            "visit_cost": self.visit_cost,
            "location_of": self.location_of.tolist(),
            "price": self.price.tolist(),
            "max_production": self.max_production.tolist(),
            "failure_time": self.failure_time.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Instance":
        if not isinstance(doc, dict):
            raise InstanceFormatError("instance document must be a JSON object")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(f"unsupported instance schema version {version!r}")
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in doc]
        if missing:
            raise InstanceFormatError(f"missing fields: {', '.join(missing)}")
        try:
            inst = cls(**{n: doc[n] for n in names})
        except (TypeError, ValueError) as exc:
            raise InstanceFormatError(str(exc)) from exc
        shapes = {
            "maint_cost": (inst.n_turbines, inst.n_periods),
            "location_of": (inst.n_turbines,),
            "price": (inst.n_scenarios, inst.n_periods),
            "max_production": (inst.n_scenarios, inst.n_turbines, inst.n_periods),
            "failure_time": (inst.n_scenarios, inst.n_turbines),
        }
        for name, shape in shapes.items():
            if getattr(inst, name).shape != shape:
                raise InstanceFormatError(f"{name} has shape {getattr(inst, name).shape}, expected {shape}")
        return inst


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok


def validate(instance: Instance) -> ValidationReport:
    """Check every structural invariant; never raises."""
    inst = instance
    report = ValidationReport()
    bad = report.problems
    for name in ("n_turbines", "n_periods", "capacity", "n_locations", "n_scenarios"):
        if getattr(inst, name) < 1:
            bad.append(f"{name} must be a positive integer")
    if bad:
        return report
    I, T, S = inst.n_turbines, inst.n_periods, inst.n_scenarios
    if T * inst.capacity < I:
        bad.append(f"capacity-horizon infeasible: T*M = {T * inst.capacity} < I = {I}")
    expected = {
        "maint_cost": (I, T),
        "location_of": (I,),
        "price": (S, T),
        "max_production": (S, I, T),
        "failure_time": (S, I),
    }
    for name, shape in expected.items():
        if getattr(inst, name).shape != shape:
            bad.append(f"{name} has shape {getattr(inst, name).shape}, expected {shape}")
    if any("shape" in p for p in bad):
        return report
    for name in ("maint_cost", "price", "max_production"):
        arr = getattr(inst, name)
        if not np.all(np.isfinite(arr)):
            bad.append(f"{name} has non-finite entries")
        elif np.any(arr < 0):
            bad.append(f"{name} has negative entries")
    for name in ("failure_cost", "visit_cost"):
        v = getattr(inst, name)
        if not math.isfinite(v) or v < 0:
            bad.append(f"{name} must be finite and >= 0")
    ft = inst.failure_time
    if np.any(ft < 1) or np.any(ft > T + 1):
        bad.append(f"failure_time out of range [1, {T + 1}]")
    loc = inst.location_of
    if np.any(loc < 1) or np.any(loc > inst.n_locations):
        bad.append(f"location_of out of range [1, {inst.n_locations}]")
    return report


# ---------------------------------------------------------------------------
# schedules and feasibility
# ---------------------------------------------------------------------------


def crew_locations(instance: Instance, maint: np.ndarray) -> list[frozenset]:
    """Occupied locations per period; an empty period puts the crew at the depot."""
    out = []
    for t in range(maint.shape[1]):
        rows = np.flatnonzero(maint[:, t])
        occ = frozenset(int(instance.location_of[i]) for i in rows)
        out.append(occ if occ else frozenset({DEPOT}))
    return out


def change_flags(crew: list[frozenset]) -> np.ndarray:
    """delta[t] = 1 iff a site occupied in t-1 is left in t (the depot is not a site)."""
    flags = np.zeros(len(crew), dtype=np.int64)
    for t in range(1, len(crew)):
        if (crew[t - 1] - {DEPOT}) - crew[t]:
            flags[t] = 1
    return flags


@dataclass(frozen=True, eq=False)
class Schedule:
    maint: np.ndarray  # (I, T) binary
    crew_locations: tuple
    change_flags: np.ndarray  # (T,)

    @classmethod
    def from_maint(cls, instance: Instance, maint) -> "Schedule":
        m = np.asarray(maint)
        if m.shape != (instance.n_turbines, instance.n_periods):
            raise ValueError(
                f"schedule shape {m.shape} does not match instance ({instance.n_turbines}, {instance.n_periods})"
            )
        m = (m != 0).astype(np.int64)
        crew = crew_locations(instance, m)
        return cls(maint=m, crew_locations=tuple(crew), change_flags=change_flags(crew))

    @classmethod
    def from_periods(cls, instance: Instance, periods) -> "Schedule":
        """Build from a 0-based maintenance period per turbine."""
        m = np.zeros((instance.n_turbines, instance.n_periods), dtype=np.int64)
        m[np.arange(instance.n_turbines), np.asarray(periods)] = 1
        return cls.from_maint(instance, m)

    def periods(self) -> np.ndarray:
        return self.maint.argmax(axis=1)


@dataclass
class FeasibilityReport:
    feasible: bool
    violations: list[str]
    schedule: Schedule

    def __bool__(self) -> bool:
        return self.feasible


def check_feasible(instance: Instance, schedule) -> FeasibilityReport:
    """Verify the capacity and exactly-once constraints.

    Accepts a :class:`Schedule` or a raw (I, T) matrix; raises ``ValueError``
    on a dimension mismatch.
    """
    if not isinstance(schedule, Schedule):
        raw = np.asarray(schedule)
        if raw.shape != (instance.n_turbines, instance.n_periods):
            raise ValueError(f"schedule shape {raw.shape} does not match instance")
        if not np.all((raw == 0) | (raw == 1)):
            return FeasibilityReport(False, ["maintenance entries must be binary"], Schedule.from_maint(instance, raw))
        schedule = Schedule.from_maint(instance, raw)
    elif schedule.maint.shape != (instance.n_turbines, instance.n_periods):
        raise ValueError(f"schedule shape {schedule.maint.shape} does not match instance")
    m = schedule.maint
    violations = []
    per_period = m.sum(axis=0)
    for t in np.flatnonzero(per_period > instance.capacity):
        violations.append(f"capacity: period {t + 1} has {per_period[t]} > {instance.capacity} maintenances")
    per_turbine = m.sum(axis=1)
    for i in np.flatnonzero(per_turbine != 1):
        violations.append(f"once: turbine {i + 1} maintained {per_turbine[i]} times")
    return FeasibilityReport(not violations, violations, schedule)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

# (turbines, locations, capacity, periods, scenarios)
PRESETS = {
    "case1": (15, 4, 2, 10, 10),
    "case2": (25, 4, 2, 15, 10),
    "case3": (30, 4, 2, 20, 10),
    "case4": (40, 4, 2, 25, 10),
    "case5": (50, 4, 2, 30, 10),
    "desk-a": (5, 4, 2, 4, 4),
    "desk-b": (8, 4, 2, 5, 4),
    "desk-c": (10, 4, 2, 6, 4),
}
DESK_PRESETS = ("desk-a", "desk-b", "desk-c")


def preset_name(name: str) -> str:
    key = name.lower().replace("_", "-")
    if key.startswith("desk-case-"):
        key = "desk-" + key[len("desk-case-") :]
    if key not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return key


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_turbines: int = 5
    n_locations: int = 4
    capacity: int = 2
    n_periods: int = 4
    n_scenarios: int = 4
    price_range: tuple = (20.0, 50.0)
    production_range: tuple = (0.0, 10.0)
    base_cost_range: tuple = (50.0, 150.0)
    cost_slope_range: tuple = (0.0, 5.0)
    failure_cost_factor: float = 3.0
    visit_cost_range: tuple = (50.0, 200.0)
    failure_mean_range: tuple = (0.3, 1.2)  # fractions of T
    failure_std: float = 0.15  # fraction of T
    visit_cost: float | None = None  # fixes the visit cost when set

    @classmethod
    def preset(cls, name: str, seed: int = 0, **overrides) -> "GeneratorConfig":
        I, J, M, T, S = PRESETS[preset_name(name)]
        kwargs = dict(seed=seed, n_turbines=I, n_locations=J, capacity=M, n_periods=T, n_scenarios=S)
        kwargs.update(overrides)
        return cls(**kwargs)

    def check(self) -> None:
        for name in (
            "price_range",
            "production_range",
            "base_cost_range",
            "cost_slope_range",
            "visit_cost_range",
            "failure_mean_range",
        ):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} bounds out of order: {lo} > {hi}")
            if lo < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.failure_std < 0 or self.failure_cost_factor < 0:
            raise ValueError("failure_std and failure_cost_factor must be nonnegative")
        for name in ("n_turbines", "n_locations", "capacity", "n_periods", "n_scenarios"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_periods * self.capacity < self.n_turbines:
            raise ValueError("n_periods * capacity must be at least n_turbines")
        if self.visit_cost is not None and self.visit_cost < 0:
            raise ValueError("visit_cost must be nonnegative")

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        names = {f.name for f in fields(cls)}
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.items() if k in names}
        return cls(**kwargs)


def generate(config: GeneratorConfig) -> Instance:
    """Draw a synthetic instance; a pure function of ``config``."""
    config.check()
    rng = np.random.default_rng(config.seed)
    I, J, M, T, S = (
        config.n_turbines,
        config.n_locations,
        config.capacity,
        config.n_periods,
        config.n_scenarios,
    )
    location_of = rng.integers(1, J + 1, size=I)
    price = rng.uniform(*config.price_range, size=(S, T))
    max_production = rng.uniform(*config.production_range, size=(S, I, T))
    base = rng.uniform(*config.base_cost_range, size=I)
    slope = rng.uniform(*config.cost_slope_range, size=I)
    maint_cost = base[:, None] + slope[:, None] * np.arange(1, T + 1)[None, :]
    failure_cost = config.failure_cost_factor * float(maint_cost.mean())
    visit_cost = rng.uniform(*config.visit_cost_range)
    if config.visit_cost is not None:
        visit_cost = config.visit_cost
    lo, hi = config.failure_mean_range
    mean_fail = rng.uniform(lo * T, hi * T, size=I)
    draws = rng.normal(mean_fail[None, :], config.failure_std * T, size=(S, I))
    failure_time = np.clip(np.rint(draws), 1, T + 1).astype(np.int64)
    return Instance(
        n_turbines=I,
        n_periods=T,
        capacity=M,
        n_locations=J,
        n_scenarios=S,
        maint_cost=maint_cost,
        failure_cost=failure_cost,
        visit_cost=float(visit_cost),
        location_of=location_of,
        price=price,
        max_production=max_production,
        failure_time=failure_time,
    )


def generate_many(config: GeneratorConfig, n: int) -> list[Instance]:
    """``n`` instances with seeds spawned deterministically from ``config.seed``."""
    seeds = np.random.SeedSequence(config.seed).generate_state(n, dtype=np.uint64)
    return [generate(replace(config, seed=int(s))) for s in seeds]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _reject_constant(token):
    raise InstanceFormatError(f"non-finite number {token} in instance document")


def dumps_instance(instance: Instance) -> str:
    try:
        return json.dumps(instance.to_dict(), allow_nan=False, indent=None, separators=(",", ":")) + "\n"
    except ValueError as exc:
        raise InstanceFormatError("instance contains non-finite numbers") from exc


def loads_instance(text: str) -> Instance:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"malformed instance document: {exc}") from exc
    return Instance.from_dict(doc)


def write_instance(instance: Instance, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_instance(instance), encoding="utf-8")


def read_instance(path) -> Instance:
    return loads_instance(Path(path).read_text(encoding="utf-8"))
