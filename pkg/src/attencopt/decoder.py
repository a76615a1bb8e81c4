"""Sequential turbine selection with constraint masking.

Decoding runs one step per maintenance slot (T*M steps). Step ``k``
(0-based) fills slot ``k % M`` of period ``k // M``. Every candidate can be
picked once; idle candidates fill slots without maintenance, so every
decoded sequence induces a schedule that maintains each turbine exactly once
and never exceeds M maintenances per period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import merge_heads, split_heads, uniform_init
from .instance import Instance, Schedule
from .oracle import evaluate
from .tensor import MASK_VALUE, ParameterStore, Tensor, concat, masked_add, matmul, softmax

NO_LOCATION = -1


@dataclass(frozen=True)
class DecoderConfig:
    n_heads: int = 8
    logit_scale: float = 1.0
    idle_transparent: bool = False
    scale_by_head_dim: bool = False


def init_decoder(store: ParameterStore, hidden_dim: int, rng: np.random.Generator) -> None:
    D = hidden_dim
    store.add("decoder.placeholder", uniform_init(rng, (D,), D))
    store.add("decoder.wq", uniform_init(rng, (2 * D, D), D))
    store.add("decoder.wk", uniform_init(rng, (D, D), D))
    store.add("decoder.wv", uniform_init(rng, (D, D), D))
    store.add("decoder.wp", uniform_init(rng, (D, D), D))


@dataclass
class Batch:
    """Stacked features of equally shaped instances."""

    inputs: np.ndarray  # (B, T*M, n, F) normalized network input
    chi: np.ndarray  # (B, n, T) raw per-period costs
    loc: np.ndarray  # (B, n) location labels
    n_real: np.ndarray  # (B,)
    visit_cost: np.ndarray  # (B,)
    capacity: int

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_slots(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_candidates(self) -> int:
        return self.inputs.shape[2]

    @classmethod
    def from_features(cls, featuresets) -> "Batch":
        fss = list(featuresets)
        shapes = {fs.chi.shape for fs in fss}
        if len(shapes) != 1:
            raise ValueError(f"feature sets differ in shape: {sorted(shapes)}")
        return cls(
            inputs=np.stack([fs.network_input() for fs in fss]),
            chi=np.stack([fs.raw_chi[:, :, 0] for fs in fss]),
            loc=np.stack([fs.candidate_locations for fs in fss]),
            n_real=np.array([fs.n_real for fs in fss], dtype=np.int64),
            visit_cost=np.array([fs.visit_cost for fs in fss]),
            capacity=fss[0].capacity,
        )

    def repeat(self, times: int) -> "Batch":
        return Batch(
            inputs=np.repeat(self.inputs, times, axis=0),
            chi=np.repeat(self.chi, times, axis=0),
            loc=np.repeat(self.loc, times, axis=0),
            n_real=np.repeat(self.n_real, times),
            visit_cost=np.repeat(self.visit_cost, times),
            capacity=self.capacity,
        )


@dataclass
class DecodeState:
    step: int  # 0-based; the number of picks made so far
    capacity: int
    n_slots: int
    selected: np.ndarray  # (B, n) bool
    last: np.ndarray  # (B,) last pick, -1 before the first
    last_loc: np.ndarray  # (B,) NO_LOCATION before the first counted pick
    n_real: np.ndarray  # (B,)
    cost: np.ndarray  # (B,) accumulated sequence cost

    @classmethod
    def start(cls, batch_size: int, n_candidates: int, n_slots: int, capacity: int, n_real) -> "DecodeState":
        return cls(
            step=0,
            capacity=capacity,
            n_slots=n_slots,
            selected=np.zeros((batch_size, n_candidates), dtype=bool),
            last=np.full(batch_size, -1, dtype=np.int64),
            last_loc=np.full(batch_size, NO_LOCATION, dtype=np.int64),
            n_real=np.asarray(n_real, dtype=np.int64),
            cost=np.zeros(batch_size),
        )

    @property
    def period(self) -> int:
        return self.step // self.capacity


def slot_to_period(k: int, capacity: int) -> tuple[int, int]:
    """0-based step -> (0-based period, 0-based slot)."""
    return k // capacity, k % capacity


def temporal_pointer(H: Tensor, k: int) -> Tensor:
    """Encoder slice for step ``k``: (B, n, D)."""
    if not 0 <= k < H.shape[-3]:
        raise IndexError(f"step {k} outside 0..{H.shape[-3] - 1}")
    return H[..., k, :, :]


def context_embedding(Hd: Tensor, state: DecodeState, store: ParameterStore) -> Tensor:
    """[last pick's embedding | sum of all candidates], (B, 2D)."""
    B = state.selected.shape[0]
    D = Hd.shape[-1]
    if state.step == 0:
        last = store["decoder.placeholder"].reshape(1, D) * np.ones((B, 1))
    else:
        last = Hd[np.arange(B), state.last]
    return concat([last, Hd.sum(axis=1)], axis=-1)


def reserve_slots_for_turbines(state: DecodeState) -> np.ndarray:
    """Forbid idle picks once the remaining steps are all needed for real turbines."""
    n = state.selected.shape[1]
    idx = np.arange(n)[None, :]
    real = idx < state.n_real[:, None]
    left_real = (real & ~state.selected).sum(axis=1)
    steps_left = state.n_slots - state.step
    tight = left_real >= steps_left
    return tight[:, None] & ~real


DEFAULT_CONSTRAINTS = (reserve_slots_for_turbines,)


def build_mask(state: DecodeState, constraints=DEFAULT_CONSTRAINTS) -> np.ndarray:
    """Additive mask: picked candidates and constraint violations get MASK_VALUE."""
    forbidden = state.selected.copy()
    for constraint in constraints:
        forbidden |= constraint(state)
    return np.where(forbidden, MASK_VALUE, 0.0)


@dataclass
class StepDistribution:
    probs: np.ndarray  # (B, n)
    mask: np.ndarray  # (B, n)
    logits: np.ndarray  # (B, n) before masking


def masked_pointer_logits(
    HC: Tensor,
    keys: Tensor,
    values: Tensor,
    pointer_keys: Tensor,
    mask: np.ndarray,
    store: ParameterStore,
    n_heads: int,
    score_scale: float,
    logit_scale: float = 1.0,
) -> tuple[Tensor, Tensor]:
    """Glimpse attention of the context over candidates, then tanh pointer logits.

    ``keys``/``values`` are the candidates projected by the decoder key/value
    weights and ``pointer_keys`` by the pointer weight, each (B, n, D).
    Returns (masked probabilities, unmasked logits).
    """
    B = HC.shape[0]
    q = split_heads(matmul(HC.reshape(B, 1, -1), store["decoder.wq"]), n_heads)  # (B, h, 1, d)
    k = split_heads(keys, n_heads)
    v = split_heads(values, n_heads)
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / score_scale)
    scores = masked_add(scores, mask[:, None, None, :])
    glimpse = merge_heads(matmul(softmax(scores), v))  # (B, 1, D)
    logits = matmul(pointer_keys, glimpse.swapaxes(-1, -2)).reshape(B, -1).tanh()
    if logit_scale != 1.0:
        logits = logits * logit_scale
    return softmax(masked_add(logits, mask)), logits


def step_cost(state: DecodeState, chosen: np.ndarray, chi: np.ndarray, loc: np.ndarray, visit_cost, idle_transparent=False):
    """Sequence cost increment of picking ``chosen`` (B,) at the current step.

    Adds the raw cost of the pick in the current period plus the visit cost
    when its location differs from the previous counted pick. Updates
    ``state.last_loc`` in place.
    """
    B = chosen.shape[0]
    rows = np.arange(B)
    t = state.period
    picked_loc = loc[rows, chosen]
    moved = (state.last_loc != NO_LOCATION) & (picked_loc != state.last_loc)
    inc = chi[rows, chosen, t] + moved * np.asarray(visit_cost)
    update = np.ones(B, dtype=bool)
    if idle_transparent:
        update = chosen < state.n_real
    state.last_loc = np.where(update, picked_loc, state.last_loc)
    return inc


@dataclass
class DecodeResult:
    actions: np.ndarray  # (B, T*M)
    log_prob: Tensor  # (B,)
    sequence_cost: np.ndarray  # (B,)
    distributions: list = field(default_factory=list)


def decode(
    H: Tensor,
    batch: Batch,
    store: ParameterStore,
    config: DecoderConfig,
    hidden_dim: int,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    actions: np.ndarray | None = None,
    constraints=DEFAULT_CONSTRAINTS,
    keep_distributions: bool = False,
) -> DecodeResult:
    """Roll out the pointer policy over all T*M slots.

    ``mode`` is ``"greedy"`` (argmax, ties to the lowest index) or
    ``"sample"``. Passing ``actions`` scores a fixed sequence instead.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample" and actions is None and rng is None:
        raise ValueError("sampling needs an rng")
    B, K, n = batch.size, batch.n_slots, batch.n_candidates
    if H.ndim == 3:
        H = H.reshape(1, *H.shape)
    D = hidden_dim
    score_scale = np.sqrt(D // config.n_heads if config.scale_by_head_dim else D)
    keys_all = matmul(H, store["decoder.wk"])
    values_all = matmul(H, store["decoder.wv"])
    pointer_all = matmul(H, store["decoder.wp"])
    if H.shape[0] != B:
        # H holds each instance once while the batch repeats it consecutively
        if B % H.shape[0]:
            raise ValueError(f"encoder batch {H.shape[0]} does not divide decode batch {B}")
        rep = np.repeat(np.arange(H.shape[0]), B // H.shape[0])
        H, keys_all, values_all, pointer_all = H[rep], keys_all[rep], values_all[rep], pointer_all[rep]

    state = DecodeState.start(B, n, K, batch.capacity, batch.n_real)
    rows = np.arange(B)
    chosen_all = np.zeros((B, K), dtype=np.int64)
    picked = []
    distributions = []
    for k in range(K):
        state.step = k
        Hd = temporal_pointer(H, k)
        HC = context_embedding(Hd, state, store)
        mask = build_mask(state, constraints)
        probs, logits = masked_pointer_logits(
            HC,
            keys_all[:, k],
            values_all[:, k],
            pointer_all[:, k],
            mask,
            store,
            config.n_heads,
            score_scale,
            config.logit_scale,
        )
        p = probs.data
        if actions is not None:
            chosen = np.asarray(actions)[:, k].astype(np.int64)
            if np.any(mask[rows, chosen] != 0):
                raise ValueError(f"forced action at step {k} is masked")
        elif mode == "greedy":
            chosen = p.argmax(axis=1)
        else:
            u = rng.random(B)
            cum = np.cumsum(p, axis=1)
            chosen = (cum <= u[:, None]).sum(axis=1)
            overflow = chosen >= n
            if np.any(overflow):
                last_open = n - 1 - np.argmax((mask[:, ::-1] == 0), axis=1)
                chosen = np.where(overflow, last_open, chosen)
        if keep_distributions:
            distributions.append(StepDistribution(p.copy(), mask, logits.data.copy()))
        picked.append(probs[rows, chosen])
        state.cost += step_cost(state, chosen, batch.chi, batch.loc, batch.visit_cost, config.idle_transparent)
        state.selected[rows, chosen] = True
        state.last = chosen
        chosen_all[:, k] = chosen

    log_prob = concat([p.reshape(B, 1) for p in picked], axis=1).log().sum(axis=1)
    return DecodeResult(chosen_all, log_prob, state.cost.copy(), distributions)


def sequence_cost(
    sequence,
    chi: np.ndarray,
    loc: np.ndarray,
    capacity: int,
    visit_cost: float,
    n_real: int | None = None,
    idle_transparent: bool = False,
) -> float:
    """Cost of one flattened pick sequence, summed step by step."""
    total = 0.0
    last = None
    for k, v in enumerate(sequence):
        here = loc[v]
        moved = last is not None and here != last
        total += chi[v, k // capacity] + (visit_cost if moved else 0.0)
        if not (idle_transparent and n_real is not None and v >= n_real):
            last = here
    return total


@dataclass
class ScheduleSolution:
    sequence: np.ndarray  # picks per slot, 0-based candidate indices
    schedule: Schedule
    cost: float  # cost form, period-level visit flags
    sequence_cost: float
    log_prob: float
    wall_time: float = 0.0

    def to_dict(self, instance: Instance) -> dict:
        return {
            "sequence": [int(v) for v in self.sequence],
            "maint": self.schedule.maint.tolist(),
            "crew_locations": [sorted(int(j) for j in occ) for occ in self.schedule.crew_locations],
            "change_flags": self.schedule.change_flags.tolist(),
            "cost": self.cost,
            "sequence_cost": self.sequence_cost,
            "log_prob": self.log_prob,
            "wall_time": self.wall_time,
            "n_turbines": instance.n_turbines,
            "n_periods": instance.n_periods,
            "capacity": instance.capacity,
        }


def solutions_from_result(result: DecodeResult, instances, wall_time: float = 0.0) -> list[ScheduleSolution]:
    out = []
    for b, inst in enumerate(instances):
        periods = np.empty(inst.n_turbines, dtype=np.int64)
        for k, v in enumerate(result.actions[b]):
            if v < inst.n_turbines:
                periods[v] = k // inst.capacity
        sched = Schedule.from_periods(inst, periods)
        out.append(
            ScheduleSolution(
                sequence=result.actions[b].copy(),
                schedule=sched,
                cost=evaluate(inst, sched).cost,
                sequence_cost=float(result.sequence_cost[b]),
                log_prob=float(result.log_prob.data[b]),
                wall_time=wall_time,
            )
        )
    return out
