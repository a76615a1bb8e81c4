"""Multi-step embedding of an instance into decoder-ready cost tensors.

The pipeline is: per-(turbine, period) scheduling cost -> idle-turbine rows
-> duplication over the M maintenance slots of each period -> location
broadcast -> normalization for the network input. Rewards always use the
raw, unnormalized costs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .instance import DEPOT, Instance


def maintenance_cost_matrix(instance: Instance) -> np.ndarray:
    """Expected cost of maintaining turbine ``i`` in period ``t``, shape (I, T).

    Before failure the cost is the maintenance cost plus the production lost
    during the maintenance period; from the failure period on it is the
    failure cost plus all production lost from failure through maintenance.
    Averaged over scenarios.
    """
    inst = instance
    T = inst.n_periods
    rev = inst.price[:, None, :] * inst.max_production  # (S, I, T)
    cum = np.cumsum(rev, axis=2)
    first_failed = inst.failure_time - 1  # 0-based column of the failure period, T if none
    cols = np.arange(T)[None, None, :]
    before = cols < first_failed[:, :, None]
    # production lost over [first_failed, t]
    prior = np.where(
        first_failed > 0,
        np.take_along_axis(cum, np.clip(first_failed - 1, 0, T - 1)[:, :, None], axis=2)[:, :, 0],
        0.0,
    )
    lost_since_failure = cum - prior[:, :, None]
    pre = inst.maint_cost[None, :, :] + rev
    post = inst.failure_cost + lost_since_failure
    return np.where(before, pre, post).mean(axis=0)


def augment_idle(x: np.ndarray, locations, capacity: int) -> tuple[np.ndarray, np.ndarray]:
    """Append ``T*M - I`` zero-cost depot rows so every slot can be filled."""
    x = np.asarray(x, dtype=np.float64)
    I, T = x.shape
    n_idle = T * capacity - I
    if n_idle < 0:
        raise ValueError(f"T*M = {T * capacity} is smaller than I = {I}")
    x_aug = np.vstack([x, np.zeros((n_idle, T))])
    loc_aug = np.concatenate([np.asarray(locations, dtype=np.int64), np.full(n_idle, DEPOT, dtype=np.int64)])
    return x_aug, loc_aug


def expand_slots(x_aug: np.ndarray, capacity: int) -> np.ndarray:
    """Copy each period's cost into its M slots: (n, T) -> (n, T, M)."""
    return np.repeat(np.asarray(x_aug)[:, :, None], capacity, axis=2)


def align_locations(locations, n_periods: int, capacity: int) -> np.ndarray:
    """Broadcast each candidate's location over (T, M)."""
    loc = np.asarray(locations, dtype=np.int64)
    return np.broadcast_to(loc[:, None, None], (loc.size, n_periods, capacity)).copy()


@dataclass(frozen=True, eq=False)
class FeatureSet:
    chi: np.ndarray  # (n, T, M) scheduling costs, raw or scaled
    loc: np.ndarray  # (n, T, M) location labels, depot = 0
    n_real: int
    n_idle: int
    n_locations: int
    visit_cost: float
    scale: float = 1.0
    normalized: bool = False

    @property
    def n_candidates(self) -> int:
        return self.chi.shape[0]

    @property
    def n_periods(self) -> int:
        return self.chi.shape[1]

    @property
    def capacity(self) -> int:
        return self.chi.shape[2]

    @property
    def n_slots(self) -> int:
        return self.n_periods * self.capacity

    @property
    def raw_chi(self) -> np.ndarray:
        return self.chi * self.scale if self.normalized else self.chi

    @property
    def candidate_locations(self) -> np.ndarray:
        return self.loc[:, 0, 0]

    def loc_onehot(self) -> np.ndarray:
        return np.eye(self.n_locations + 1)[self.loc]  # (n, T, M, J+1)

    def network_input(self) -> np.ndarray:
        """Slot-major input rows, shape (T*M, n, 1 + J + 1)."""
        fs = self if self.normalized else normalize(self)
        n = fs.n_candidates
        feats = np.concatenate([fs.chi[..., None], fs.loc_onehot()], axis=-1)  # (n, T, M, F)
        return feats.reshape(n, fs.n_slots, -1).transpose(1, 0, 2)


def build_features(instance: Instance, pad_to: int | None = None) -> FeatureSet:
    """Raw (unnormalized) features; ``pad_to`` adds extra idle candidates."""
    x = maintenance_cost_matrix(instance)
    x_aug, loc_aug = augment_idle(x, instance.location_of, instance.capacity)
    fs = FeatureSet(
        chi=expand_slots(x_aug, instance.capacity),
        loc=align_locations(loc_aug, instance.n_periods, instance.capacity),
        n_real=instance.n_turbines,
        n_idle=instance.n_idle,
        n_locations=instance.n_locations,
        visit_cost=instance.visit_cost,
    )
    if pad_to is not None:
        fs = pad_idle(fs, pad_to)
    return fs


def pad_idle(fs: FeatureSet, n_candidates: int) -> FeatureSet:
    """Add idle candidates until there are ``n_candidates`` rows."""
    extra = n_candidates - fs.n_candidates
    if extra < 0:
        raise ValueError(f"cannot pad {fs.n_candidates} candidates down to {n_candidates}")
    if extra == 0:
        return fs
    _, T, M = fs.chi.shape
    return replace(
        fs,
        chi=np.concatenate([fs.chi, np.zeros((extra, T, M))]),
        loc=np.concatenate([fs.loc, np.full((extra, T, M), DEPOT, dtype=np.int64)]),
        n_idle=fs.n_idle + extra,
    )


def normalize(fs: FeatureSet) -> FeatureSet:
    """Scale costs into [0, 1] by the largest absolute entry."""
    if fs.normalized:
        return fs
    peak = float(np.abs(fs.chi).max()) if fs.chi.size else 0.0
    if peak == 0.0:
        return replace(fs, normalized=True, scale=1.0)
    return replace(fs, chi=fs.chi / peak, scale=peak, normalized=True)


def denormalize(fs: FeatureSet) -> FeatureSet:
    if not fs.normalized:
        return fs
    return replace(fs, chi=fs.chi * fs.scale, scale=1.0, normalized=False)
