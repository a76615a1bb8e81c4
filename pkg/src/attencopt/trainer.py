"""REINFORCE training with a sampled-rollout baseline."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .decoder import Batch, DecoderConfig
from .encoder import EncoderConfig
from .features import build_features
from .instance import GeneratorConfig, generate_many, preset_name
from .model import PolicyModel
from .oracle import optimality_gap, solve_exact
from .tensor import Tensor, adam_step, no_grad

logger = logging.getLogger(__name__)

BASELINES = ("none", "rollout", "greedy")


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "desk-a"
    epochs: int = 20
    instances_per_epoch: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-4
    baseline: str = "rollout"
    n_baseline_rollouts: int = 8
    seed: int = 1
    n_validation: int = 50
    validation_seed: int = 10_007
    hidden_dim: int = 128
    n_layers: int = 3
    n_heads: int = 8
    logit_scale: float = 1.0
    idle_transparent: bool = False
    residual: bool = False
    layer_norm: bool = False

    def __post_init__(self):
        preset_name(self.preset)
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        for name in ("instances_per_epoch", "batch_size", "n_baseline_rollouts", "hidden_dim", "n_layers", "n_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.n_validation < 0:
            raise ValueError("epochs and n_validation must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size > self.instances_per_epoch:
            raise ValueError("batch_size cannot exceed instances_per_epoch")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            n_layers=self.n_layers,
            hidden_dim=self.hidden_dim,
            n_heads=self.n_heads,
            residual=self.residual,
            layer_norm=self.layer_norm,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(n_heads=self.n_heads, logit_scale=self.logit_scale, idle_transparent=self.idle_transparent)

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig.preset(self.preset)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**doc)


TRAIN_PRESETS = {
    "desk-case-a": TrainConfig(preset="desk-a"),
    "desk-case-b": TrainConfig(preset="desk-b"),
    "desk-case-c": TrainConfig(preset="desk-c"),
    # published scale; far beyond a single CPU
    "full-scale": TrainConfig(preset="case1", epochs=100, instances_per_epoch=25_600),
    "smoke": TrainConfig(preset="desk-a", epochs=2, instances_per_epoch=64, n_validation=8, hidden_dim=16, n_heads=2),
}


def train_preset(name: str, **overrides) -> TrainConfig:
    if name not in TRAIN_PRESETS:
        raise KeyError(f"unknown training preset {name!r}; choose from {sorted(TRAIN_PRESETS)}")
    return replace(TRAIN_PRESETS[name], **overrides)


@dataclass
class TrainLog:
    batches: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    BATCH_FIELDS = ("epoch", "batch", "mean_cost", "mean_baseline", "loss", "grad_norm", "skipped")
    EPOCH_FIELDS = ("epoch", "mean_cost", "mean_baseline", "mean_loss", "mean_grad_norm", "val_mean_gap", "val_mean_cost")

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "batches.csv", self.BATCH_FIELDS, self.batches)
        _write_csv(out / "epochs.csv", self.EPOCH_FIELDS, self.epochs)
        _write_csv(out / "timing.csv", ("epoch", "wall_time"), self.timings)

    @classmethod
    def read(cls, out_dir) -> "TrainLog":
        out = Path(out_dir)
        return cls(
            batches=_read_csv(out / "batches.csv"),
            epochs=_read_csv(out / "epochs.csv"),
            timings=_read_csv(out / "timing.csv"),
        )


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _read_csv(path: Path) -> list:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = int(v)
            except ValueError:
                parsed[k] = float(v)
        out.append(parsed)
    return out


def rollout_baseline(model: PolicyModel, batch: Batch, H: Tensor, n_rollouts: int, rng) -> np.ndarray:
    """Mean sequence cost of ``n_rollouts`` sampled decodes per instance, without gradients."""
    with no_grad():
        result = model.run(batch.repeat(n_rollouts), mode="sample", rng=rng, H=H.detach())
    return result.sequence_cost.reshape(batch.size, n_rollouts).mean(axis=1)


def greedy_baseline(model: PolicyModel, batch: Batch) -> np.ndarray:
    with no_grad():
        return model.run(batch, mode="greedy").sequence_cost


def surrogate_loss(log_prob: Tensor, advantage: np.ndarray) -> Tensor:
    """mean((L - b) * log p); its gradient is the policy-gradient estimate."""
    return (log_prob * Tensor(advantage)).mean()


def reinforce_gradient(
    model: PolicyModel,
    batch: Batch,
    rng: np.random.Generator,
    baseline: str = "rollout",
    n_rollouts: int = 8,
    baseline_model: PolicyModel | None = None,
) -> tuple[dict, dict]:
    """Sample one decode per instance and return (gradients, batch statistics)."""
    H = model.encode(batch)
    result = model.run(batch, mode="sample", rng=rng, H=H)
    cost = result.sequence_cost
    if baseline == "rollout":
        b = rollout_baseline(model, batch, H, n_rollouts, rng)
    elif baseline == "greedy":
        b = greedy_baseline(baseline_model or model, batch)
    else:
        b = np.zeros(batch.size)
    advantage = cost - b
    bad = ~np.isfinite(advantage)
    if np.any(bad):
        logger.warning("skipping %d instances with non-finite cost", int(bad.sum()))
        advantage = np.where(bad, 0.0, advantage)
    loss = surrogate_loss(result.log_prob, advantage)
    model.store.zero_grad()
    loss.backward()
    grads = model.store.grads()
    grad_norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    stats_row = {
        "mean_cost": float(np.mean(cost[~bad])) if np.any(~bad) else float("nan"),
        "mean_baseline": float(np.mean(b)),
        "loss": float(loss.data),
        "grad_norm": grad_norm,
        "skipped": int(bad.sum()),
    }
    return grads, stats_row


class Validator:
    """Greedy-decode gap against exact optima on a fixed held-out set."""

    def __init__(self, config: TrainConfig):
        self.instances = generate_many(replace(config.generator(), seed=config.validation_seed), config.n_validation)
        self.optima = [solve_exact(inst).value for inst in self.instances] if self.instances else []

    def __call__(self, model: PolicyModel) -> tuple[float, float, list]:
        if not self.instances:
            return float("nan"), float("nan"), []
        sols = model.solve(self.instances)
        gaps = [optimality_gap(s.cost, opt) for s, opt in zip(sols, self.optima)]
        return float(np.mean(gaps)), float(np.mean([s.cost for s in sols])), sols


def _epoch_rngs(seed: int, epoch: int):
    ss = np.random.SeedSequence([seed, epoch])
    data_seed, sample_seed = ss.generate_state(2, dtype=np.uint64)
    return int(data_seed), np.random.default_rng(sample_seed)


def train(
    config: TrainConfig,
    out_dir=None,
    resume: bool = False,
    model: PolicyModel | None = None,
    stop_after: int | None = None,
    instances=None,
) -> tuple[PolicyModel, TrainLog]:
    """Train a policy; checkpoints and logs go to ``out_dir`` when given.

    Every epoch draws fresh instances and sampling noise from
    ``(seed, epoch)``, so a run resumed from its last checkpoint follows the
    same trajectory as an uninterrupted one. ``stop_after`` ends the run
    early after that many epochs (used to test resumption). ``instances``
    replaces the generator with a fixed training pool, reshuffled each epoch.
    """
    out = Path(out_dir) if out_dir is not None else None
    log = TrainLog()
    first_epoch = 1
    if resume:
        if out is None or not (out / "state.json").exists():
            raise FileNotFoundError("nothing to resume from")
        state = json.loads((out / "state.json").read_text())
        model = PolicyModel.load(out / "model.ckpt")
        log = TrainLog.read(out)
        first_epoch = int(state["epoch"]) + 1
    elif model is None:
        model = PolicyModel.initialize(
            n_locations=config.generator().n_locations,
            encoder=config.encoder_config(),
            decoder=config.decoder_config(),
            seed=config.seed,
        )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True) + "\n")

    validate = Validator(config)
    baseline_model = None
    if config.baseline == "greedy":
        baseline_model = PolicyModel(model.encoder, model.decoder, model.n_locations, model.store.copy())

    if first_epoch == 1:
        gap, cost, _ = validate(model)
        log.epochs.append(_epoch_row(0, [], gap, cost))
        log.timings.append({"epoch": 0, "wall_time": 0.0})
        if out is not None:
            model.save(out / "checkpoints" / "epoch_000.ckpt")

    generator = config.generator()
    last_epoch = config.epochs if stop_after is None else min(config.epochs, first_epoch - 1 + stop_after)
    for epoch in range(first_epoch, last_epoch + 1):
        start = time.perf_counter()
        data_seed, rng = _epoch_rngs(config.seed, epoch)
        if instances is None:
            epoch_pool = generate_many(replace(generator, seed=data_seed), config.instances_per_epoch)
        else:
            order = np.random.default_rng(data_seed).permutation(len(instances))
            reps = -(-config.instances_per_epoch // len(instances))
            epoch_pool = [instances[i] for i in np.tile(order, reps)[: config.instances_per_epoch]]
        rows = []
        for b0 in range(0, len(epoch_pool) - config.batch_size + 1, config.batch_size):
            chunk = epoch_pool[b0 : b0 + config.batch_size]
            batch = Batch.from_features(build_features(inst) for inst in chunk)
            grads, row = reinforce_gradient(
                model, batch, rng, config.baseline, config.n_baseline_rollouts, baseline_model
            )
            adam_step(model.store, grads, lr=config.learning_rate)
            row = {"epoch": epoch, "batch": len(rows) + 1, **row}
            rows.append(row)
            log.batches.append(row)
        gap, cost, sols = validate(model)
        log.epochs.append(_epoch_row(epoch, rows, gap, cost))
        log.timings.append({"epoch": epoch, "wall_time": time.perf_counter() - start})
        logger.info("epoch %d: mean cost %.2f, validation gap %.3f%%", epoch, log.epochs[-1]["mean_cost"], gap)
        if baseline_model is not None:
            baseline_model = _maybe_update_baseline(model, baseline_model, validate)
        if out is not None:
            model.save(out / "checkpoints" / f"epoch_{epoch:03d}.ckpt")
            model.save(out / "model.ckpt")
            (out / "state.json").write_text(json.dumps({"epoch": epoch}) + "\n")
            log.write(out)
    if out is not None:
        if not (out / "model.ckpt").exists():
            model.save(out / "model.ckpt")
        log.write(out)
    return model, log


def _epoch_row(epoch: int, rows: list, gap: float, cost: float) -> dict:
    def mean(key):
        return float(np.mean([r[key] for r in rows])) if rows else float("nan")

    return {
        "epoch": epoch,
        "mean_cost": mean("mean_cost"),
        "mean_baseline": mean("mean_baseline"),
        "mean_loss": mean("loss"),
        "mean_grad_norm": mean("grad_norm"),
        "val_mean_gap": gap,
        "val_mean_cost": cost,
    }


def _maybe_update_baseline(model: PolicyModel, baseline_model: PolicyModel, validate: Validator) -> PolicyModel:
    """Replace the greedy baseline policy when the current one is significantly better."""
    if len(validate.instances) < 2:
        return baseline_model
    current = [s.cost for s in model.solve(validate.instances)]
    frozen = [s.cost for s in baseline_model.solve(validate.instances)]
    if np.mean(current) < np.mean(frozen):
        p = stats.ttest_rel(current, frozen, alternative="less").pvalue
        if p < 0.05:
            return PolicyModel(model.encoder, model.decoder, model.n_locations, model.store.copy())
    return baseline_model
