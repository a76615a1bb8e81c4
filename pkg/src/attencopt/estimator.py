"""scikit-learn style wrappers around the featurizer, the policy and the exact solver.

``X`` is always a collection of instances: ``Instance`` objects, their dict
form, or paths to instance JSON files. ``y`` is accepted and ignored.
"""

from __future__ import annotations

from dataclasses import fields
from os import PathLike
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .features import build_features
from .instance import Instance, check_feasible, read_instance, validate
from .model import PolicyModel
from .oracle import evaluate, solve_exact
from .trainer import TrainConfig, train


def check_instances(X, *, allow_single: bool = True, check_values: bool = True) -> list[Instance]:
    """Coerce ``X`` to a list of validated instances.

    A single instance is wrapped in a list when ``allow_single`` is set.
    Raises ``ValueError`` for empty input or for instances that fail
    validation, and ``TypeError`` for anything that is not an instance.
    """
    if isinstance(X, (Instance, dict, str, PathLike)):
        if not allow_single:
            raise TypeError("expected a sequence of instances, got a single one")
        X = [X]
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of instances, got {type(X).__name__}") from None
    if not items:
        raise ValueError("at least one instance is required")
    out = []
    for k, item in enumerate(items):
        if isinstance(item, dict):
            item = Instance.from_dict(item)
        elif isinstance(item, (str, PathLike)):
            item = read_instance(Path(item))
        elif not isinstance(item, Instance):
            raise TypeError(f"item {k}: expected Instance, dict or path, got {type(item).__name__}")
        if check_values:
            report = validate(item)
            if not report.ok:
                raise ValueError(f"item {k}: invalid instance: {'; '.join(report.problems)}")
        out.append(item)
    return out


def _check_n_locations(instances, n_locations: int) -> None:
    for k, inst in enumerate(instances):
        if inst.n_locations != n_locations:
            raise ValueError(f"item {k} has {inst.n_locations} locations, estimator was fitted with {n_locations}")


class MaintenanceFeaturizer(TransformerMixin, BaseEstimator):
    """Instance -> network input tensor of shape (T*M, I+I', J+2).

    ``pad_to`` adds idle candidates up to a fixed candidate count so that
    instances of different sizes share a feature width along that axis.
    ``stack`` returns one array when all transformed instances share a shape.
    """

    def __init__(self, pad_to=None, stack=True):
        self.pad_to = pad_to
        self.stack = stack

    def fit(self, X, y=None):
        instances = check_instances(X)
        self.n_locations_ = instances[0].n_locations
        _check_n_locations(instances, self.n_locations_)
        self.n_features_out_ = self.n_locations_ + 2
        return self

    def transform(self, X):
        check_is_fitted(self, "n_locations_")
        instances = check_instances(X)
        _check_n_locations(instances, self.n_locations_)
        arrays = [build_features(inst, pad_to=self.pad_to).network_input() for inst in instances]
        if self.stack and len({a.shape for a in arrays}) == 1:
            return np.stack(arrays)
        return arrays


class AttentionScheduler(BaseEstimator):
    """Attention policy trained with REINFORCE; ``predict`` returns maintenance matrices.

    Constructor arguments mirror ``TrainConfig``. ``fit(X)`` trains on the
    given instances (reshuffled every epoch); ``fit(None)`` draws fresh
    instances from the ``preset`` generator instead.
    """

    def __init__(
        self,
        preset="desk-a",
        epochs=20,
        instances_per_epoch=2000,
        batch_size=32,
        learning_rate=1e-4,
        baseline="rollout",
        n_baseline_rollouts=8,
        seed=1,
        n_validation=50,
        validation_seed=10_007,
        hidden_dim=128,
        n_layers=3,
        n_heads=8,
        logit_scale=1.0,
        idle_transparent=False,
        residual=False,
        layer_norm=False,
        decode="greedy",
        pad_to=None,
        out_dir=None,
    ):
        self.preset = preset
        self.epochs = epochs
        self.instances_per_epoch = instances_per_epoch
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.baseline = baseline
        self.n_baseline_rollouts = n_baseline_rollouts
        self.seed = seed
        self.n_validation = n_validation
        self.validation_seed = validation_seed
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.logit_scale = logit_scale
        self.idle_transparent = idle_transparent
        self.residual = residual
        self.layer_norm = layer_norm
        self.decode = decode
        self.pad_to = pad_to
        self.out_dir = out_dir

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, X=None, y=None):
        config = self.train_config()
        instances = None if X is None else check_instances(X)
        if instances is not None:
            _check_n_locations(instances, config.generator().n_locations)
        self.model_, self.log_ = train(config, out_dir=self.out_dir, instances=instances)
        self.n_locations_ = self.model_.n_locations
        return self

    @classmethod
    def from_checkpoint(cls, path, **params) -> "AttentionScheduler":
        """Wrap a saved policy as an already fitted estimator."""
        model = PolicyModel.load(path)
        est = cls(
            hidden_dim=model.encoder.hidden_dim,
            n_layers=model.encoder.n_layers,
            n_heads=model.encoder.n_heads,
            logit_scale=model.decoder.logit_scale,
            idle_transparent=model.decoder.idle_transparent,
            residual=model.encoder.residual,
            layer_norm=model.encoder.layer_norm,
            **params,
        )
        est.model_ = model
        est.log_ = None
        est.n_locations_ = model.n_locations
        return est

    def _fitted_model(self) -> PolicyModel:
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit or from_checkpoint")
        return self.model_

    def solve(self, X, seed=None):
        """Full solutions (sequence, schedule, cost, log-probability, timing)."""
        model = self._fitted_model()
        instances = check_instances(X)
        _check_n_locations(instances, self.n_locations_)
        return model.solve(instances, mode=self.decode, seed=seed, pad_to=self.pad_to)

    def predict(self, X):
        """Binary maintenance matrices, one (I, T) array per instance."""
        return [sol.schedule.maint.copy() for sol in self.solve(X)]

    def score(self, X, y=None):
        """Negative mean cost of the predicted schedules (higher is better)."""
        instances = check_instances(X)
        return -float(np.mean([evaluate(inst, m).cost for inst, m in zip(instances, self.predict(instances))]))


class ExactScheduler(BaseEstimator):
    """Branch-and-bound optimum behind the same predict/score interface."""

    def __init__(self, time_limit=None, max_turbines=10):
        self.time_limit = time_limit
        self.max_turbines = max_turbines

    def fit(self, X=None, y=None):
        if X is not None:
            check_instances(X)
        self.fitted_ = True
        return self

    def solve(self, X):
        check_is_fitted(self, "fitted_")
        return [
            solve_exact(inst, time_limit=self.time_limit, max_turbines=self.max_turbines)
            for inst in check_instances(X)
        ]

    def predict(self, X):
        return [res.schedule.maint.copy() for res in self.solve(X)]

    def score(self, X, y=None):
        instances = check_instances(X)
        return -float(np.mean([evaluate(inst, m).cost for inst, m in zip(instances, self.predict(instances))]))


def feasibility_rate(instances, matrices) -> float:
    """Fraction of predicted matrices that satisfy the scheduling constraints."""
    ok = [check_feasible(inst, m).feasible for inst, m in zip(instances, matrices)]
    return float(np.mean(ok)) if ok else float("nan")
