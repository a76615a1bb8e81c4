"""Maintenance scheduling for wind farms with an attention policy and an exact oracle."""

from .decoder import DecoderConfig, ScheduleSolution
from .encoder import EncoderConfig
from .estimator import AttentionScheduler, ExactScheduler, MaintenanceFeaturizer, check_instances
from .features import FeatureSet, build_features, maintenance_cost_matrix
from .instance import (
    GeneratorConfig,
    Instance,
    Schedule,
    check_feasible,
    generate,
    generate_many,
    read_instance,
    validate,
    write_instance,
)
from .model import PolicyModel
from .oracle import evaluate, evaluate_cost, evaluate_profit, optimality_gap, solve_exact
from .trainer import TrainConfig, train, train_preset

__version__ = "0.1.0"

__all__ = [
    "AttentionScheduler",
    "DecoderConfig",
    "EncoderConfig",
    "ExactScheduler",
    "FeatureSet",
    "GeneratorConfig",
    "Instance",
    "MaintenanceFeaturizer",
    "PolicyModel",
    "Schedule",
    "ScheduleSolution",
    "TrainConfig",
    "build_features",
    "check_feasible",
    "check_instances",
    "evaluate",
    "evaluate_cost",
    "evaluate_profit",
    "generate",
    "generate_many",
    "maintenance_cost_matrix",
    "optimality_gap",
    "read_instance",
    "solve_exact",
    "train",
    "train_preset",
    "validate",
    "write_instance",
]
