"""Lifelong policy-gradient learning with factored policy dictionaries."""

from .families import (
    TaskFamilySpec,
    TaskInstance,
    Trajectory,
    discounted_return,
    optimal_lqr_policy,
    rollout,
    sample_task,
    step,
)
from .policies import FactoredPolicy, MlpPolicy, PolicyParams, compose_policy
from .pg import NPGConfig, PGBatch, ValueBaseline, stl_train
from .lpg_ftw import KnowledgeBase, TaskRecord
from .baselines import EwcState, PgEllaState, ewc_train, pg_ella_train
from .harness import ExperimentConfig, emit_outputs, evaluate_policy, run_lifelong

__all__ = [
    "TaskFamilySpec", "TaskInstance", "Trajectory", "discounted_return",
    "optimal_lqr_policy", "rollout", "sample_task", "step",
    "FactoredPolicy", "MlpPolicy", "PolicyParams", "compose_policy",
    "NPGConfig", "PGBatch", "ValueBaseline", "stl_train",
    "KnowledgeBase", "TaskRecord",
    "EwcState", "PgEllaState", "ewc_train", "pg_ella_train",
    "ExperimentConfig", "emit_outputs", "evaluate_policy", "run_lifelong",
]

__version__ = "0.1.0"
