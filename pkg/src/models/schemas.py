"""
Re-export all schema models for convenient imports.

Usage:
    from src.models.schemas import RunConfig, AtppoHyper
"""

from src.models import (  # noqa: F401
    COMPARE_COLUMNS,
    ENV_DEFAULTS,
    HYPER_KEYS,
    METRIC_COLUMNS,
    Algorithm,
    AtppoHyper,
    Command,
    CompareRow,
    EngagementConfig,
    EnvConfig,
    EnvName,
    IntegratorConfig,
    MetricRow,
    Outcome,
    RewardWeights,
    RunConfig,
    build_env_config,
)

__all__ = [
    "COMPARE_COLUMNS",
    "ENV_DEFAULTS",
    "HYPER_KEYS",
    "METRIC_COLUMNS",
    "Algorithm",
    "AtppoHyper",
    "Command",
    "CompareRow",
    "EngagementConfig",
    "EnvConfig",
    "EnvName",
    "IntegratorConfig",
    "MetricRow",
    "Outcome",
    "RewardWeights",
    "RunConfig",
    "build_env_config",
]
