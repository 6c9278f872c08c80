"""
etrl — Shared utility helpers.

Functions that don't belong to any single service live here.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Optional, Union

from src.core.errors import ConfigurationError
from src.models.schemas import EngagementConfig, EnvConfig, EnvName, IntegratorConfig, build_env_config
from src.services.engagement_env import EngagementEnv
from src.services.env_base import Environment
from src.services.integrator_env import IntegratorEnv


def make_env(name: Union[str, EnvName], config: Optional[Union[EnvConfig, Dict[str, Any]]] = None) -> Environment:
    """
    Environment registry.

    Parameters
    ----------
    name   : EnvName or its string value
    config : validated env config, a dict of overrides, or None for defaults
    """
    try:
        env_name = EnvName(name)
    except ValueError as exc:
        raise ConfigurationError(f"unknown environment '{name}'") from exc

    if config is None or isinstance(config, dict):
        config = build_env_config(env_name, config)

    if env_name == EnvName.INTEGRATOR:
        if not isinstance(config, IntegratorConfig):
            raise ConfigurationError("integrator env needs an IntegratorConfig")
        return IntegratorEnv(config)
    if not isinstance(config, EngagementConfig):
        raise ConfigurationError("pursuit env needs an EngagementConfig")
    return EngagementEnv(config)


def ensure_dir(path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
