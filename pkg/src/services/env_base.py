"""
etrl — Environment interface shared by the built-in plants.

    reset(seed) -> state
    step(applied_control) -> StepResult(state', raw_reward, done, info)
    dims() -> (state_dim, control_dim)
    dt() -> seconds
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Protocol, Tuple, runtime_checkable

import numpy as np


@dataclass
class StepResult:
    state: np.ndarray
    raw_reward: float
    done: bool
    info: Dict[str, Any] = field(default_factory=dict)


@runtime_checkable
class Environment(Protocol):
    name: str
    state_labels: List[str]
    control_labels: List[str]
    obs_scale: np.ndarray
    control_limit: np.ndarray

    def reset(self, seed: int) -> np.ndarray: ...

    def step(self, applied_control: np.ndarray) -> StepResult: ...

    def dims(self) -> Tuple[int, int]: ...

    def dt(self) -> float: ...
