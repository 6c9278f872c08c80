"""
etrl — Perturbed single integrator.

    ẋ = u + d,   |d| ≤ d_max,   x(0) = 5

Euler-discretised at fixed dt with d ~ Uniform[−d_max, d_max] drawn i.i.d.
per step. Reward −|x| − 0.01·u² drives the state to the origin while
penalising control effort.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.core.errors import NumericError, SequencingError
from src.models.schemas import IntegratorConfig, Outcome
from src.services.env_base import StepResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntegratorState:
    x: float
    t: float


def integrator_step(
    s: IntegratorState,
    u: float,
    dt: float,
    d_max: float,
    rng: np.random.Generator,
    u_max: float = 2.0,
) -> IntegratorState:
    """One Euler step x' = x + (clamp(u) + d)·dt."""
    u = float(np.clip(u, -u_max, u_max))
    d = float(rng.uniform(-d_max, d_max)) if d_max > 0 else 0.0
    x = s.x + (u + d) * dt
    if not np.isfinite(x):
        raise NumericError(f"integrator state diverged: x={x!r}")
    return IntegratorState(x=x, t=s.t + dt)


def integrator_reward(x: float, u: float, control_weight: float = 0.01) -> float:
    return -abs(x) - control_weight * u * u


class IntegratorEnv:
    """Episodic wrapper: fixed-length episodes of t_final / dt steps."""

    name = "integrator"
    state_labels = ["x"]
    control_labels = ["u"]

    def __init__(self, config: Optional[IntegratorConfig] = None):
        self.config = config or IntegratorConfig()
        self.obs_scale = np.ones(1)
        self.control_limit = np.array([self.config.u_max])
        self.n_steps = int(round(self.config.t_final / self.config.dt))
        self._state = IntegratorState(self.config.x0, 0.0)
        self._rng = np.random.default_rng(0)
        self._k = 0
        self._done = True

    def dims(self) -> Tuple[int, int]:
        return 1, 1

    def dt(self) -> float:
        return self.config.dt

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        x0 = self.config.x0
        if self.config.x0_spread > 0:
            x0 += float(self._rng.uniform(-self.config.x0_spread, self.config.x0_spread))
        self._state = IntegratorState(x0, 0.0)
        self._k = 0
        self._done = False
        return np.array([x0])

    def step(self, applied_control: np.ndarray) -> StepResult:
        if self._done:
            raise SequencingError("integrator step called after episode end; call reset()")
        cfg = self.config
        u = float(np.clip(np.asarray(applied_control, dtype=np.float64).reshape(-1)[0], -cfg.u_max, cfg.u_max))
        self._state = integrator_step(self._state, u, cfg.dt, cfg.d_max, self._rng, cfg.u_max)
        self._k += 1
        self._done = self._k >= self.n_steps
        reward = integrator_reward(self._state.x, u, cfg.control_weight)
        outcome = Outcome.TIMEOUT if self._done else Outcome.RUNNING
        return StepResult(np.array([self._state.x]), reward, self._done, {"outcome": outcome, "t": self._state.t})
