"""
etrl — Joint trigger/control policy.

Augmented observation 𝔵 = (x, r_acc[, u_held]) and the joint action (Φ, u) = π(𝔵):

    policy net output = [mean(u)_1 … mean(u)_m, logit(Φ)]   (trigger head)
                      = [mean(u)_1 … mean(u)_m]              (vanilla PPO)

    sample mode        → u ~ N(mean, exp(log_std)²), trigger ~ Bernoulli(σ(logit))
    deterministic mode → u = mean, trigger = 1 iff logit ≥ 0

Without a trigger head every step broadcasts and the joint log-prob reduces
to the Gaussian term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigurationError, NumericError, ShapeError
from src.services.nn_core import (
    ForwardCache,
    Network,
    bernoulli_logprob,
    clamp_log_std,
    gaussian_logprob,
    gaussian_sample,
    net_forward,
    net_init,
    sigmoid,
)

logger = logging.getLogger(__name__)

ACCRUED_CLIP = 10.0


class ActMode(str, Enum):
    SAMPLE = "sample"
    DETERMINISTIC = "deterministic"


# ═══════════════════════════════════════════════════════════════════════════
# Data classes
# ═══════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class AugmentedObs:
    state: np.ndarray
    accrued_reward: float
    held_control: Optional[np.ndarray] = None

    @property
    def vector(self) -> np.ndarray:
        v = np.append(self.state, self.accrued_reward)
        return v if self.held_control is None else np.concatenate([v, self.held_control])


@dataclass(frozen=True)
class JointAction:
    trigger: int
    control: np.ndarray
    logprob: float
    control_logprob: float = 0.0
    trigger_logprob: float = 0.0


@dataclass
class PolicyModel:
    """Policy network plus the state-independent log_std vector."""
    net: Network
    log_std: np.ndarray
    control_dim: int
    trigger_head: bool = True

    def __post_init__(self) -> None:
        expected = self.control_dim + (1 if self.trigger_head else 0)
        if self.net.output_dim != expected:
            raise ShapeError(f"policy output dim {self.net.output_dim} != {expected}")
        self.log_std = clamp_log_std(np.asarray(self.log_std, dtype=np.float64).reshape(self.control_dim))

    @property
    def obs_dim(self) -> int:
        return self.net.input_dim

    def heads(self, obs: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray], ForwardCache]:
        """(mean, logit or None, cache) for one obs or a batch."""
        out, cache = net_forward(self.net, obs)
        m = self.control_dim
        mean = out[..., :m]
        logit = out[..., m] if self.trigger_head else None
        return mean, logit, cache

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.net.copy(), self.log_std.copy(), self.control_dim, self.trigger_head)


def policy_init(
    obs_dim: int,
    control_dim: int,
    hidden_sizes: Sequence[int] = (64, 64),
    seed: int = 0,
    init_log_std: float = 0.0,
    trigger_head: bool = True,
) -> PolicyModel:
    dims = [obs_dim, *hidden_sizes, control_dim + (1 if trigger_head else 0)]
    net = net_init(dims, seed)
    return PolicyModel(net, np.full(control_dim, init_log_std), control_dim, trigger_head)


def value_init(obs_dim: int, hidden_sizes: Sequence[int] = (64, 64), seed: int = 1) -> Network:
    return net_init([obs_dim, *hidden_sizes, 1], seed)


# ═══════════════════════════════════════════════════════════════════════════
# Operations
# ═══════════════════════════════════════════════════════════════════════════

def augmented_dim(state_dim: int, control_dim: int, observe_held_control: bool = False) -> int:
    """Policy/value input width for an environment of the given dims."""
    return state_dim + 1 + (control_dim if observe_held_control else 0)


def augment(
    state: np.ndarray,
    accrued: float,
    c: float = 100.0,
    held: Optional[np.ndarray] = None,
) -> AugmentedObs:
    """[state; clip(accrued / c, −10, 10)], followed by ``held`` when given."""
    if c <= 0:
        raise ConfigurationError(f"accrual scale must be positive, got {c}")
    state = np.asarray(state, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(state)) or not np.isfinite(accrued):
        raise NumericError("non-finite state or accrued reward")
    slot = float(np.clip(accrued / c, -ACCRUED_CLIP, ACCRUED_CLIP))
    if held is not None:
        held = np.asarray(held, dtype=np.float64).reshape(-1).copy()
        if not np.all(np.isfinite(held)):
            raise NumericError("non-finite held control")
    return AugmentedObs(state.copy(), slot, held)


def act(
    policy: PolicyModel,
    obs: AugmentedObs,
    mode: ActMode = ActMode.SAMPLE,
    rng: Optional[np.random.Generator] = None,
) -> JointAction:
    """Joint (trigger, control) action; log-probs are recorded in sample mode."""
    x = obs.vector
    if x.shape[0] != policy.obs_dim:
        raise ShapeError(f"obs dim {x.shape[0]} != policy input {policy.obs_dim}")
    mean, logit, _ = policy.heads(x)

    if ActMode(mode) == ActMode.DETERMINISTIC:
        trigger = 1 if logit is None or float(logit) >= 0.0 else 0
        return JointAction(trigger=trigger, control=mean.copy(), logprob=0.0)

    if rng is None:
        raise ConfigurationError("sample mode requires an rng")
    control = gaussian_sample(mean, policy.log_std, rng)
    control_lp = float(gaussian_logprob(mean, policy.log_std, control))
    if logit is None:
        trigger, trigger_lp = 1, 0.0
    else:
        trigger = int(rng.random() < float(sigmoid(logit)))
        trigger_lp = bernoulli_logprob(float(logit), trigger)
    return JointAction(
        trigger=trigger,
        control=control,
        logprob=control_lp + trigger_lp,
        control_logprob=control_lp,
        trigger_logprob=trigger_lp,
    )


def joint_logprob(policy: PolicyModel, obs: np.ndarray, controls: np.ndarray, triggers: np.ndarray):
    """
    Batched joint log-prob of recorded actions under ``policy``.

    Returns
    -------
    (logprob (B,), mean (B, m), logit (B,) or None, forward cache)
    """
    mean, logit, cache = policy.heads(obs)
    lp = gaussian_logprob(mean, policy.log_std, controls)
    if logit is not None:
        lp = lp + bernoulli_logprob(logit, triggers)
    return lp, mean, logit, cache


def shaped_reward(raw: float, triggered: int, psi: float) -> float:
    """raw − Ψ on trigger steps, raw otherwise."""
    if psi < 0:
        raise ConfigurationError(f"trigger penalty must be non-negative, got {psi}")
    return raw - psi if triggered else raw
