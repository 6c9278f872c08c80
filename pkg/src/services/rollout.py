"""
etrl — Rollout collection and λ-return advantages.

Pipeline per worker:
    TriggeredRunner (env + ETC runtime + accrued reward)
        → collect_rollout (horizon transitions, behavior log-probs frozen)
        → finalize_batch (GAE(γ, λ), returns = A + V)

GAE recursion
─────────────
    δ_t = r_t + γ·V_{t+1}·(1 − done_t) − V_t
    A_t = δ_t + γλ·(1 − done_t)·A_{t+1}

V_{T} is the bootstrap value of the observation after the last transition
(zero if that transition ended an episode).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigurationError, NumericError, ShapeError
from src.models.schemas import Outcome
from src.services.env_base import Environment, StepResult
from src.services.etc_runtime import EtcState, etc_apply, etc_reset, inter_event_stats
from src.services.nn_core import Network, net_forward
from src.services.policy import ActMode, AugmentedObs, PolicyModel, act, augment, shaped_reward

logger = logging.getLogger(__name__)

Controller = Callable[[AugmentedObs], Tuple[int, np.ndarray]]


# ═══════════════════════════════════════════════════════════════════════════
# Data classes
# ═══════════════════════════════════════════════════════════════════════════

@dataclass
class Transition:
    obs: np.ndarray
    trigger: int
    control: np.ndarray
    logprob: float
    reward: float
    value: float
    done: bool
    raw_reward: float
    info: Dict[str, Any] = field(default_factory=dict)


@dataclass
class EpisodeSummary:
    raw_return: float
    n_steps: int
    n_events: int
    dt: float
    outcome: Outcome
    min_delta: float
    mean_delta: float
    terminal_state: np.ndarray
    moving_average: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def comm_fraction(self) -> float:
        return self.n_events / self.n_steps if self.n_steps else 0.0


@dataclass
class RolloutBatch:
    transitions: List[Transition]
    episode_starts: List[int] = field(default_factory=list)
    episodes: List[EpisodeSummary] = field(default_factory=list)
    bootstrap_value: float = 0.0
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.transitions)

    # ── Column views ─────────────────────────────────────────────────
    @property
    def obs(self) -> np.ndarray:
        return np.stack([tr.obs for tr in self.transitions])

    @property
    def controls(self) -> np.ndarray:
        return np.stack([tr.control for tr in self.transitions])

    @property
    def triggers(self) -> np.ndarray:
        return np.array([tr.trigger for tr in self.transitions], dtype=np.float64)

    @property
    def logprobs(self) -> np.ndarray:
        return np.array([tr.logprob for tr in self.transitions])

    @property
    def rewards(self) -> np.ndarray:
        return np.array([tr.reward for tr in self.transitions])

    @property
    def values(self) -> np.ndarray:
        return np.array([tr.value for tr in self.transitions])

    @property
    def dones(self) -> np.ndarray:
        return np.array([tr.done for tr in self.transitions], dtype=np.float64)

    @property
    def n_events(self) -> int:
        return sum(1 for tr in self.transitions if tr.info.get("event"))


# ═══════════════════════════════════════════════════════════════════════════
# Runner: environment + ETC runtime + accrued reward
# ═══════════════════════════════════════════════════════════════════════════

class TriggeredRunner:
    """
    Drives one environment instance through the zero-order hold.

    Step 0 of every episode broadcasts (t₀ = 0 is always an event); from then
    on the trigger decides whether the proposed control replaces the held one.
    """

    def __init__(
        self,
        env: Environment,
        accrual_scale: float = 100.0,
        trigger_penalty: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        observe_held_control: bool = False,
    ):
        self.env = env
        self.accrual_scale = accrual_scale
        self.trigger_penalty = trigger_penalty
        self.observe_held_control = observe_held_control
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.needs_reset = True
        self.state = np.zeros(env.dims()[0])
        self.accrued = 0.0
        self.episode_return = 0.0
        self.k = 0
        self.etc: Optional[EtcState] = None

    def reset(self) -> np.ndarray:
        seed = int(self.rng.integers(0, 2**31 - 1))
        self.state = np.asarray(self.env.reset(seed), dtype=np.float64)
        self.accrued = 0.0
        self.episode_return = 0.0
        self.k = 0
        self.etc = None
        self.needs_reset = False
        return self.state

    def observation(self) -> AugmentedObs:
        held = None
        if self.observe_held_control:
            # zeros until the step-0 broadcast, then the held control scaled to [-1, 1]
            limit = self.env.control_limit
            held = np.zeros(limit.shape) if self.etc is None else np.clip(self.etc.held_control / limit, -1.0, 1.0)
        return augment(self.state * self.env.obs_scale, self.accrued, self.accrual_scale, held)

    def advance(self, trigger: int, proposed: np.ndarray) -> Tuple[StepResult, np.ndarray, bool]:
        """Route the proposal through the ZOH, step the plant; returns (result, applied, event)."""
        if self.needs_reset:
            raise ConfigurationError("runner advanced before reset()")
        if self.etc is None:
            self.etc = etc_reset(self.state, proposed)
            applied, event = np.array(proposed, dtype=np.float64, copy=True), True
        else:
            applied, self.etc = etc_apply(self.etc, self.k * self.env.dt(), self.state, trigger, proposed)
            event = bool(trigger)

        result = self.env.step(applied)
        if not np.all(np.isfinite(result.state)) or not np.isfinite(result.raw_reward):
            raise NumericError(f"{self.env.name}: non-finite state or reward at step {self.k}")
        self.accrued += result.raw_reward
        self.episode_return += result.raw_reward
        self.state = np.asarray(result.state, dtype=np.float64)
        self.k += 1
        if result.done:
            self.needs_reset = True
        return result, applied, event

    def summary(self, outcome: Outcome) -> EpisodeSummary:
        dt = self.env.dt()
        stats = inter_event_stats(self.etc, self.k, dt)
        return EpisodeSummary(
            raw_return=self.episode_return,
            n_steps=self.k,
            n_events=len(self.etc.event_times),
            dt=dt,
            outcome=outcome,
            min_delta=stats.min_delta,
            mean_delta=stats.mean_delta,
            terminal_state=self.state.copy(),
            moving_average=stats.moving_average,
        )


# ═══════════════════════════════════════════════════════════════════════════
# Collection
# ═══════════════════════════════════════════════════════════════════════════

def _value(value_net: Network, obs: np.ndarray) -> float:
    out, _ = net_forward(value_net, obs)
    return float(out[0])


def collect_rollout(
    policy: PolicyModel,
    value_net: Network,
    runner: TriggeredRunner,
    horizon: int,
    rng: Optional[np.random.Generator] = None,
) -> RolloutBatch:
    """Exactly ``horizon`` sampled transitions; episodes continue across calls."""
    if horizon < 1:
        raise ConfigurationError(f"horizon must be ≥ 1, got {horizon}")
    rng = rng if rng is not None else runner.rng

    batch = RolloutBatch(transitions=[])
    for _ in range(horizon):
        if runner.needs_reset:
            runner.reset()
            batch.episode_starts.append(len(batch.transitions))
        aug = runner.observation()
        obs = aug.vector
        action = act(policy, aug, ActMode.SAMPLE, rng)
        value = _value(value_net, obs)

        result, applied, event = runner.advance(action.trigger, action.control)
        batch.transitions.append(Transition(
            obs=obs,
            trigger=action.trigger,
            control=action.control,
            logprob=action.logprob,
            reward=shaped_reward(result.raw_reward, action.trigger, runner.trigger_penalty),
            value=value,
            done=result.done,
            raw_reward=result.raw_reward,
            info={
                "event": event,
                "applied_control": applied,
                "t": result.info.get("t"),
                "control_logprob": action.control_logprob,
                "trigger_logprob": action.trigger_logprob,
            },
        ))
        if result.done:
            batch.episodes.append(runner.summary(result.info.get("outcome", Outcome.TIMEOUT)))

    last = batch.transitions[-1]
    batch.bootstrap_value = 0.0 if last.done else _value(value_net, runner.observation().vector)
    return batch


# ═══════════════════════════════════════════════════════════════════════════
# Advantages
# ═══════════════════════════════════════════════════════════════════════════

def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[float],
    bootstrap_value: float,
    gamma: float = 0.99,
    lam: float = 0.95,
) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation; returns (advantages, returns)."""
    if not 0.0 <= gamma < 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1), got {gamma}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"lam must lie in [0, 1], got {lam}")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not rewards.shape == values.shape == dones.shape or rewards.ndim != 1:
        raise ShapeError("rewards, values and dones must be equal-length vectors")

    n = rewards.shape[0]
    advantages = np.zeros(n)
    last_gae = 0.0
    for t in reversed(range(n)):
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last_gae = delta + gamma * lam * nonterminal * last_gae
        advantages[t] = last_gae
    return advantages, advantages + values


def normalize_advantages(advantages: Sequence[float]) -> np.ndarray:
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.shape[0] < 2:
        return adv.copy()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def finalize_batch(batch: RolloutBatch, gamma: float, lam: float) -> RolloutBatch:
    batch.advantages, batch.returns = compute_gae(
        batch.rewards, batch.values, batch.dones, batch.bootstrap_value, gamma, lam,
    )
    return batch


def merge_batches(batches: Sequence[RolloutBatch]) -> RolloutBatch:
    """Concatenate finalized per-worker batches in worker order."""
    merged = RolloutBatch(transitions=[])
    advantages, returns = [], []
    for b in batches:
        if b.advantages is None or b.returns is None:
            raise ConfigurationError("merge_batches expects finalized batches")
        offset = len(merged.transitions)
        merged.transitions.extend(b.transitions)
        merged.episode_starts.extend(offset + s for s in b.episode_starts)
        merged.episodes.extend(b.episodes)
        advantages.append(b.advantages)
        returns.append(b.returns)
    merged.advantages = np.concatenate(advantages) if advantages else np.zeros(0)
    merged.returns = np.concatenate(returns) if returns else np.zeros(0)
    return merged


def collect_parallel(
    policy: PolicyModel,
    value_net: Network,
    runners: Sequence[TriggeredRunner],
    horizon: int,
    gamma: float,
    lam: float,
) -> RolloutBatch:
    """
    Split ``horizon`` steps across ``runners`` (earlier workers take the
    remainder), collect concurrently, run GAE per worker, merge in order.
    """
    n = len(runners)
    if n == 0:
        raise ConfigurationError("at least one rollout worker is required")
    base, extra = divmod(horizon, n)
    shares = [base + (1 if i < extra else 0) for i in range(n)]
    jobs = [(r, h) for r, h in zip(runners, shares) if h > 0]

    def work(job: Tuple[TriggeredRunner, int]) -> RolloutBatch:
        runner, h = job
        return finalize_batch(collect_rollout(policy, value_net, runner, h), gamma, lam)

    if len(jobs) == 1:
        return merge_batches([work(jobs[0])])
    with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
        batches = list(pool.map(work, jobs))
    return merge_batches(batches)
