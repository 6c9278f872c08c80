"""
etrl — Event-triggered PPO learner.

Training cycle
──────────────
    collect (sampled trigger + control, reward shaped by −Ψ on trigger steps)
      → GAE(γ, λ)
      → epochs × shuffled minibatches of the clipped surrogate

    policy loss = −mean(min(ρA, clip(ρ, 1−ε, 1+ε)A)) − c_ent·H
    value loss  = c_v · mean((V − R)²)
    ρ           = exp(logπ(trigger, u | 𝔵) − logπ_b(trigger, u | 𝔵))

With the trigger head removed (``force_trigger``) and Ψ = 0 every step
broadcasts and the update is the standard clipped-surrogate PPO.

Evaluation runs the policy in deterministic mode (u = mean, trigger iff
logit ≥ 0) through the same ETC runtime used for training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import ConfigurationError, NumericError
from src.models.schemas import Algorithm, AtppoHyper, MetricRow, Outcome, RunConfig
from src.services.checkpoint import Checkpoint, check_env_dims, save_checkpoint
from src.services.env_base import Environment
from src.services.guidance import PngController
from src.services.nn_core import (
    AdamState,
    Network,
    adam_init,
    adam_step,
    bernoulli_entropy,
    bernoulli_entropy_grad,
    clamp_log_std,
    clip_grad_norm,
    gaussian_entropy,
    gaussian_logprob_grads,
    net_backward,
    net_forward,
    sigmoid,
)
from src.services.policy import (
    ActMode,
    AugmentedObs,
    PolicyModel,
    act,
    augmented_dim,
    joint_logprob,
    policy_init,
    value_init,
)
from src.services.rollout import (
    Controller,
    EpisodeSummary,
    RolloutBatch,
    TriggeredRunner,
    collect_parallel,
    normalize_advantages,
)
from src.utils.helpers import make_env

logger = logging.getLogger(__name__)


# ═══════════════════════════════════════════════════════════════════════════
# Learner state
# ═══════════════════════════════════════════════════════════════════════════

@dataclass
class LearnerState:
    policy: PolicyModel
    value_net: Network
    policy_adam: AdamState
    value_adam: AdamState
    total_steps: int = 0


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    mean_ratio: float
    clip_fraction: float
    entropy: float
    approx_kl: float
    first_ratio_deviation: float
    n_minibatches: int


def learner_init(obs_dim: int, control_dim: int, hyper: AtppoHyper) -> LearnerState:
    policy = policy_init(
        obs_dim, control_dim, hyper.hidden_sizes, seed=hyper.seed,
        init_log_std=hyper.init_log_std, trigger_head=not hyper.force_trigger,
    )
    value_net = value_init(obs_dim, hyper.hidden_sizes, seed=hyper.seed + 1)
    return LearnerState(
        policy=policy,
        value_net=value_net,
        policy_adam=adam_init(policy.net.parameters() + [policy.log_std], hyper.learning_rate),
        value_adam=adam_init(value_net.parameters(), hyper.learning_rate),
    )


# ═══════════════════════════════════════════════════════════════════════════
# Clipped surrogate
# ═══════════════════════════════════════════════════════════════════════════

def clipped_surrogate(ratio, advantage, clip_eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-sample min(ρA, clip(ρ, 1−ε, 1+ε)A) and its derivative with respect to ρ.

    The derivative is A where the unclipped term is active and 0 where the
    clipped term wins.
    """
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    unclipped = ratio * advantage
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage
    objective = np.minimum(unclipped, clipped)
    d_ratio = np.where(unclipped <= clipped, advantage, 0.0)
    return objective, d_ratio


@dataclass
class LossAndGrads:
    policy_loss: float
    value_loss: float
    policy_grads: List[np.ndarray]      # [W0, b0, …, log_std]
    value_grads: List[np.ndarray]
    info: dict


def surrogate_loss_and_grads(
    policy: PolicyModel,
    value_net: Network,
    obs: np.ndarray,
    controls: np.ndarray,
    triggers: np.ndarray,
    old_logprob: np.ndarray,
    adv: np.ndarray,
    returns: np.ndarray,
    hyper: AtppoHyper,
) -> LossAndGrads:
    """Minibatch policy/value losses and their exact parameter gradients."""
    m = policy.control_dim
    b = obs.shape[0]

    # ── Policy ───────────────────────────────────────────────────────
    logprob, mean, logit, cache = joint_logprob(policy, obs, controls, triggers)
    ratio = np.exp(logprob - old_logprob)
    objective, d_ratio = clipped_surrogate(ratio, adv, hyper.clip_eps)

    ent = gaussian_entropy(policy.log_std)
    if logit is not None:
        ent += float(np.mean(bernoulli_entropy(logit)))
    policy_loss = -float(np.mean(objective)) - hyper.entropy_coef * ent

    g = -d_ratio * ratio / b                      # ∂loss/∂logπ per sample
    d_mean, d_log_std_lp = gaussian_logprob_grads(mean, policy.log_std, controls)
    d_out = np.zeros((b, policy.net.output_dim))
    d_out[:, :m] = g[:, None] * d_mean
    d_log_std = np.sum(g[:, None] * d_log_std_lp, axis=0) - hyper.entropy_coef * np.ones(m)
    if logit is not None:
        d_out[:, m] = g * (triggers - sigmoid(logit)) - hyper.entropy_coef * bernoulli_entropy_grad(logit) / b

    # ── Value ────────────────────────────────────────────────────────
    v, v_cache = net_forward(value_net, obs)
    err = v[:, 0] - returns
    value_loss = hyper.value_coef * float(np.mean(err * err))
    d_v = (2.0 * hyper.value_coef / b) * err[:, None]

    if not (np.isfinite(policy_loss) and np.isfinite(value_loss)):
        raise NumericError(f"non-finite loss (policy={policy_loss!r}, value={value_loss!r})")

    info = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "mean_ratio": float(np.mean(ratio)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > hyper.clip_eps)),
        "entropy": ent,
        "approx_kl": float(np.mean(old_logprob - logprob)),
        "max_ratio_deviation": float(np.max(np.abs(ratio - 1.0))),
    }
    return LossAndGrads(
        policy_loss=policy_loss,
        value_loss=value_loss,
        policy_grads=net_backward(policy.net, cache, d_out).as_list() + [d_log_std],
        value_grads=net_backward(value_net, v_cache, d_v).as_list(),
        info=info,
    )


def _minibatch_step(
    state: LearnerState,
    obs: np.ndarray,
    controls: np.ndarray,
    triggers: np.ndarray,
    old_logprob: np.ndarray,
    adv: np.ndarray,
    returns: np.ndarray,
    hyper: AtppoHyper,
) -> Tuple[LearnerState, dict]:
    policy = state.policy
    lg = surrogate_loss_and_grads(policy, state.value_net, obs, controls, triggers, old_logprob, adv, returns, hyper)

    p_grads, _ = clip_grad_norm(lg.policy_grads, hyper.max_grad_norm)
    new_p, p_adam = adam_step(policy.net.parameters() + [policy.log_std], p_grads, state.policy_adam)
    v_grads, _ = clip_grad_norm(lg.value_grads, hyper.max_grad_norm)
    new_v, v_adam = adam_step(state.value_net.parameters(), v_grads, state.value_adam)

    new_policy = PolicyModel(
        policy.net.with_parameters(new_p[:-1]), clamp_log_std(new_p[-1]), policy.control_dim, policy.trigger_head,
    )
    new_state = LearnerState(new_policy, state.value_net.with_parameters(new_v), p_adam, v_adam, state.total_steps)
    return new_state, lg.info


def ppo_update(
    state: LearnerState,
    batch: RolloutBatch,
    hyper: AtppoHyper,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[LearnerState, UpdateStats]:
    """``epochs_per_batch`` passes over shuffled minibatches of a finalized batch."""
    if batch.advantages is None or batch.returns is None:
        raise ConfigurationError("ppo_update needs a batch with advantages and returns")
    n = len(batch)
    if n == 0:
        raise ConfigurationError("ppo_update needs a non-empty batch")
    rng = rng if rng is not None else np.random.default_rng(hyper.seed)

    obs, controls, triggers = batch.obs, batch.controls, batch.triggers
    old_logprob = batch.logprobs
    adv = normalize_advantages(batch.advantages)
    returns = np.asarray(batch.returns, dtype=np.float64)

    infos: List[dict] = []
    for _ in range(hyper.epochs_per_batch):
        order = rng.permutation(n)
        for start in range(0, n, hyper.minibatch_size):
            idx = order[start:start + hyper.minibatch_size]
            state, info = _minibatch_step(
                state, obs[idx], controls[idx], triggers[idx], old_logprob[idx], adv[idx], returns[idx], hyper,
            )
            infos.append(info)

    def avg(key: str) -> float:
        return float(np.mean([i[key] for i in infos]))

    stats = UpdateStats(
        policy_loss=avg("policy_loss"),
        value_loss=avg("value_loss"),
        mean_ratio=avg("mean_ratio"),
        clip_fraction=avg("clip_fraction"),
        entropy=infos[-1]["entropy"],
        approx_kl=avg("approx_kl"),
        first_ratio_deviation=infos[0]["max_ratio_deviation"],
        n_minibatches=len(infos),
    )
    return state, stats


# ═══════════════════════════════════════════════════════════════════════════
# Training loop
# ═══════════════════════════════════════════════════════════════════════════

@dataclass
class MetricLog:
    rows: List[MetricRow] = field(default_factory=list)

    def append(self, row: MetricRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise ConfigurationError(f"metric steps must increase ({self.rows[-1].step} → {row.step})")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[MetricRow]:
        return iter(self.rows)


def to_checkpoint(state: LearnerState, config: RunConfig) -> Checkpoint:
    return Checkpoint(
        env_name=config.env,
        algorithm=config.algorithm,
        hyper=config.hyper,
        policy=state.policy.copy(),
        value_net=state.value_net.copy(),
        total_steps=state.total_steps,
        env_config=config.env_config().model_dump(),
    )


def _metric_row(step: int, batch: RolloutBatch, runners: Sequence[TriggeredRunner],
                stats: UpdateStats, dt: float) -> MetricRow:
    if batch.episodes:
        mean_return = float(np.mean([ep.raw_return for ep in batch.episodes]))
        mean_inter_event = float(np.mean([ep.mean_delta for ep in batch.episodes]))
    else:
        logger.warning("No episode completed in this batch; reporting in-progress returns")
        mean_return = float(np.mean([r.episode_return for r in runners]))
        mean_inter_event = len(batch) * dt / max(batch.n_events, 1)
    return MetricRow(
        step=step,
        mean_raw_return=mean_return,
        comm_fraction=batch.n_events / len(batch),
        mean_inter_event=mean_inter_event,
        policy_loss=stats.policy_loss,
        value_loss=stats.value_loss,
        clip_fraction=stats.clip_fraction,
    )


def train(
    config: RunConfig,
    diagnostic_path: Optional[Union[str, Path]] = None,
    on_cycle: Optional[Callable[[MetricRow, UpdateStats], None]] = None,
) -> Tuple[Checkpoint, MetricLog]:
    """
    Collect / GAE / update until ``total_steps`` environment steps are consumed.

    On a numeric abort the last good parameters are written to
    ``diagnostic_path`` (when given) before the error propagates.
    """
    hyper = config.hyper
    env_config = config.env_config()
    streams = np.random.SeedSequence(hyper.seed).spawn(hyper.num_workers + 1)
    runners = [
        TriggeredRunner(make_env(config.env, env_config), hyper.accrual_scale, hyper.trigger_penalty,
                        np.random.default_rng(s), hyper.observe_held_control)
        for s in streams[:-1]
    ]
    update_rng = np.random.default_rng(streams[-1])

    state_dim, control_dim = runners[0].env.dims()
    dt = runners[0].env.dt()
    state = learner_init(augmented_dim(state_dim, control_dim, hyper.observe_held_control), control_dim, hyper)
    log = MetricLog()
    logger.info(
        "Training %s on %s: %d steps, horizon %d, Ψ=%.4g, %d worker(s)",
        config.algorithm.value, config.env.value, hyper.total_steps, hyper.horizon,
        hyper.trigger_penalty, hyper.num_workers,
    )

    try:
        while state.total_steps < hyper.total_steps:
            horizon = min(hyper.horizon, hyper.total_steps - state.total_steps)
            batch = collect_parallel(state.policy, state.value_net, runners, horizon, hyper.gamma, hyper.lam)
            new_state, stats = ppo_update(state, batch, hyper, update_rng)
            new_state.total_steps = state.total_steps + len(batch)
            state = new_state

            row = _metric_row(state.total_steps, batch, runners, stats, dt)
            log.append(row)
            logger.info(
                "step %d | return %.3f | comm %.3f | Δ̄ %.3fs | π-loss %.4f | V-loss %.4f | clip %.3f",
                row.step, row.mean_raw_return, row.comm_fraction, row.mean_inter_event,
                row.policy_loss, row.value_loss, row.clip_fraction,
            )
            if on_cycle is not None:
                on_cycle(row, stats)
    except NumericError:
        if diagnostic_path is not None:
            save_checkpoint(to_checkpoint(state, config), diagnostic_path)
            logger.error("Numeric abort at step %d; diagnostic checkpoint: %s", state.total_steps, diagnostic_path)
        else:
            logger.error("Numeric abort at step %d", state.total_steps)
        raise

    return to_checkpoint(state, config), log


# ═══════════════════════════════════════════════════════════════════════════
# Evaluation
# ═══════════════════════════════════════════════════════════════════════════

@dataclass
class EpisodeTrace:
    """Per-step record of one evaluation episode (pre-step state at time t)."""
    state_labels: List[str]
    control_labels: List[str]
    dt: float
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    controls: List[np.ndarray] = field(default_factory=list)
    triggered: List[int] = field(default_factory=list)
    inter_event: List[float] = field(default_factory=list)
    positions: List[Tuple[float, float, float, float]] = field(default_factory=list)
    summary: Optional[EpisodeSummary] = None

    def __len__(self) -> int:
        return len(self.times)

    @property
    def event_times(self) -> List[float]:
        return [t for t, e in zip(self.times, self.triggered) if e]

    @property
    def lyapunov(self) -> np.ndarray:
        return np.array([0.5 * float(np.sum(s * s)) for s in self.states])


@dataclass
class EvalReport:
    label: str
    algorithm: str
    env_name: str
    dt: float
    traces: List[EpisodeTrace] = field(default_factory=list)

    @property
    def episodes(self) -> List[EpisodeSummary]:
        return [tr.summary for tr in self.traces if tr.summary is not None]

    @property
    def mean_return(self) -> float:
        eps = self.episodes
        return float(np.mean([e.raw_return for e in eps])) if eps else 0.0

    @property
    def comm_fraction(self) -> float:
        eps = self.episodes
        return float(np.mean([e.comm_fraction for e in eps])) if eps else 0.0

    @property
    def min_inter_event(self) -> float:
        eps = self.episodes
        return float(min(e.min_delta for e in eps)) if eps else 0.0

    @property
    def capture_rate(self) -> Optional[float]:
        eps = self.episodes
        if self.env_name != "pursuit" or not eps:
            return None
        return sum(1 for e in eps if e.outcome == Outcome.CAPTURE) / len(eps)


class PolicyController:
    """Deterministic policy: u = mean, trigger iff logit ≥ 0."""

    def __init__(self, policy: PolicyModel):
        self.policy = policy

    def __call__(self, obs: AugmentedObs) -> Tuple[int, np.ndarray]:
        action = act(self.policy, obs, ActMode.DETERMINISTIC)
        return action.trigger, action.control


def run_episodes(
    env: Environment,
    controller: Controller,
    episodes: int,
    seed: int = 0,
    accrual_scale: float = 100.0,
    label: str = "",
    algorithm: str = "",
    observe_held_control: bool = False,
) -> EvalReport:
    """Roll ``controller`` through the ETC runtime for ``episodes`` episodes."""
    if episodes < 0:
        raise ConfigurationError(f"episodes must be ≥ 0, got {episodes}")
    dt = env.dt()
    report = EvalReport(label=label or algorithm, algorithm=algorithm, env_name=env.name, dt=dt)
    runner = TriggeredRunner(env, accrual_scale, 0.0, np.random.default_rng(seed), observe_held_control)
    positions = getattr(env, "positions", None)

    for _ in range(episodes):
        runner.reset()
        trace = EpisodeTrace(list(env.state_labels), list(env.control_labels), dt)
        last_event_step = 0
        while True:
            k = runner.k
            state = runner.state.copy()
            pos = positions() if positions is not None else None
            trigger, proposed = controller(runner.observation())
            result, applied, event = runner.advance(trigger, proposed)

            trace.times.append(k * dt)
            trace.states.append(state)
            trace.controls.append(np.asarray(applied, dtype=np.float64))
            trace.triggered.append(1 if event else 0)
            trace.inter_event.append((k - last_event_step) * dt if event and k > 0 else 0.0)
            if pos is not None:
                trace.positions.append(pos)
            if event:
                last_event_step = k
            if result.done:
                break
        trace.summary = runner.summary(result.info.get("outcome", Outcome.TIMEOUT))
        report.traces.append(trace)

    logger.info(
        "Evaluated %s on %s: %d episode(s), return %.3f, comm %.3f, min Δ %.3fs",
        report.label or "controller", env.name, episodes, report.mean_return,
        report.comm_fraction, report.min_inter_event,
    )
    return report


def evaluate(
    checkpoint: Checkpoint,
    env: Environment,
    episodes: int,
    seed: int = 0,
    label: Optional[str] = None,
) -> EvalReport:
    check_env_dims(checkpoint, env.name, env.dims())
    algorithm = checkpoint.algorithm.value
    return run_episodes(
        env, PolicyController(checkpoint.policy), episodes, seed,
        accrual_scale=checkpoint.hyper.accrual_scale, label=label or algorithm, algorithm=algorithm,
        observe_held_control=checkpoint.hyper.observe_held_control,
    )


def evaluate_png(env: Environment, episodes: int, seed: int = 0) -> EvalReport:
    if env.name != "pursuit":
        raise ConfigurationError("the PNG baseline needs the pursuit environment")
    report = run_episodes(env, PngController(env), episodes, seed, label="png", algorithm="png")
    if episodes and report.capture_rate is not None and report.capture_rate < 1.0:
        logger.warning("PNG missed capture in %.0f%% of episodes", 100.0 * (1.0 - report.capture_rate))
    return report


def algorithm_label(algorithm: Algorithm) -> str:
    return "ATPPO" if Algorithm(algorithm) == Algorithm.ATPPO else "PPO"
