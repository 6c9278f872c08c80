"""
etrl — Pydantic v2 models defining the validated configuration and report contracts.

Everything that crosses a boundary (config files, CLI flags, checkpoints'
hyperparameter block, CSV rows) is one of these models.  Numeric working
state (networks, rollouts, ETC runtime) lives in plain dataclasses inside
``src.services``.

Pipeline: RunConfig → train (collect → GAE → PPO update) → Checkpoint → evaluate → CSV
"""

from __future__ import annotations

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ═══════════════════════════════════════════════════════════════════════════
# Enums
# ═══════════════════════════════════════════════════════════════════════════

class Command(str, Enum):
    """CLI verbs."""
    TRAIN = "train"
    EVAL = "eval"
    BASELINE_PNG = "baseline-png"
    COMPARE = "compare"


class EnvName(str, Enum):
    """Built-in environments."""
    INTEGRATOR = "integrator"
    PURSUIT = "pursuit"


class Algorithm(str, Enum):
    """Learner variants."""
    ATPPO = "atppo"     # joint (trigger, control) policy
    PPO = "ppo"         # trigger head bypassed, every step broadcasts


class Outcome(str, Enum):
    """Episode / engagement status."""
    CAPTURE = "capture"
    TIMEOUT = "timeout"
    RUNNING = "running"


# ═══════════════════════════════════════════════════════════════════════════
# Environment configs  (overridable with ``env.<field> = value``)
# ═══════════════════════════════════════════════════════════════════════════

class IntegratorConfig(BaseModel):
    """Perturbed single integrator ẋ = u + d, |d| ≤ d_max."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: float = Field(0.01, gt=0, description="Simulation step [s]")
    t_final: float = Field(10.0, gt=0, description="Episode length [s]")
    x0: float = Field(5.0, description="Initial state")
    x0_spread: float = Field(0.0, ge=0, description="Uniform ± spread around x0 at reset")
    u_max: float = Field(2.0, gt=0, description="Control clamp |u| ≤ u_max")
    d_max: float = Field(0.1, ge=0, description="Disturbance bound")
    control_weight: float = Field(0.01, ge=0, description="Weight of u² in the reward")


class RewardWeights(BaseModel):
    """Convex combination weights of the five engagement reward terms."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    alphas: Tuple[float, float, float, float, float] = (0.3, 0.1, 0.2, 0.3, 0.1)
    m: float = Field(50.0, gt=0, description="Terminal shaping slope")
    r_miss: float = Field(5.0, gt=0, description="Capture radius [m]")

    @field_validator("alphas")
    @classmethod
    def _renormalise(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(a < 0 for a in v):
            raise ValueError("reward weights must be non-negative")
        total = sum(v)
        if total <= 0:
            raise ValueError("reward weights must not all be zero")
        return tuple(a / total for a in v)


class EngagementConfig(BaseModel):
    """One-on-one planar pursuit scenario (defaults: the nominal capture scenario)."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # ── Timing ───────────────────────────────────────────────────────
    dt: float = Field(0.01, gt=0)
    t_max: float = Field(60.0, gt=0)

    # ── Initial geometry ─────────────────────────────────────────────
    r0: float = Field(1000.0, gt=0, description="Initial range [m]")
    los0_deg: float = 0.0
    pursuer_speed: float = Field(40.0, gt=0)
    pursuer_heading_deg: float = 30.0
    speed_ratio: float = Field(0.5, gt=0, lt=1, description="v_T = speed_ratio · v_P")
    target_heading_deg: float = 40.0
    heading_spread_deg: float = Field(0.0, ge=0, description="Uniform ± spread on both headings")
    los_spread_deg: float = Field(0.0, ge=0, description="Uniform ± spread on initial LOS")

    # ── Actuation ────────────────────────────────────────────────────
    a_p_max: float = Field(5.0, gt=0)
    a_t_max: float = Field(5.0, ge=0)
    tau: float = Field(0.25, gt=0, description="Pursuer autopilot time constant [s]")
    target_accel: float = Field(0.0, description="Constant target lateral acceleration")
    heading_noise_std: float = Field(0.0, ge=0, description="Pursuer heading-rate noise [rad/s]")

    # ── Guidance baseline ────────────────────────────────────────────
    navigation_constant: float = Field(3.0, gt=0)

    # ── Reward ───────────────────────────────────────────────────────
    alpha1: float = Field(0.3, ge=0)
    alpha2: float = Field(0.1, ge=0)
    alpha3: float = Field(0.2, ge=0)
    alpha4: float = Field(0.3, ge=0)
    alpha5: float = Field(0.1, ge=0)
    shaping_slope: float = Field(50.0, gt=0)
    r_miss: float = Field(5.0, gt=0)
    v_eta_tol: float = Field(0.1, ge=0)

    @property
    def target_speed(self) -> float:
        return self.speed_ratio * self.pursuer_speed

    def weights(self) -> RewardWeights:
        return RewardWeights(
            alphas=(self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5),
            m=self.shaping_slope,
            r_miss=self.r_miss,
        )


EnvConfig = Union[IntegratorConfig, EngagementConfig]


def build_env_config(env: "EnvName", overrides: Optional[Dict[str, Any]] = None) -> EnvConfig:
    """Validate ``overrides`` against the config model of ``env``."""
    model = IntegratorConfig if EnvName(env) == EnvName.INTEGRATOR else EngagementConfig
    return model(**(overrides or {}))


# ═══════════════════════════════════════════════════════════════════════════
# Learner hyperparameters
# ═══════════════════════════════════════════════════════════════════════════

# Environment-specific defaults applied when the key is not given explicitly.
ENV_DEFAULTS: Dict[EnvName, Dict[str, Any]] = {
    EnvName.INTEGRATOR: {"trigger_penalty": 0.05, "total_steps": 300_000},
    EnvName.PURSUIT:    {"trigger_penalty": 0.02, "total_steps": 1_000_000},
}


class AtppoHyper(BaseModel):
    """All learner hyperparameters; ``force_trigger`` + Ψ=0 is vanilla PPO."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    clip_eps: float = Field(0.2, gt=0, lt=1, description="PPO clip range ε")
    trigger_penalty: float = Field(0.05, ge=0, description="Ψ, per-trigger reward penalty")
    gamma: float = Field(0.99, ge=0, lt=1)
    lam: float = Field(0.95, ge=0, le=1)
    accrual_scale: float = Field(100.0, gt=0, description="c, accrued-reward divisor")
    epochs_per_batch: int = Field(10, ge=1)
    minibatch_size: int = Field(64, ge=1)
    value_coef: float = Field(0.5, ge=0)
    entropy_coef: float = Field(0.0, ge=0)
    horizon: int = Field(2048, ge=1)
    total_steps: int = Field(300_000, ge=1)
    learning_rate: float = Field(3e-4, gt=0)
    seed: int = Field(0, ge=0)

    # ── Extensions ───────────────────────────────────────────────────
    force_trigger: bool = False
    hidden_sizes: Tuple[int, ...] = (64, 64)
    max_grad_norm: float = Field(0.5, ge=0, description="0 disables clipping")
    init_log_std: float = Field(0.0, ge=-5, le=2)
    num_workers: int = Field(1, ge=1)
    observe_held_control: bool = Field(False, description="Append the held (last broadcast) control to the policy input")

    @field_validator("hidden_sizes", mode="before")
    @classmethod
    def _split_sizes(cls, v: Any) -> Any:
        if isinstance(v, str):
            v = [int(p) for p in v.replace(" ", "").split(",") if p]
        return v

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_sizes(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(h < 1 for h in v):
            raise ValueError("hidden layer sizes must be positive")
        return v


HYPER_KEYS = frozenset(AtppoHyper.model_fields)


# ═══════════════════════════════════════════════════════════════════════════
# Run configuration
# ═══════════════════════════════════════════════════════════════════════════

class RunConfig(BaseModel):
    """Fully validated run description (file + flags)."""
    model_config = ConfigDict(extra="forbid")

    command: Command = Command.TRAIN
    env: EnvName = EnvName.INTEGRATOR
    algorithm: Algorithm = Algorithm.ATPPO
    hyper: AtppoHyper = Field(default_factory=AtppoHyper)
    env_overrides: Dict[str, Any] = Field(default_factory=dict)
    out: Optional[str] = None
    eval_episodes: int = Field(100, ge=0)
    checkpoint: Optional[str] = None
    checkpoint_b: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _env_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        env = EnvName(data.get("env", EnvName.INTEGRATOR))
        hyper = data.get("hyper", {})
        if isinstance(hyper, AtppoHyper):
            unset = {k: v for k, v in ENV_DEFAULTS[env].items() if k not in hyper.model_fields_set}
            data["hyper"] = hyper.model_copy(update=unset) if unset else hyper
        else:
            data["hyper"] = {**ENV_DEFAULTS[env], **dict(hyper)}
        return data

    @model_validator(mode="after")
    def _ppo_has_no_trigger_head(self) -> "RunConfig":
        if self.algorithm == Algorithm.PPO and (not self.hyper.force_trigger or self.hyper.trigger_penalty != 0.0):
            self.hyper = self.hyper.model_copy(update={"force_trigger": True, "trigger_penalty": 0.0})
        return self

    @model_validator(mode="after")
    def _check_env_overrides(self) -> "RunConfig":
        build_env_config(self.env, self.env_overrides)
        return self

    @property
    def seed(self) -> int:
        return self.hyper.seed

    def env_config(self) -> EnvConfig:
        return build_env_config(self.env, self.env_overrides)


# ═══════════════════════════════════════════════════════════════════════════
# Report rows
# ═══════════════════════════════════════════════════════════════════════════

METRIC_COLUMNS: List[str] = [
    "step", "mean_raw_return", "comm_fraction", "mean_inter_event",
    "policy_loss", "value_loss", "clip_fraction",
]


class MetricRow(BaseModel):
    """One training-curve row, emitted after every update cycle."""
    step: int = Field(..., ge=1, description="Environment steps consumed so far")
    mean_raw_return: float
    comm_fraction: float = Field(..., ge=0.0, le=1.0)
    mean_inter_event: float = Field(..., ge=0.0)
    policy_loss: float
    value_loss: float
    clip_fraction: float = Field(..., ge=0.0, le=1.0)


COMPARE_COLUMNS: List[str] = [
    "label", "algorithm", "mean_return", "comm_fraction",
    "resource_saving", "min_inter_event", "capture_rate",
]


class CompareRow(BaseModel):
    """One row of the PPO / ATPPO / PNG comparison table."""
    label: str
    algorithm: str
    mean_return: float
    comm_fraction: float = Field(..., ge=0.0, le=1.0)
    resource_saving: float
    min_inter_event: float
    capture_rate: Optional[float] = Field(default=None, ge=0.0, le=1.0)
