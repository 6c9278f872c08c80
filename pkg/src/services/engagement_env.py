"""
etrl — Planar pursuit-evasion engagement.

Vehicle kinematics (k ∈ {P, T}, constant speeds):

    Ẋ_k = v_k cos ψ_k,   Ẏ_k = v_k sin ψ_k,   ψ̇_k = a_k / v_k

Pursuer autopilot lag 1/(1 + sτ), realised as ȧ_P = (a_P_cmd − a_P)/τ.
The target acceleration is applied directly (non-maneuvering by default).

Relative geometry (pursuer → target):

    r   = ‖(X_T − X_P, Y_T − Y_P)‖,          η = atan2(Y_T − Y_P, X_T − X_P)
    v_r = v_T cos(ψ_T − η) − v_P cos σ_P     (= ṙ)
    v_η = v_T sin(ψ_T − η) − v_P sin σ_P     (= r·η̇),   σ_P = ψ_P − η

Integration is classical RK4 at fixed dt; headings are wrapped to (−π, π].
Observation exposed to the learner: [r, ṙ, η, η̇, ψ_P].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from src.core.errors import ConfigurationError, GeometryError, NumericError, SequencingError
from src.models.schemas import EngagementConfig, Outcome, RewardWeights
from src.services.env_base import StepResult

logger = logging.getLogger(__name__)

# State-vector layout used by the integrator
_XP, _YP, _PSIP, _AP, _XT, _YT, _PSIT, _AT = range(8)


# ═══════════════════════════════════════════════════════════════════════════
# Data classes
# ═══════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class VehiclePose:
    x: float
    y: float
    psi: float
    v: float


@dataclass(frozen=True)
class EngagementState:
    x_p: float
    y_p: float
    psi_p: float
    v_p: float
    a_p: float
    x_t: float
    y_t: float
    psi_t: float
    v_t: float
    a_t: float
    t: float = 0.0

    @property
    def pursuer(self) -> VehiclePose:
        return VehiclePose(self.x_p, self.y_p, self.psi_p, self.v_p)

    @property
    def target(self) -> VehiclePose:
        return VehiclePose(self.x_t, self.y_t, self.psi_t, self.v_t)

    def to_vector(self) -> np.ndarray:
        return np.array([self.x_p, self.y_p, self.psi_p, self.a_p,
                         self.x_t, self.y_t, self.psi_t, self.a_t])

    def with_vector(self, vec: np.ndarray, t: float) -> "EngagementState":
        return EngagementState(
            x_p=float(vec[_XP]), y_p=float(vec[_YP]), psi_p=float(vec[_PSIP]), v_p=self.v_p,
            a_p=float(vec[_AP]), x_t=float(vec[_XT]), y_t=float(vec[_YT]),
            psi_t=float(vec[_PSIT]), v_t=self.v_t, a_t=float(vec[_AT]), t=t,
        )


@dataclass(frozen=True)
class RelativeGeometry:
    r: float
    eta: float
    v_r: float
    v_eta: float
    sigma_p: float

    @property
    def eta_dot(self) -> float:
        return self.v_eta / self.r


# ═══════════════════════════════════════════════════════════════════════════
# Kinematics
# ═══════════════════════════════════════════════════════════════════════════

def wrap_angle(psi: float) -> float:
    """Wrap to (−π, π]."""
    return math.pi - (math.pi - psi) % (2.0 * math.pi)


def relative_geometry(p: VehiclePose, tgt: VehiclePose) -> RelativeGeometry:
    dx = tgt.x - p.x
    dy = tgt.y - p.y
    r = math.hypot(dx, dy)
    if r == 0.0:
        raise GeometryError("pursuer and target positions coincide")
    eta = math.atan2(dy, dx)
    sigma_p = wrap_angle(p.psi - eta)
    v_r = tgt.v * math.cos(tgt.psi - eta) - p.v * math.cos(sigma_p)
    v_eta = tgt.v * math.sin(tgt.psi - eta) - p.v * math.sin(sigma_p)
    return RelativeGeometry(r=r, eta=eta, v_r=v_r, v_eta=v_eta, sigma_p=sigma_p)


def _derivative_vector(vec: np.ndarray, v_p: float, v_t: float,
                       a_p_cmd: float, a_t: float, tau: float) -> np.ndarray:
    d = np.empty(8)
    d[_XP] = v_p * math.cos(vec[_PSIP])
    d[_YP] = v_p * math.sin(vec[_PSIP])
    d[_PSIP] = vec[_AP] / v_p
    d[_AP] = (a_p_cmd - vec[_AP]) / tau
    d[_XT] = v_t * math.cos(vec[_PSIT])
    d[_YT] = v_t * math.sin(vec[_PSIT])
    d[_PSIT] = a_t / v_t
    d[_AT] = 0.0
    return d


def _check_params(s: EngagementState, tau: float) -> None:
    if s.v_p <= 0 or s.v_t <= 0:
        raise ConfigurationError(f"vehicle speeds must be positive (v_P={s.v_p}, v_T={s.v_t})")
    if tau <= 0:
        raise ConfigurationError(f"autopilot time constant must be positive, got {tau}")


def engagement_derivatives(
    s: EngagementState,
    a_p_cmd: float,
    a_t: float,
    tau: float = 0.25,
    a_p_max: float = 5.0,
    a_t_max: float = 5.0,
) -> np.ndarray:
    """
    Time derivative of the state vector [X_P, Y_P, ψ_P, a_P, X_T, Y_T, ψ_T, a_T].
    Commands are clamped to ±a_max of their vehicle.
    """
    _check_params(s, tau)
    a_p_cmd = float(np.clip(a_p_cmd, -a_p_max, a_p_max))
    a_t = float(np.clip(a_t, -a_t_max, a_t_max))
    return _derivative_vector(s.to_vector(), s.v_p, s.v_t, a_p_cmd, a_t, tau)


def rk4_step(
    s: EngagementState,
    a_p_cmd: float,
    a_t: float,
    dt: float,
    tau: float = 0.25,
    a_p_max: float = 5.0,
    a_t_max: float = 5.0,
) -> EngagementState:
    """Classical 4th-order Runge-Kutta step over ``engagement_derivatives``."""
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    _check_params(s, tau)
    a_p_cmd = float(np.clip(a_p_cmd, -a_p_max, a_p_max))
    a_t = float(np.clip(a_t, -a_t_max, a_t_max))

    x = s.to_vector()
    x[_AT] = a_t
    f = lambda v: _derivative_vector(v, s.v_p, s.v_t, a_p_cmd, a_t, tau)  # noqa: E731
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(x_next)):
        raise NumericError("non-finite engagement state after RK4 step")
    x_next[_PSIP] = wrap_angle(x_next[_PSIP])
    x_next[_PSIT] = wrap_angle(x_next[_PSIT])
    x_next[_AP] = float(np.clip(x_next[_AP], -a_p_max, a_p_max))
    return s.with_vector(x_next, s.t + dt)


# ═══════════════════════════════════════════════════════════════════════════
# Reward & termination
# ═══════════════════════════════════════════════════════════════════════════

def engagement_reward_terms(
    geom: RelativeGeometry,
    geom0_r: float,
    a_p: float,
    w: RewardWeights,
    a_p_max: float,
    v_eta_tol: float = 0.1,
) -> Tuple[float, float, float, float, float]:
    """The five unweighted components (r₁ … r₅)."""
    if geom0_r <= 0:
        raise ConfigurationError("initial range must be positive")
    r1 = -geom.r / geom0_r
    r2 = -(a_p / a_p_max) ** 2
    if geom.v_r < 0 and abs(geom.v_eta) <= v_eta_tol:
        r3 = 1.0
    elif geom.v_r < 0:
        r3 = 0.25
    else:
        r3 = -1.0
    captured = geom.r < w.r_miss
    r4 = 100.0 if captured else 0.0
    r5 = max(0.0, w.m * (w.r_miss - geom.r) / w.r_miss) if captured else 0.0
    return r1, r2, r3, r4, r5


def engagement_reward(
    geom: RelativeGeometry,
    geom0_r: float,
    a_p: float,
    w: RewardWeights,
    a_p_max: float,
    v_eta_tol: float = 0.1,
) -> float:
    """Convex combination Σ αₖ rₖ."""
    terms = engagement_reward_terms(geom, geom0_r, a_p, w, a_p_max, v_eta_tol)
    return float(sum(a * r for a, r in zip(w.alphas, terms)))


def engagement_terminal(geom: RelativeGeometry, t: float, r_miss: float, t_max: float) -> Outcome:
    if geom.r < r_miss:
        return Outcome.CAPTURE
    if t >= t_max:
        return Outcome.TIMEOUT
    return Outcome.RUNNING


# ═══════════════════════════════════════════════════════════════════════════
# Environment
# ═══════════════════════════════════════════════════════════════════════════

class EngagementEnv:
    """One pursuer (the agent) against one constant-speed target."""

    name = "pursuit"
    state_labels = ["r", "r_dot", "eta", "eta_dot", "psi_p"]
    control_labels = ["a_p_cmd"]

    def __init__(self, config: Optional[EngagementConfig] = None):
        self.config = config or EngagementConfig()
        self.weights = self.config.weights()
        # Fixed unit scaling of [r, ṙ, η, η̇, ψ_P] for the policy input.
        self.obs_scale = np.array([1.0 / self.config.r0, 1.0 / 50.0, 1.0, 100.0, 1.0])
        self.control_limit = np.array([self.config.a_p_max])
        self._rng = np.random.default_rng(0)
        self._state: Optional[EngagementState] = None
        self._r0 = self.config.r0
        self._done = True

    def dims(self) -> Tuple[int, int]:
        return 5, 1

    def dt(self) -> float:
        return self.config.dt

    @property
    def state(self) -> EngagementState:
        if self._state is None:
            raise SequencingError("engagement env used before reset()")
        return self._state

    def geometry(self) -> RelativeGeometry:
        s = self.state
        return relative_geometry(s.pursuer, s.target)

    def observe(self) -> np.ndarray:
        g = self.geometry()
        return np.array([g.r, g.v_r, g.eta, g.eta_dot, self.state.psi_p])

    def positions(self) -> Tuple[float, float, float, float]:
        s = self.state
        return s.x_p, s.y_p, s.x_t, s.y_t

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.config
        self._rng = np.random.default_rng(seed)

        def spread(deg: float) -> float:
            return math.radians(float(self._rng.uniform(-deg, deg))) if deg > 0 else 0.0

        los = math.radians(cfg.los0_deg) + spread(cfg.los_spread_deg)
        psi_p = math.radians(cfg.pursuer_heading_deg) + spread(cfg.heading_spread_deg)
        psi_t = math.radians(cfg.target_heading_deg) + spread(cfg.heading_spread_deg)

        self._state = EngagementState(
            x_p=0.0, y_p=0.0, psi_p=wrap_angle(psi_p), v_p=cfg.pursuer_speed, a_p=0.0,
            x_t=cfg.r0 * math.cos(los), y_t=cfg.r0 * math.sin(los),
            psi_t=wrap_angle(psi_t), v_t=cfg.target_speed, a_t=0.0, t=0.0,
        )
        self._r0 = self.geometry().r
        self._done = False
        return self.observe()

    def step(self, applied_control: np.ndarray) -> StepResult:
        if self._done:
            raise SequencingError("engagement step called after episode end; call reset()")
        cfg = self.config
        a_cmd = float(np.clip(np.asarray(applied_control, dtype=np.float64).reshape(-1)[0], -cfg.a_p_max, cfg.a_p_max))

        nxt = rk4_step(self.state, a_cmd, cfg.target_accel, cfg.dt, cfg.tau, cfg.a_p_max, cfg.a_t_max)
        if cfg.heading_noise_std > 0:
            noise = cfg.heading_noise_std * float(self._rng.standard_normal()) * cfg.dt
            nxt = replace(nxt, psi_p=wrap_angle(nxt.psi_p + noise))
        self._state = nxt

        geom = self.geometry()
        reward = engagement_reward(geom, self._r0, nxt.a_p, self.weights, cfg.a_p_max, cfg.v_eta_tol)
        outcome = engagement_terminal(geom, nxt.t, cfg.r_miss, cfg.t_max)
        self._done = outcome != Outcome.RUNNING
        info = {"outcome": outcome, "t": nxt.t, "r": geom.r, "positions": self.positions()}
        return StepResult(self.observe(), reward, self._done, info)
