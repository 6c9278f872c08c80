"""
etrl — Event-triggered execution runtime.

Zero-order hold between triggering instants:

    u(t) = u(t_k)      at a trigger instant t_k (new control broadcast)
    u(t) = u(t_{k-1})  otherwise (held)

and the broadcast state x̂(t) = x(t_k) for t ∈ [t_k, t_{k+1}).
Scheduling starts at t₀ = 0, which is always logged as the first event.

``EtcState`` is treated as a value: ``etc_apply`` returns a new state and
never mutates its argument.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from src.core.errors import ConfigurationError, SequencingError, ShapeError

logger = logging.getLogger(__name__)


# ═══════════════════════════════════════════════════════════════════════════
# Data classes
# ═══════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class EtcState:
    held_control: np.ndarray
    last_broadcast_state: np.ndarray
    last_event_time: float
    event_times: Tuple[float, ...]
    step_index: int
    last_call_time: float


@dataclass
class InterEventStats:
    min_delta: float
    mean_delta: float
    deltas: np.ndarray
    comm_fraction: float
    moving_average: np.ndarray


# ═══════════════════════════════════════════════════════════════════════════
# Public API
# ═══════════════════════════════════════════════════════════════════════════

def etc_reset(initial_state: np.ndarray, initial_control: np.ndarray) -> EtcState:
    """Start scheduling at t₀ = 0 with the control computed at the initial state."""
    return EtcState(
        held_control=np.array(initial_control, dtype=np.float64, copy=True),
        last_broadcast_state=np.array(initial_state, dtype=np.float64, copy=True),
        last_event_time=0.0,
        event_times=(0.0,),
        step_index=0,
        last_call_time=0.0,
    )


def etc_apply(
    etc: EtcState,
    t: float,
    plant_state: np.ndarray,
    trigger: int,
    proposed_control: np.ndarray,
) -> Tuple[np.ndarray, EtcState]:
    """
    Apply one step of the ZOH law at time ``t``.

    trigger=1 → broadcast: applied = proposed, event logged at t, x̂ ← plant_state.
    trigger=0 → applied = held control, nothing logged.
    """
    if t <= etc.last_call_time:
        raise SequencingError(f"ETC call at t={t!r} is not after previous call at t={etc.last_call_time!r}")

    if trigger:
        proposed = np.array(proposed_control, dtype=np.float64, copy=True)
        if proposed.shape != etc.held_control.shape:
            raise ShapeError(f"proposed control shape {proposed.shape} != held {etc.held_control.shape}")
        new = EtcState(
            held_control=proposed,
            last_broadcast_state=np.array(plant_state, dtype=np.float64, copy=True),
            last_event_time=float(t),
            event_times=etc.event_times + (float(t),),
            step_index=etc.step_index + 1,
            last_call_time=float(t),
        )
        return proposed.copy(), new

    new = replace(etc, step_index=etc.step_index + 1, last_call_time=float(t))
    return etc.held_control.copy(), new


def inter_event_stats(etc: EtcState, total_steps: int, dt: float, window: int = 50) -> InterEventStats:
    """
    Inter-event times Δ = t_{k+1} − t_k and the moving average of the
    per-step trigger indicator over ``window`` steps (trailing window).

    Event times lie on the dt grid, so deltas are computed from step indices
    and are exact multiples of dt.
    """
    n_events = len(etc.event_times)
    if total_steps < n_events:
        raise ConfigurationError(f"total_steps={total_steps} < number of events {n_events}")
    if dt <= 0 or window < 1:
        raise ConfigurationError("dt must be positive and window ≥ 1")

    steps = np.rint(np.asarray(etc.event_times, dtype=np.float64) / dt).astype(np.int64)
    deltas = np.diff(steps).astype(np.float64) * dt
    if deltas.size:
        min_delta = float(deltas.min())
        mean_delta = float(deltas.mean())
    else:
        min_delta = mean_delta = total_steps * dt

    indicator = np.zeros(total_steps, dtype=np.float64)
    indicator[steps[steps < total_steps]] = 1.0
    csum = np.concatenate(([0.0], np.cumsum(indicator)))
    idx = np.arange(total_steps)
    lo = np.maximum(0, idx - window + 1)
    moving = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)

    return InterEventStats(
        min_delta=min_delta,
        mean_delta=mean_delta,
        deltas=deltas,
        comm_fraction=n_events / total_steps if total_steps else 0.0,
        moving_average=moving,
    )
