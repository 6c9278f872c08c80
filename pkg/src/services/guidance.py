"""
etrl — Proportional-navigation guidance baseline.

    a_P_cmd = N · V_c · η̇,    V_c = −v_r,  η̇ = v_η / r

Commanded acceleration is clamped to ±a_P_max before it reaches the
environment. PNG always broadcasts: it is evaluated through the ETC runtime
with trigger = 1 on every step.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Tuple

import numpy as np

from src.core.errors import GeometryError
from src.services.engagement_env import EngagementEnv, RelativeGeometry

if TYPE_CHECKING:
    from src.services.policy import AugmentedObs

logger = logging.getLogger(__name__)


def png_acceleration(geom: RelativeGeometry, navigation_constant: float = 3.0) -> float:
    if geom.r <= 0:
        raise GeometryError("PNG undefined at zero range")
    closing_speed = -geom.v_r
    return navigation_constant * closing_speed * (geom.v_eta / geom.r)


class PngController:
    """Controller callable: augmented obs → (trigger=1, clamped PNG command)."""

    def __init__(self, env: EngagementEnv):
        self.env = env
        self.navigation_constant = env.config.navigation_constant
        self.a_max = env.config.a_p_max

    def __call__(self, obs: "AugmentedObs") -> Tuple[int, np.ndarray]:
        a = png_acceleration(self.env.geometry(), self.navigation_constant)
        return 1, np.array([float(np.clip(a, -self.a_max, self.a_max))])
