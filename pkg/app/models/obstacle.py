"""
障礙物迴避
以平方反比導航勢 V(x, y) = κ / ((x - x_C)² + (y - y_C)²) 加入運行成本
"""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from app.core.exceptions import InvalidParameterError, ObstacleCollisionError
from app.models.sleigh import SleighParams
from app.services.ocp import CostModel, quadratic_cost

# 距中心小於此值視為碰撞
COLLISION_RADIUS = 1e-6


@dataclass(frozen=True)
class ObstacleParams:
    kappa: float = 0.0
    center: Tuple[float, float] = (0.5, 0.5)

    def validate(self) -> None:
        if not self.kappa >= 0:
            raise InvalidParameterError(f"勢場強度 κ 必須非負: κ={self.kappa}")
        if len(self.center) != 2:
            raise InvalidParameterError(f"障礙中心必須是平面點: {self.center}")


def navigation_potential(params: ObstacleParams) -> Tuple[Callable, Callable]:
    """回傳 (V, ∂V/∂q)，只依賴 q 的前兩個分量"""
    xc, yc = (float(c) for c in params.center)
    kappa = float(params.kappa)

    def potential(q):
        q = np.asarray(q, dtype=float)
        r2 = (q[..., 0] - xc) ** 2 + (q[..., 1] - yc) ** 2
        return kappa / r2

    def gradient(q):
        q = np.asarray(q, dtype=float)
        dx = q[..., 0] - xc
        dy = q[..., 1] - yc
        r4 = (dx ** 2 + dy ** 2) ** 2
        out = np.zeros(q.shape)
        out[..., 0] = -2.0 * kappa * dx / r4
        out[..., 1] = -2.0 * kappa * dy / r4
        return out

    return potential, gradient


def sleigh_with_obstacle(sleigh_params: SleighParams, obstacle_params: ObstacleParams) -> CostModel:
    """C = ½(u₁² + u₂²) + ½ V(x, y)；κ = 0 時退化為純二次成本"""
    sleigh_params.validate()
    obstacle_params.validate()
    if obstacle_params.kappa == 0:
        return quadratic_cost(2, name="sleigh-quadratic")
    potential, gradient = navigation_potential(obstacle_params)
    return quadratic_cost(2, potential=potential, dpotential=gradient, name=f"sleigh-obstacle-k{obstacle_params.kappa:g}")


def collision_check(params: ObstacleParams, radius: float = COLLISION_RADIUS):
    """積分檢查：軌跡通過勢場奇異中心時中止"""
    center = np.asarray(params.center, dtype=float)

    def check(t: float, z: np.ndarray) -> None:
        if params.kappa == 0:
            return
        distance = float(np.min(np.linalg.norm(np.asarray(z)[..., :2] - center, axis=-1)))
        if distance < radius:
            raise ObstacleCollisionError(f"軌跡通過障礙中心 {tuple(center)}", t, distance, z)

    return check
