"""
無段變速器 (CVT) 簡化模型
座標 q = (θ₁, θ₂, x)，約束 x dθ₁ - (1-x) dθ₂ = 0，座標卡 0 < x < 1
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from app.core.exceptions import InvalidParameterError
from app.models.sleigh import SWAPPED_INPUTS
from app.services.geometry import ControlMode, MechanicalModel, check_chart
from app.services.ocp import CostModel, quadratic_cost

# 設置日誌
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CvtParams:
    m: float = 1.0
    J1: float = 1.0
    J2: float = 1.0

    def validate(self) -> None:
        if not (self.m > 0 and self.J1 > 0 and self.J2 > 0):
            raise InvalidParameterError(f"CVT 參數必須為正: m={self.m}, J1={self.J1}, J2={self.J2}")

    def as_dict(self):
        return {"m": self.m, "J1": self.J1, "J2": self.J2}


def cvt_coefficients(params: CvtParams, x):
    """A(x) = J₁(1-x) - J₂x，B(x) = (1-x)²J₁ + J₂x²"""
    x = np.asarray(x, dtype=float)
    a_coef = params.J1 * (1.0 - x) - params.J2 * x
    b_coef = (1.0 - x) ** 2 * params.J1 + params.J2 * x ** 2
    return a_coef, b_coef


def cvt_regularity(params: CvtParams, x) -> np.ndarray:
    """det(∂²L/∂ẏ∂ẏ) = B(x)²/m²"""
    _, b_coef = cvt_coefficients(params, x)
    return b_coef ** 2 / params.m ** 2


def cvt_hamilton_field(params: CvtParams, guard: Callable[[np.ndarray], None]) -> Callable[[CostModel], Optional[Callable]]:
    """
    C = ½|u|² + c(q, y) 時的閉式 Hamilton 方程

    H = m²p₁²/2 + p₂²/(2B²) + p₂A y₁y₂/(mB) + p_θ₁(1-x)y₂ + p_θ₂ x y₂ + p_x y₁/m - c
    guard 在座標卡外拋出 ChartViolationError。
    """
    m = params.m
    da = -(params.J1 + params.J2)

    def field(cost: CostModel) -> Optional[Callable]:
        if not cost.quadratic or cost.dq_cost is None or cost.dy_cost is None:
            return None

        def rhs(z: np.ndarray) -> np.ndarray:
            z = np.asarray(z, dtype=float)
            q, y = z[..., 0:3], z[..., 3:5]
            guard(q)
            x, y1, y2 = z[..., 2], z[..., 3], z[..., 4]
            pt1, pt2, px, p1, p2 = (z[..., i] for i in range(5, 10))
            a_coef, b_coef = cvt_coefficients(params, x)
            u = np.stack([p2 / b_coef, m * p1], axis=-1)
            c_q = np.broadcast_to(cost.dq_cost(q, y, u), q.shape)
            c_y = np.broadcast_to(cost.dy_cost(q, y, u), y.shape)
            ratio = a_coef / (m * b_coef)
            dh_dx = (
                2.0 * a_coef * p2 ** 2 / b_coef ** 3
                + p2 * y1 * y2 * (da * b_coef + 2.0 * a_coef ** 2) / (m * b_coef ** 2)
                + (pt2 - pt1) * y2
            )

            out = np.empty(z.shape)
            out[..., 0] = (1.0 - x) * y2
            out[..., 1] = x * y2
            out[..., 2] = y1 / m
            out[..., 3] = m * m * p1
            out[..., 4] = p2 / b_coef ** 2 + ratio * y1 * y2
            out[..., 5] = c_q[..., 0]
            out[..., 6] = c_q[..., 1]
            out[..., 7] = c_q[..., 2] - dh_dx
            out[..., 8] = c_y[..., 0] - p2 * ratio * y2 - px / m
            out[..., 9] = c_y[..., 1] - p2 * ratio * y1 - pt1 * (1.0 - x) - pt2 * x
            return out

        return rhs

    return field


def cvt(params: CvtParams) -> Tuple[MechanicalModel, CostModel]:
    """建立 CVT 模型與二次成本 C = ½(u₁² + u₂²)"""
    params.validate()
    m = params.m
    metric_diag = np.array([params.J1, params.J2, m])

    def metric(q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.diag(metric_diag), q.shape[:-1] + (3, 3))

    def dmetric(q):
        q = np.asarray(q, dtype=float)
        return np.zeros(q.shape[:-1] + (3, 3, 3))

    def rho(q):
        q = np.asarray(q, dtype=float)
        x = q[..., 2]
        out = np.zeros(q.shape[:-1] + (3, 2))
        out[..., 2, 0] = 1.0 / m
        out[..., 0, 1] = 1.0 - x
        out[..., 1, 1] = x
        return out

    def drho(q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1] + (3, 2, 3))
        out[..., 0, 1, 2] = -1.0
        out[..., 1, 1, 2] = 1.0
        return out

    def chart_guard(q):
        x = np.asarray(q, dtype=float)[..., 2]
        return (x > 0.0) & (x < 1.0)

    model = MechanicalModel(
        name="cvt",
        n=3,
        k=2,
        metric=metric,
        rho=rho,
        drho=drho,
        dmetric=dmetric,
        control_mode=ControlMode.EULER_LAGRANGE,
        input_map=SWAPPED_INPUTS,
        chart_guard=chart_guard,
        cyclic=(0, 1),
        coordinate_names=("theta1", "theta2", "x"),
        velocity_names=("y1", "y2"),
        sampling_box=((-np.pi, -np.pi, 0.05), (np.pi, np.pi, 0.95)),
        params=params.as_dict(),
        hamilton_field=cvt_hamilton_field(params, lambda q: check_chart(model, q)),
    )
    logger.debug(f"建立 CVT 模型 {params.as_dict()}")
    return model, quadratic_cost(2, name="cvt-quadratic")
