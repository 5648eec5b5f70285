"""
Chaplygin 雪橇
座標 q = (x, y, θ)，分佈 D 由 X₁ = (1/J)∂_θ 與 X₂ = (cosθ/m)∂_x + (sinθ/m)∂_y 張成
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad

from app.core.exceptions import InvalidParameterError
from app.services.geometry import AdaptedState, ControlMode, MechanicalModel
from app.services.invariants import extremal_trajectory
from app.services.ocp import CostModel, ExtremalState, extremal_controls, quadratic_cost

# 設置日誌
logger = logging.getLogger(__name__)

# u₁ 作用在第二個基底方向 X₂，u₂ 作用在 X₁
SWAPPED_INPUTS = np.array([[0.0, 1.0], [1.0, 0.0]])

# 零乘子極值的預設常數 (c3, c4, c5, c6, c7, c8)
DEFAULT_CONSTANTS = (0.6, -0.4, 0.3, 0.1, 0.5, 0.8)


@dataclass(frozen=True)
class SleighParams:
    m: float = 1.0
    J: float = 1.0
    a: float = 0.5

    @property
    def b(self) -> float:
        return self.a ** 2 * self.m / self.J

    def validate(self, allow_degenerate: bool = False) -> None:
        if not (self.m > 0 and self.J > 0):
            raise InvalidParameterError(f"雪橇參數必須為正: m={self.m}, J={self.J}")
        if self.a < 0 or (self.a == 0 and not allow_degenerate):
            raise InvalidParameterError(f"質心偏移 a 必須為正: a={self.a}")

    def as_dict(self):
        return {"m": self.m, "J": self.J, "a": self.a, "b": self.b}


def chaplygin_sleigh(params: SleighParams, allow_degenerate: bool = False) -> Tuple[MechanicalModel, CostModel]:
    """
    建立雪橇模型與二次成本 C = ½(u₁² + u₂²)

    度量取 diag(m, m, a²m)，使 G^D = diag(b/J, 1/m) 且投影 P 與閉式一致。
    allow_degenerate=True 時允許 a = 0，供正則性檢查示範退化情形。
    """
    params.validate(allow_degenerate)
    m, J, a = params.m, params.J, params.a
    metric_diag = np.array([m, m, a * a * m])

    def metric(q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.diag(metric_diag), q.shape[:-1] + (3, 3))

    def dmetric(q):
        q = np.asarray(q, dtype=float)
        return np.zeros(q.shape[:-1] + (3, 3, 3))

    def rho(q):
        q = np.asarray(q, dtype=float)
        theta = q[..., 2]
        out = np.zeros(q.shape[:-1] + (3, 2))
        out[..., 2, 0] = 1.0 / J
        out[..., 0, 1] = np.cos(theta) / m
        out[..., 1, 1] = np.sin(theta) / m
        return out

    def drho(q):
        q = np.asarray(q, dtype=float)
        theta = q[..., 2]
        out = np.zeros(q.shape[:-1] + (3, 2, 3))
        out[..., 0, 1, 2] = -np.sin(theta) / m
        out[..., 1, 1, 2] = np.cos(theta) / m
        return out

    hamilton_field = None if params.b == 0 else sleigh_hamilton_field(params)

    model = MechanicalModel(
        name="sleigh",
        n=3,
        k=2,
        metric=metric,
        rho=rho,
        drho=drho,
        dmetric=dmetric,
        control_mode=ControlMode.EULER_LAGRANGE,
        input_map=SWAPPED_INPUTS,
        cyclic=(0, 1, 2),
        coordinate_names=("x", "y", "theta"),
        velocity_names=("y1", "y2"),
        sampling_box=((-2.0, -2.0, -np.pi), (2.0, 2.0, np.pi)),
        params=params.as_dict(),
        hamilton_field=hamilton_field,
    )
    logger.debug(f"建立雪橇模型 {params.as_dict()}")
    return model, quadratic_cost(2, name="sleigh-quadratic")


def sleigh_hamilton_field(params: SleighParams) -> Callable[[CostModel], Optional[Callable]]:
    """
    C = ½|u|² + c(q, y) 時的閉式 Hamilton 方程

    H = J²p₁²/(2b²) + m²p₂²/2 + (p_x cosθ + p_y sinθ) y₂/m + p_θ y₁/J - c
    """
    m, J, b = params.m, params.J, params.b

    def field(cost: CostModel) -> Optional[Callable]:
        if not cost.quadratic or cost.dq_cost is None or cost.dy_cost is None:
            return None

        def rhs(z: np.ndarray) -> np.ndarray:
            z = np.asarray(z, dtype=float)
            q, y = z[..., 0:3], z[..., 3:5]
            theta, y1, y2 = z[..., 2], z[..., 3], z[..., 4]
            px, py, ptheta, p1, p2 = (z[..., i] for i in range(5, 10))
            cos, sin = np.cos(theta), np.sin(theta)
            u = np.stack([m * p2, J * p1 / b], axis=-1)
            c_q = np.broadcast_to(cost.dq_cost(q, y, u), q.shape)
            c_y = np.broadcast_to(cost.dy_cost(q, y, u), y.shape)

            out = np.empty(z.shape)
            out[..., 0] = cos * y2 / m
            out[..., 1] = sin * y2 / m
            out[..., 2] = y1 / J
            out[..., 3] = (J / b) ** 2 * p1
            out[..., 4] = m * m * p2
            out[..., 5] = c_q[..., 0]
            out[..., 6] = c_q[..., 1]
            out[..., 7] = c_q[..., 2] + (px * sin - py * cos) * y2 / m
            out[..., 8] = c_y[..., 0] - ptheta / J
            out[..., 9] = c_y[..., 1] - (px * cos + py * sin) / m
            return out

        return rhs

    return field


def sleigh_regularity(params: SleighParams) -> float:
    """det(∂²L/∂ẏ∂ẏ) = a⁴/J⁴"""
    return params.a ** 4 / params.J ** 4


class SleighExtremal(NamedTuple):
    theta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray


def _unpack_constants(constants: Sequence[float]) -> Tuple[float, ...]:
    values = tuple(float(c) for c in constants)
    if len(values) != 6:
        raise InvalidParameterError(f"需要 6 個常數 c3..c8，實際為 {len(values)}")
    return values


def sleigh_analytic_extremal(constants: Sequence[float], params: SleighParams, t: np.ndarray) -> SleighExtremal:
    """
    零乘子分支 (p_x = p_y = 0) 的閉式極值

    Args:
        constants: (c3, c4, c5, c6, c7, c8)
        params: 雪橇參數
        t: 遞增時間點，x(0) = y(0) = 0

    Returns:
        SleighExtremal: θ, x, y, y₁, y₂, u₁, u₂
    """
    c3, c4, c5, c6, c7, c8 = _unpack_constants(constants)
    m, J, b = params.m, params.J, params.b
    t = np.asarray(t, dtype=float)

    def theta_of(s):
        return c3 * s ** 3 / (6.0 * J) + c4 * s ** 2 / (2.0 * J) + (c5 * s + c6) / J

    def speed(s):
        return (c7 * s + c8) / m

    xs = np.zeros_like(t)
    ys = np.zeros_like(t)
    previous = 0.0
    acc_x = acc_y = 0.0
    for i, ti in enumerate(t):
        if ti != previous:
            acc_x += quad(lambda s: np.cos(theta_of(s)) * speed(s), previous, ti, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
            acc_y += quad(lambda s: np.sin(theta_of(s)) * speed(s), previous, ti, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
            previous = ti
        xs[i], ys[i] = acc_x, acc_y

    return SleighExtremal(
        theta=theta_of(t),
        x=xs,
        y=ys,
        y1=c3 * t ** 2 / 2.0 + c4 * t + c5,
        y2=c7 * t + c8,
        u1=np.full_like(t, c7 / m),
        u2=b * (c3 * t + c4) / J,
    )


def sleigh_extremal_initial_state(constants: Sequence[float], params: SleighParams) -> AdaptedState:
    c3, c4, c5, c6, c7, c8 = _unpack_constants(constants)
    return AdaptedState(np.array([0.0, 0.0, c6 / params.J]), np.array([c5, c8]))


def sleigh_extremal_costates(constants: Sequence[float], params: SleighParams) -> np.ndarray:
    """零乘子分支的初始協態 (p_x, p_y, p_θ, p₁, p₂)"""
    c3, c4, c5, c6, c7, c8 = _unpack_constants(constants)
    m, J, b = params.m, params.J, params.b
    return np.array([0.0, 0.0, -b * b * c3 / J, b * b * c4 / J ** 2, c7 / m ** 2])


def zero_multiplier_defects(
    params: SleighParams,
    constants: Sequence[float] = DEFAULT_CONSTANTS,
    T: float = 1.0,
    h: float = 1e-3,
    method: str = "RK4",
) -> Dict[str, float]:
    """
    積分 p_x = p_y = 0 的極值流並與閉式解比對

    Returns:
        Dict[str, float]: y₁ 二次擬合、y₂ 一次擬合、u₁ 常值、u₂ 仿射與 θ 的最大偏差
    """
    model, cost = chaplygin_sleigh(params)
    start = sleigh_extremal_initial_state(constants, params)
    z0 = np.concatenate([start.q, start.y, sleigh_extremal_costates(constants, params)])
    traj = extremal_trajectory(model, cost, z0, T, h, method)
    t = traj.times
    controls = extremal_controls(model, cost, ExtremalState.unpack(model, traj.states))
    closed = sleigh_analytic_extremal(constants, params, t)

    def fit_residual(values, degree):
        return float(np.max(np.abs(values - np.polyval(np.polyfit(t, values, degree), t))))

    return {
        "y1_quadratic": fit_residual(traj.y[:, 0], 2),
        "y2_linear": fit_residual(traj.y[:, 1], 1),
        "u1_constant": fit_residual(controls[:, 0], 0),
        "u2_affine": fit_residual(controls[:, 1], 1),
        "theta_closed_form": float(np.max(np.abs(traj.q[:, 2] - closed.theta))),
    }
