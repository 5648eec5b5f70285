"""
動力學服務
D 上的前向動力學：可容許性、自由與受控非完整方程、逆動力學 (控制重建)
"""

import logging
from typing import Callable, Optional, Tuple

import numpy as np

from app.core.exceptions import InvalidParameterError
from app.services.geometry import AdaptedFrame, AdaptedState, ControlMode, MechanicalModel, check_chart

# 設置日誌
logger = logging.getLogger(__name__)


def admissibility_residual(model: MechanicalModel, q: np.ndarray, y: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """回傳 q̇ - ρ(q) y，速度可容許時為零"""
    q, y, qdot = (np.asarray(a, dtype=float) for a in (q, y, qdot))
    if q.shape[-1] != model.n or qdot.shape[-1] != model.n or y.shape[-1] != model.k:
        raise InvalidParameterError(
            f"{model.name}: 形狀不一致 q={q.shape}, y={y.shape}, qdot={qdot.shape}"
        )
    rho = np.asarray(model.rho(q), dtype=float)
    return qdot - np.einsum("...iA,...A->...i", rho, y)


def free_acceleration(frame: AdaptedFrame, y: np.ndarray) -> np.ndarray:
    """ẏ^C = -Γ^C_{AB} y^A y^B - (grad V)^C"""
    gamma = frame.christoffel()
    return -np.einsum("...CAB,...A,...B->...C", gamma, y, y) - frame.grad_potential()


def control_weight(model: MechanicalModel, frame: AdaptedFrame) -> np.ndarray:
    """
    控制權重 W：u = W (ẏ - ẏ_free)

    Normalized 模式下 W = E^{-1}，EulerLagrange 模式下 W = E^{-1} G^D
    """
    if model.control_mode is ControlMode.EULER_LAGRANGE:
        return np.linalg.solve(model.input_map, frame.induced)
    return np.broadcast_to(np.linalg.inv(model.input_map), frame.induced.shape)


def apply_control(model: MechanicalModel, frame: AdaptedFrame, u: np.ndarray) -> np.ndarray:
    """W^{-1} u：控制造成的加速度"""
    forcing = np.einsum("AB,...B->...A", model.input_map, u)
    if model.control_mode is ControlMode.EULER_LAGRANGE:
        return frame.factor.solve(forcing)
    return forcing


def free_rhs(model: MechanicalModel, state: AdaptedState) -> Tuple[np.ndarray, np.ndarray]:
    """
    自由非完整方程

    Args:
        model: 力學模型
        state: D 上的點 (q, y)

    Returns:
        Tuple[np.ndarray, np.ndarray]: (q̇, ẏ)
    """
    frame = AdaptedFrame(model, state.q)
    y = np.asarray(state.y, dtype=float)
    qdot = np.einsum("...iA,...A->...i", frame.rho, y)
    return qdot, free_acceleration(frame, y)


def controlled_rhs(model: MechanicalModel, state: AdaptedState, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """全驅動受控方程；u = 0 時與 free_rhs 完全一致"""
    frame = AdaptedFrame(model, state.q)
    y = np.asarray(state.y, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != model.k:
        raise InvalidParameterError(f"{model.name}: 控制維度應為 {model.k}，實際為 {u.shape}")
    qdot = np.einsum("...iA,...A->...i", frame.rho, y)
    return qdot, free_acceleration(frame, y) + apply_control(model, frame, u)


def inverse_dynamics(model: MechanicalModel, q: np.ndarray, y: np.ndarray, ydot: np.ndarray) -> np.ndarray:
    """由 (q, y, ẏ) 重建產生該加速度所需的控制 u"""
    frame = AdaptedFrame(model, q)
    y = np.asarray(y, dtype=float)
    residual = np.asarray(ydot, dtype=float) - free_acceleration(frame, y)
    return np.einsum("...AB,...B->...A", control_weight(model, frame), residual)


def split_state(model: MechanicalModel, z: np.ndarray) -> AdaptedState:
    z = np.asarray(z, dtype=float)
    return AdaptedState(z[..., : model.n], z[..., model.n : model.n + model.k])


def free_vector_field(model: MechanicalModel, u: Optional[np.ndarray] = None) -> Callable[[np.ndarray], np.ndarray]:
    """回傳 z = (q, y) 上的向量場，供積分器使用；可帶常值控制"""
    control = None if u is None else np.asarray(u, dtype=float)

    def rhs(z: np.ndarray) -> np.ndarray:
        state = split_state(model, z)
        if control is None:
            qdot, ydot = free_rhs(model, state)
        else:
            qdot, ydot = controlled_rhs(model, state, np.broadcast_to(control, state.y.shape))
        return np.concatenate([qdot, ydot], axis=-1)

    return rhs


def integrate_free(
    model: MechanicalModel,
    state0: AdaptedState,
    T: float,
    h: float,
    method: str = "RK4",
    u: Optional[np.ndarray] = None,
):
    """
    積分自由 (或常值控制) 動力學

    Returns:
        Trajectory: 均勻網格上的 (q, y) 樣本
    """
    # 避免 solver -> ocp -> dynamics 的循環導入
    from app.services.solver import Trajectory, chart_exit_check, integrate

    check_chart(model, state0.q)
    z0 = np.concatenate([np.asarray(state0.q, dtype=float), np.asarray(state0.y, dtype=float)])
    traj = integrate(
        free_vector_field(model, u),
        z0,
        T,
        h,
        method,
        checks=[chart_exit_check(model)],
    )
    logger.debug(f"{model.name}: 自由積分完成，共 {len(traj.times)} 個樣本")
    return Trajectory(
        times=traj.times,
        states=traj.states,
        n=model.n,
        k=model.k,
        kind="adapted",
        metadata={"model": model.name, "method": method, "h": float(traj.times[1] - traj.times[0])},
    )
