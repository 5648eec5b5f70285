"""
最優控制服務
D^(2) 上的 OCP Lagrangian L = C(q, y, u(q, y, ẏ))、極值方程殘差、
Σ_L 殘差、Legendre 變換與正則性檢查、T*D 上的 Hamiltonian 與 Hamilton 方程
"""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.integrate import simpson

from app.core.exceptions import InvalidParameterError, LegendreInversionError, SingularMetricError
from app.services.dynamics import apply_control, control_weight, free_acceleration
from app.services.geometry import AdaptedFrame, MechanicalModel, central_jacobian

# 設置日誌
logger = logging.getLogger(__name__)

# 一般成本的 Legendre 反解設定
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
# 正則性判定的行列式下限
REGULARITY_FLOOR = 1e-14


@dataclass(frozen=True)
class CostModel:
    """
    運行成本 C(q, y, u) 及其導數

    dq_cost / dy_cost 為 u 固定時的顯式偏導；未提供時以中央差分近似。
    quadratic=True 表示 C = ½|u|² + c(q, y)，Legendre 反解走閉式解。
    """

    running_cost: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    du_cost: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    duu_cost: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dq_cost: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    dy_cost: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    potential_term: Optional[Callable[[np.ndarray], np.ndarray]] = None
    quadratic: bool = False
    name: str = "cost"


def quadratic_cost(
    k: int,
    potential: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    dpotential: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    name: str = "quadratic",
) -> CostModel:
    """C = ½|u|² + ½ V_nav(q)"""

    def running_cost(q, y, u):
        value = 0.5 * np.sum(np.asarray(u) ** 2, axis=-1)
        if potential is not None:
            value = value + 0.5 * potential(q)
        return value

    def du_cost(q, y, u):
        return np.asarray(u, dtype=float)

    def duu_cost(q, y, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(np.eye(k), u.shape + (k,))

    def dq_cost(q, y, u):
        q = np.asarray(q, dtype=float)
        if potential is None:
            return np.zeros(np.broadcast_shapes(q.shape[:-1], np.shape(u)[:-1]) + q.shape[-1:])
        grad = dpotential(q) if dpotential is not None else central_jacobian(potential, q)
        return 0.5 * grad

    def dy_cost(q, y, u):
        return np.zeros(np.broadcast_shapes(np.shape(y), np.shape(u)))

    return CostModel(
        running_cost=running_cost,
        du_cost=du_cost,
        duu_cost=duu_cost,
        dq_cost=dq_cost,
        dy_cost=dy_cost,
        potential_term=potential,
        quadratic=True,
        name=name,
    )


class SecondOrderPoint(NamedTuple):
    """D^(2) 上的點 (q, y, ẏ)；q̇ = ρy 由構造隱含"""

    q: np.ndarray
    y: np.ndarray
    ydot: np.ndarray


class ExtremalState(NamedTuple):
    """T*D 上的點 (q, y, p_i, p_A)"""

    q: np.ndarray
    y: np.ndarray
    p_base: np.ndarray
    p_fiber: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([np.asarray(a, dtype=float) for a in self], axis=-1)

    @classmethod
    def unpack(cls, model: MechanicalModel, z: np.ndarray) -> "ExtremalState":
        z = np.asarray(z, dtype=float)
        n, k = model.n, model.k
        return cls(z[..., :n], z[..., n : n + k], z[..., n + k : 2 * n + k], z[..., 2 * n + k : 2 * (n + k)])


class SigmaPoint(NamedTuple):
    """T*TD 上的座標 (q, y, q̇, ẏ, μ_i, μ_A, γ_i, γ_A)"""

    q: np.ndarray
    y: np.ndarray
    qdot: np.ndarray
    ydot: np.ndarray
    mu_base: np.ndarray
    mu_fiber: np.ndarray
    gamma_base: np.ndarray
    gamma_fiber: np.ndarray


class LagrangianPartials(NamedTuple):
    value: np.ndarray
    dq: np.ndarray
    dy: np.ndarray
    dydot: np.ndarray
    control: np.ndarray
    weight: np.ndarray


class Regularity(NamedTuple):
    det_lagrangian: float
    det_cost: float
    regular: bool


class ExtremalResidual(NamedTuple):
    base: np.ndarray
    fiber: np.ndarray
    admissibility: np.ndarray
    # 殘差在 h 與 2h 網格上的比值約為 4 時，代表殘差由離散誤差主導
    refinement_ratio: float

    @property
    def max_abs(self) -> float:
        return float(max(np.max(np.abs(block)) for block in (self.base, self.fiber, self.admissibility)))

    @property
    def discretization_dominated(self) -> bool:
        return self.max_abs > 0.0 and 3.0 <= self.refinement_ratio <= 5.0


class SigmaResidual(NamedTuple):
    base: np.ndarray
    fiber: np.ndarray
    momentum: np.ndarray
    admissibility: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(max(np.max(np.abs(np.asarray(block))) for block in self))


class HamiltonRhs(NamedTuple):
    qdot: np.ndarray
    ydot: np.ndarray
    p_base_dot: np.ndarray
    p_fiber_dot: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate(list(self), axis=-1)


def _controls(model: MechanicalModel, q: np.ndarray, y: np.ndarray, ydot: np.ndarray) -> np.ndarray:
    """不做座標卡檢查的逆動力學，用於差分模板"""
    frame = AdaptedFrame(model, q, check=False)
    return np.einsum("...AB,...B->...A", control_weight(model, frame), ydot - free_acceleration(frame, y))


def _broadcast_points(q, y, ydot):
    q, y, ydot = (np.asarray(a, dtype=float) for a in (q, y, ydot))
    batch = np.broadcast_shapes(q.shape[:-1], y.shape[:-1], ydot.shape[:-1])
    return (
        np.broadcast_to(q, batch + q.shape[-1:]),
        np.broadcast_to(y, batch + y.shape[-1:]),
        np.broadcast_to(ydot, batch + ydot.shape[-1:]),
    )


def lagrangian_partials(
    model: MechanicalModel,
    cost: CostModel,
    q: np.ndarray,
    y: np.ndarray,
    ydot: np.ndarray,
    frame: Optional[AdaptedFrame] = None,
) -> LagrangianPartials:
    """
    L 及其對 q, y, ẏ 的偏導

    ∂u/∂q 以四階中央差分計算，只在非循環座標上建立模板。
    """
    q, y, ydot = _broadcast_points(q, y, ydot)
    frame = frame if frame is not None else AdaptedFrame(model, q)
    weight = control_weight(model, frame)
    free = free_acceleration(frame, y)
    u = np.einsum("...AB,...B->...A", weight, ydot - free)

    value = np.asarray(cost.running_cost(q, y, u), dtype=float)
    c_u = np.asarray(cost.du_cost(q, y, u), dtype=float)

    # ∂L/∂ẏ = Wᵀ C_u
    dydot = np.einsum("...AB,...A->...B", weight, c_u)

    # ∂f^C/∂y^A = -(Γ^C_{AB} + Γ^C_{BA}) y^B
    gamma = frame.christoffel()
    df_dy = -np.einsum("...CAB,...B->...CA", gamma + np.swapaxes(gamma, -1, -2), y)
    du_dy = -np.einsum("...AB,...BC->...AC", weight, df_dy)
    if cost.dy_cost is not None:
        c_y = np.asarray(cost.dy_cost(q, y, u), dtype=float)
    else:
        c_y = central_jacobian(lambda yy: np.broadcast_to(cost.running_cost(q, yy, u), yy.shape[:-1]), y)
    dy = c_y + np.einsum("...AC,...A->...C", du_dy, c_u)

    if cost.dq_cost is not None:
        c_q = np.asarray(cost.dq_cost(q, y, u), dtype=float)
    else:
        c_q = central_jacobian(lambda qq: np.broadcast_to(cost.running_cost(qq, y, u), qq.shape[:-1]), q)
    active = [i for i in range(model.n) if i not in model.cyclic]
    if active:
        du_dq = central_jacobian(lambda qq: _controls(model, qq, y, ydot), q, exponent=0.2, indices=active)
        dq = c_q + np.einsum("...Ai,...A->...i", du_dq, c_u)
    else:
        dq = c_q
    return LagrangianPartials(value, dq, dy, dydot, u, weight)


def ocp_lagrangian(model: MechanicalModel, cost: CostModel, pt: SecondOrderPoint) -> np.ndarray:
    """L(q, y, ẏ) = C(q, y, inverse_dynamics(q, y, ẏ))"""
    q, y, ydot = _broadcast_points(pt.q, pt.y, pt.ydot)
    frame = AdaptedFrame(model, q)
    u = np.einsum("...AB,...B->...A", control_weight(model, frame), ydot - free_acceleration(frame, y))
    return np.asarray(cost.running_cost(q, y, u), dtype=float)


def path_cost(model: MechanicalModel, cost: CostModel, times: np.ndarray, q: np.ndarray, y: np.ndarray, ydot: np.ndarray) -> float:
    """∫ L dt，以複合 Simpson 積分"""
    values = ocp_lagrangian(model, cost, SecondOrderPoint(q, y, ydot))
    return float(simpson(values, x=np.asarray(times, dtype=float)))


def _time_derivative(values: np.ndarray, h: float) -> np.ndarray:
    # 內部中央差分，端點二階單邊差分
    return np.gradient(values, h, axis=0, edge_order=2)


def _extremal_blocks(model, cost, q, y, lam, h):
    qdot = _time_derivative(q, h)
    ydot = _time_derivative(y, h)
    frame = AdaptedFrame(model, q)
    partials = lagrangian_partials(model, cost, q, y, ydot, frame=frame)
    base = (
        _time_derivative(lam, h)
        - partials.dq
        + np.einsum("...j,...jAi,...A->...i", lam, frame.drho, y)
    )
    fiber = (
        _time_derivative(partials.dydot, h)
        - partials.dy
        + np.einsum("...iA,...i->...A", frame.rho, lam)
    )
    admissibility = qdot - np.einsum("...iA,...A->...i", frame.rho, y)
    return base, fiber, admissibility


def lagrangian_extremal_residual(
    model: MechanicalModel,
    cost: CostModel,
    times: np.ndarray,
    q: np.ndarray,
    y: np.ndarray,
    lam: np.ndarray,
) -> ExtremalResidual:
    """
    受約束 Lagrangian 極值方程的殘差

    λ̇_i - ∂L/∂q^i + λ_j (∂ρ_A^j/∂q^i) y^A
    d/dt(∂L/∂ẏ^A) - ∂L/∂y^A + ρ_A^i λ_i
    q̇ - ρ y

    Args:
        times: 均勻時間網格 (N+1,)
        q, y, lam: 路徑樣本 (N+1, n), (N+1, k), (N+1, n)
    """
    times = np.asarray(times, dtype=float)
    q, y, lam = (np.asarray(a, dtype=float) for a in (q, y, lam))
    if times.ndim != 1 or len(times) < 5:
        raise InvalidParameterError("極值殘差需要至少 5 個樣本的一維時間網格")
    steps = np.diff(times)
    h = float(steps.mean())
    if np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise InvalidParameterError("極值殘差需要均勻時間網格")

    base, fiber, adm = _extremal_blocks(model, cost, q, y, lam, h)
    fine = max(np.max(np.abs(b)) for b in (base, fiber, adm))
    coarse_blocks = _extremal_blocks(model, cost, q[::2], y[::2], lam[::2], 2.0 * h)
    coarse = max(np.max(np.abs(b)) for b in coarse_blocks)
    ratio = float(coarse / fine) if fine > 0 else 0.0
    residual = ExtremalResidual(base, fiber, adm, ratio)
    if residual.discretization_dominated:
        logger.debug(f"極值殘差 {fine:.3e} 以 O(h²) 離散誤差為主 (比值 {ratio:.2f})")
    return residual


def sigma_residual(model: MechanicalModel, cost: CostModel, pt: SigmaPoint) -> SigmaResidual:
    """Σ_L 的局部方程；四個區塊全為零時 pt ∈ Σ_L"""
    frame = AdaptedFrame(model, pt.q)
    y = np.asarray(pt.y, dtype=float)
    gamma_base = np.asarray(pt.gamma_base, dtype=float)
    partials = lagrangian_partials(model, cost, pt.q, y, pt.ydot, frame=frame)
    base = pt.mu_base + np.einsum("...j,...jAi,...A->...i", gamma_base, frame.drho, y) - partials.dq
    fiber = pt.mu_fiber + np.einsum("...iA,...i->...A", frame.rho, gamma_base) - partials.dy
    momentum = pt.gamma_fiber - partials.dydot
    admissibility = pt.qdot - np.einsum("...iA,...A->...i", frame.rho, y)
    return SigmaResidual(base, fiber, momentum, admissibility)


def legendre_transform(
    model: MechanicalModel, cost: CostModel, pt: SecondOrderPoint, gamma_base: np.ndarray
) -> ExtremalState:
    """FL(q, y, ẏ, γ_i) = (q, y, γ_i, ∂L/∂ẏ^A)"""
    q, y, ydot = _broadcast_points(pt.q, pt.y, pt.ydot)
    frame = AdaptedFrame(model, q)
    weight = control_weight(model, frame)
    u = np.einsum("...AB,...B->...A", weight, ydot - free_acceleration(frame, y))
    p_fiber = np.einsum("...AB,...A->...B", weight, cost.du_cost(q, y, u))
    return ExtremalState(q, y, np.asarray(gamma_base, dtype=float), p_fiber)


def regularity_check(model: MechanicalModel, cost: CostModel, pt: SecondOrderPoint) -> Regularity:
    """
    det(∂²L/∂ẏ∂ẏ) = det(W)² det(∂²C/∂u²)

    不分解 G^D，退化模型 (例如偏移 a = 0 的雪橇) 會回傳零行列式而不拋錯。
    """
    q, y, ydot = _broadcast_points(pt.q, pt.y, pt.ydot)
    frame = AdaptedFrame(model, q)
    weight = control_weight(model, frame)
    # 僅在 G^D 可分解時重建 u；否則在 u = 0 評估 C_uu
    try:
        u = np.einsum("...AB,...B->...A", weight, ydot - free_acceleration(frame, y))
    except SingularMetricError:
        u = np.zeros(y.shape)
    c_uu = np.asarray(cost.duu_cost(q, y, u), dtype=float)
    hessian = np.einsum("...AB,...AC,...CD->...BD", weight, c_uu, weight)
    det_l = float(np.linalg.det(hessian))
    det_c = float(np.linalg.det(c_uu))
    regular = bool(np.isfinite(det_l) and abs(det_l) > REGULARITY_FLOOR)
    if not regular:
        logger.warning(f"{model.name}: ∂²L/∂ẏ² 奇異，det = {det_l:.3e}")
    return Regularity(det_l, det_c, regular)


def _invert_controls(model, cost, frame, q, y, p_fiber, weight):
    """由 p_A = Wᵀ C_u 解出 u"""
    if cost.quadratic:
        return np.linalg.solve(np.swapaxes(weight, -1, -2), p_fiber[..., None])[..., 0]

    u = np.zeros(p_fiber.shape)
    target = max(1.0, float(np.max(np.abs(p_fiber)))) * NEWTON_TOL
    wt = np.swapaxes(weight, -1, -2)
    residual = np.einsum("...AB,...B->...A", wt, cost.du_cost(q, y, u)) - p_fiber
    norm = float(np.max(np.abs(residual)))
    for iteration in range(NEWTON_MAX_ITER):
        if norm <= target:
            return u
        jac = np.einsum("...AB,...BC->...AC", wt, cost.duu_cost(q, y, u))
        try:
            step = np.linalg.solve(jac, -residual[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            raise LegendreInversionError(f"∂²C/∂u² 奇異，無法反解 Legendre 變換: {e}") from e
        alpha = 1.0
        while True:
            trial = u + alpha * step
            trial_res = np.einsum("...AB,...B->...A", wt, cost.du_cost(q, y, trial)) - p_fiber
            trial_norm = float(np.max(np.abs(trial_res)))
            if trial_norm < norm or alpha < 1e-8:
                break
            alpha *= 0.5
        u, residual, norm = trial, trial_res, trial_norm
    if norm > target:
        raise LegendreInversionError(
            f"Legendre 反解 Newton 在 {NEWTON_MAX_ITER} 次迭代後未收斂，殘差 {norm:.3e}"
        )
    return u


def invert_legendre(
    model: MechanicalModel,
    cost: CostModel,
    q: np.ndarray,
    y: np.ndarray,
    p_fiber: np.ndarray,
    frame: Optional[AdaptedFrame] = None,
) -> np.ndarray:
    """ẏ = ẏ(q, y, p_A)"""
    q, y, p_fiber = _broadcast_points(q, y, p_fiber)
    frame = frame if frame is not None else AdaptedFrame(model, q)
    weight = control_weight(model, frame)
    try:
        u = _invert_controls(model, cost, frame, q, y, p_fiber, weight)
    except np.linalg.LinAlgError as e:
        raise LegendreInversionError(f"{model.name}: 控制權重奇異: {e}") from e
    return free_acceleration(frame, y) + apply_control(model, frame, u)


def extremal_controls(model: MechanicalModel, cost: CostModel, ex: ExtremalState) -> np.ndarray:
    """沿極值重建控制 u"""
    frame = AdaptedFrame(model, ex.q)
    ydot = invert_legendre(model, cost, ex.q, ex.y, ex.p_fiber, frame=frame)
    weight = control_weight(model, frame)
    return np.einsum("...AB,...B->...A", weight, ydot - free_acceleration(frame, ex.y))


def hamiltonian(model: MechanicalModel, cost: CostModel, ex: ExtremalState) -> np.ndarray:
    """H = p_A ẏ^A(q, y, p) + p_i ρ_A^i y^A - L"""
    frame = AdaptedFrame(model, ex.q)
    y = np.asarray(ex.y, dtype=float)
    ydot = invert_legendre(model, cost, ex.q, y, ex.p_fiber, frame=frame)
    u = np.einsum("...AB,...B->...A", control_weight(model, frame), ydot - free_acceleration(frame, y))
    lagrangian = cost.running_cost(frame.q, y, u)
    qdot = np.einsum("...iA,...A->...i", frame.rho, y)
    return (
        np.einsum("...A,...A->...", ex.p_fiber, ydot)
        + np.einsum("...i,...i->...", ex.p_base, qdot)
        - lagrangian
    )


def hamilton_rhs(model: MechanicalModel, cost: CostModel, ex: ExtremalState) -> HamiltonRhs:
    """
    T*D 上的 Hamilton 方程

    q̇ = ρ y, ẏ = ẏ(q, y, p),
    ṗ_i = ∂L/∂q^i - p_j (∂ρ_A^j/∂q^i) y^A,
    ṗ_A = ∂L/∂y^A - ρ_A^i p_i
    """
    frame = AdaptedFrame(model, ex.q)
    y = np.asarray(ex.y, dtype=float)
    p_base = np.asarray(ex.p_base, dtype=float)
    ydot = invert_legendre(model, cost, frame.q, y, ex.p_fiber, frame=frame)
    partials = lagrangian_partials(model, cost, frame.q, y, ydot, frame=frame)
    qdot = np.einsum("...iA,...A->...i", frame.rho, y)
    p_base_dot = partials.dq - np.einsum("...j,...jAi,...A->...i", p_base, frame.drho, y)
    p_fiber_dot = partials.dy - np.einsum("...iA,...i->...A", frame.rho, p_base)
    return HamiltonRhs(qdot, ydot, p_base_dot, p_fiber_dot)


def extremal_vector_field(
    model: MechanicalModel, cost: CostModel, closed_form: bool = True
) -> Callable[[np.ndarray], np.ndarray]:
    """
    z = (q, y, p_i, p_A) 上的向量場，供積分器使用

    模型提供 hamilton_field 且支援此成本時使用閉式方程；
    closed_form=False 一律走 hamilton_rhs 的通用組裝。
    """
    if closed_form and model.hamilton_field is not None:
        field = model.hamilton_field(cost)
        if field is not None:
            return field

    def rhs(z: np.ndarray) -> np.ndarray:
        return hamilton_rhs(model, cost, ExtremalState.unpack(model, z)).pack()

    return rhs


def sigma_point_from_extremal(model: MechanicalModel, cost: CostModel, ex: ExtremalState) -> SigmaPoint:
    """以 γ_i = p_i、γ_A = ∂L/∂ẏ^A 將極值點提升到 Σ_L"""
    frame = AdaptedFrame(model, ex.q)
    y = np.asarray(ex.y, dtype=float)
    p_base = np.asarray(ex.p_base, dtype=float)
    ydot = invert_legendre(model, cost, frame.q, y, ex.p_fiber, frame=frame)
    partials = lagrangian_partials(model, cost, frame.q, y, ydot, frame=frame)
    qdot = np.einsum("...iA,...A->...i", frame.rho, y)
    mu_base = partials.dq - np.einsum("...j,...jAi,...A->...i", p_base, frame.drho, y)
    mu_fiber = partials.dy - np.einsum("...iA,...i->...A", frame.rho, p_base)
    return SigmaPoint(frame.q, y, qdot, ydot, mu_base, mu_fiber, p_base, partials.dydot)
