"""
幾何服務
在分佈適配座標 (q^i, y^A) 下計算非完整系統的微分幾何量：
誘導度量、正交投影、非完整括號、Christoffel 符號與位能梯度

所有函式對 q 的前置批次維度 (...) 向量化，讓有限差分模板與
打靶法 Jacobian 的各欄可以一次以 numpy 批次求值。

陣列排列：
    rho      (..., n, k)      rho[..., i, A] = ρ_A^i
    drho     (..., n, k, n)   drho[..., i, A, j] = ∂ρ_A^i/∂q^j
    metric   (..., n, n)
    dmetric  (..., n, n, n)   dmetric[..., i, j, l] = ∂G_ij/∂q^l
    Γ        (..., k, k, k)   gamma[..., A, B, C] = Γ^A_{BC}
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as sla

from app.core.exceptions import ChartViolationError, InvalidParameterError, SingularMetricError

# 設置日誌
logger = logging.getLogger(__name__)

ArrayFunc = Callable[[np.ndarray], np.ndarray]

# 四階中央差分的節點與權重
_STENCIL_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_STENCIL_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
_EPS = np.finfo(float).eps


class ControlMode(str, Enum):
    """控制輸入進入運動方程的方式"""

    NORMALIZED = "Normalized"
    EULER_LAGRANGE = "EulerLagrange"


class AdaptedState(NamedTuple):
    """D 上的點 (q, y)"""

    q: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class MechanicalModel:
    """
    非完整力學模型 (G, V, D)

    metric / rho / potential 等映射都必須接受帶前置批次維度的 q (..., n)。
    未提供解析導數時以四階中央差分近似。
    """

    name: str
    n: int
    k: int
    metric: ArrayFunc
    rho: ArrayFunc
    potential: Optional[ArrayFunc] = None
    dpotential: Optional[ArrayFunc] = None
    drho: Optional[ArrayFunc] = None
    dmetric: Optional[ArrayFunc] = None
    control_mode: ControlMode = ControlMode.NORMALIZED
    input_map: Optional[np.ndarray] = None
    chart_guard: Optional[Callable[[np.ndarray], Any]] = None
    # 適配量 (G^D, Γ, 適配位能梯度) 沿這些座標不變
    cyclic: Tuple[int, ...] = ()
    coordinate_names: Tuple[str, ...] = ()
    velocity_names: Tuple[str, ...] = ()
    # 隨機抽樣用的座標盒 (下界, 上界)
    sampling_box: Optional[Tuple[Sequence[float], Sequence[float]]] = None
    params: Dict[str, float] = field(default_factory=dict)
    # cost -> z 上的閉式 Hamilton 向量場；回傳 None 表示此成本走通用組裝
    hamilton_field: Optional[Callable[[Any], Optional[ArrayFunc]]] = None

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.k <= self.n:
            raise InvalidParameterError(f"{self.name}: 維度不合法 n={self.n}, k={self.k}")
        emap = np.eye(self.k) if self.input_map is None else np.asarray(self.input_map, dtype=float)
        if emap.shape != (self.k, self.k) or abs(np.linalg.det(emap)) < 1e-14:
            raise InvalidParameterError(f"{self.name}: 輸入映射必須是可逆的 {self.k}x{self.k} 矩陣")
        object.__setattr__(self, "input_map", emap)
        object.__setattr__(self, "control_mode", ControlMode(self.control_mode))
        if any(not 0 <= i < self.n for i in self.cyclic):
            raise InvalidParameterError(f"{self.name}: 循環座標索引超出範圍 {self.cyclic}")
        if not self.coordinate_names:
            object.__setattr__(self, "coordinate_names", tuple(f"q{i + 1}" for i in range(self.n)))
        if not self.velocity_names:
            object.__setattr__(self, "velocity_names", tuple(f"y{a + 1}" for a in range(self.k)))

    @property
    def state_dim(self) -> int:
        return self.n + self.k

    @property
    def extremal_dim(self) -> int:
        return 2 * (self.n + self.k)

    def in_chart(self, q: np.ndarray) -> np.ndarray:
        """逐點判斷 q 是否在座標卡內"""
        q = np.asarray(q, dtype=float)
        inside = np.all(np.isfinite(q), axis=-1)
        if self.chart_guard is not None:
            inside = inside & np.asarray(self.chart_guard(q), dtype=bool)
        return inside

    def sample_chart(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """在 sampling_box 內均勻抽樣座標點"""
        if self.sampling_box is None:
            return rng.uniform(-1.0, 1.0, size=(size, self.n))
        lower, upper = (np.asarray(b, dtype=float) for b in self.sampling_box)
        return rng.uniform(lower, upper, size=(size, self.n))


def check_chart(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    """確認 q 通過座標卡檢查，否則拋出 ChartViolationError"""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.n:
        raise InvalidParameterError(f"{model.name}: q 的最後一維應為 {model.n}，實際為 {q.shape}")
    inside = model.in_chart(q)
    if not np.all(inside):
        bad = q[~inside] if q.ndim > 1 else q
        raise ChartViolationError(np.reshape(bad, (-1, model.n))[0], model.name)
    return q


def central_jacobian(
    func: ArrayFunc,
    q: np.ndarray,
    exponent: float = 1.0 / 3.0,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    四階中央差分 Jacobian

    Args:
        func: 接受 (..., n) 的批次映射
        q: 求值點 (..., n)
        exponent: 步長 h = eps**exponent * max(1, |q_j|)
        indices: 只對這些座標求導，其餘欄為零

    Returns:
        np.ndarray: (..., *out_shape, n)
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    cols = list(range(n)) if indices is None else list(indices)
    base = np.asarray(func(q), dtype=float)
    if not cols:
        return np.zeros(base.shape + (n,))

    steps = _EPS ** exponent * np.maximum(1.0, np.abs(q[..., cols]))  # (..., m)
    unit = np.eye(n)[cols]  # (m, n)
    # 位移 (m, ..., n)
    disp = np.moveaxis(steps, -1, 0)[..., None] * unit.reshape((len(cols),) + (1,) * (q.ndim - 1) + (n,))
    points = q + _STENCIL_OFFSETS.reshape((4, 1) + (1,) * q.ndim) * disp
    values = np.asarray(func(points), dtype=float)  # (4, m, ..., *out)
    deriv = np.tensordot(_STENCIL_WEIGHTS, values, axes=(0, 0))  # (m, ..., *out)
    out_extra = base.ndim - (q.ndim - 1)
    h = np.moveaxis(steps, -1, 0).reshape(np.moveaxis(steps, -1, 0).shape + (1,) * out_extra)
    deriv = np.moveaxis(deriv / h, 0, -1)  # (..., *out, m)

    if len(cols) == n and indices is None:
        return deriv
    full = np.zeros(base.shape + (n,))
    full[..., cols] = deriv
    return full


def rho_derivative(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    """∂ρ_A^i/∂q^j，排列 (..., n, k, n)"""
    if model.drho is not None:
        return np.asarray(model.drho(q), dtype=float)
    return central_jacobian(model.rho, q)


def metric_derivative(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    """∂G_ij/∂q^l，排列 (..., n, n, n)"""
    if model.dmetric is not None:
        return np.asarray(model.dmetric(q), dtype=float)
    return central_jacobian(model.metric, q)


def potential_value(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if model.potential is None:
        return np.zeros(q.shape[:-1])
    return np.asarray(model.potential(q), dtype=float)


def potential_gradient(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    """∂V/∂q^i，排列 (..., n)"""
    q = np.asarray(q, dtype=float)
    if model.potential is None:
        return np.zeros(q.shape)
    if model.dpotential is not None:
        return np.asarray(model.dpotential(q), dtype=float)
    return central_jacobian(model.potential, q)


class MetricFactor:
    """G^D 的 Cholesky 分解；所有 (G^D)^{-1} 的作用都經由三角求解"""

    def __init__(self, induced: np.ndarray):
        self.matrix = induced
        try:
            self.lower = np.linalg.cholesky(induced)
        except np.linalg.LinAlgError as e:
            raise SingularMetricError(f"誘導度量 G^D 非對稱正定: {e}") from e

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """回傳 (G^D)^{-1} rhs，rhs 形狀 (..., k) 或 (..., k, m)"""
        rhs = np.asarray(rhs, dtype=float)
        vector = rhs.ndim == self.matrix.ndim - 1
        if self.lower.ndim == 2:
            return sla.cho_solve((self.lower, True), rhs, check_finite=False)
        mat = rhs[..., None] if vector else rhs
        tmp = np.linalg.solve(self.lower, mat)
        out = np.linalg.solve(np.swapaxes(self.lower, -1, -2), tmp)
        return out[..., 0] if vector else out

    def inverse(self) -> np.ndarray:
        k = self.matrix.shape[-1]
        return self.solve(np.broadcast_to(np.eye(k), self.matrix.shape).copy())


class AdaptedFrame:
    """
    單一 (批次) 座標點上的幾何量快取
    同一次 RHS 求值中只建立一次，需要時才計算導數與 Christoffel 符號
    """

    def __init__(self, model: MechanicalModel, q: np.ndarray, check: bool = True):
        self.model = model
        self.q = check_chart(model, q) if check else np.asarray(q, dtype=float)
        self.rho = np.asarray(model.rho(self.q), dtype=float)
        self.metric = np.asarray(model.metric(self.q), dtype=float)
        self.induced = np.einsum("...iA,...ij,...jB->...AB", self.rho, self.metric, self.rho)
        self._factor: Optional[MetricFactor] = None
        self._drho: Optional[np.ndarray] = None
        self._gamma: Optional[np.ndarray] = None
        self._coeffs: Optional[np.ndarray] = None

    @property
    def factor(self) -> MetricFactor:
        if self._factor is None:
            self._factor = MetricFactor(self.induced)
        return self._factor

    @property
    def drho(self) -> np.ndarray:
        if self._drho is None:
            self._drho = rho_derivative(self.model, self.q)
        return self._drho

    def lie_bracket(self) -> np.ndarray:
        """[e_A, e_B]^i，排列 (..., n, k, k)"""
        term = np.einsum("...jA,...iBj->...iAB", self.rho, self.drho)
        return term - np.swapaxes(term, -1, -2)

    def bracket_coefficients(self) -> np.ndarray:
        """c^C_{AB}：P[e_A, e_B] = c^C_{AB} e_C，排列 (..., k, k, k)"""
        if self._coeffs is None:
            k = self.model.k
            proj = np.einsum("...iC,...ij,...jAB->...CAB", self.rho, self.metric, self.lie_bracket())
            flat = proj.reshape(proj.shape[:-2] + (k * k,))
            self._coeffs = self.factor.solve(flat).reshape(proj.shape)
        return self._coeffs

    def christoffel(self) -> np.ndarray:
        """Γ^A_{BC}，由限制在適配基底上的 Koszul 公式求得"""
        if self._gamma is None:
            k = self.model.k
            dmetric = metric_derivative(self.model, self.q)
            half = np.einsum("...iCl,...ij,...jD->...CDl", self.drho, self.metric, self.rho)
            d_induced = half + np.swapaxes(half, -2, -3)
            d_induced = d_induced + np.einsum("...iC,...ijl,...jD->...CDl", self.rho, dmetric, self.rho)
            # e_B(G_CD)
            eg = np.einsum("...lB,...CDl->...BCD", self.rho, d_induced)
            # G(⟦e_X, e_Y⟧, e_Z)
            cl = np.einsum("...ZE,...EXY->...XYZ", self.induced, self.bracket_coefficients())
            koszul = (
                eg
                + np.swapaxes(eg, -3, -2)
                - np.moveaxis(eg, -3, -1)
                + cl
                - np.swapaxes(cl, -2, -1)
                - np.moveaxis(cl, -1, -3)
            )
            # koszul[..., B, C, D]；對 D 指標求解
            rhs = np.moveaxis(koszul, -1, -3).reshape(koszul.shape[:-3] + (k, k * k))
            self._gamma = 0.5 * self.factor.solve(rhs).reshape(koszul.shape)
        return self._gamma

    def grad_potential(self) -> np.ndarray:
        """(G^D)^{CB} ρ_B^i ∂V/∂q^i"""
        dv = potential_gradient(self.model, self.q)
        return self.factor.solve(np.einsum("...iB,...i->...B", self.rho, dv))

    def projector(self) -> np.ndarray:
        rtm = np.einsum("...iA,...ij->...Aj", self.rho, self.metric)
        return np.einsum("...iA,...Aj->...ij", self.rho, self.factor.solve(rtm))


def adapted_frame(model: MechanicalModel, q: np.ndarray) -> AdaptedFrame:
    return AdaptedFrame(model, q)


def induced_metric(model: MechanicalModel, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    誘導度量 G^D = ρᵀ M ρ 及其逆

    Returns:
        Tuple[np.ndarray, np.ndarray]: (G^D, (G^D)^{-1})
    """
    frame = AdaptedFrame(model, q)
    return frame.induced, frame.factor.inverse()


def orthogonal_projector(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    """P = ρ (G^D)^{-1} ρᵀ M"""
    return AdaptedFrame(model, q).projector()


def complementary_projector(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    """Q = I - P"""
    return np.eye(model.n) - orthogonal_projector(model, q)


def lie_bracket(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    return AdaptedFrame(model, q).lie_bracket()


def bracket_coefficients(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    return AdaptedFrame(model, q).bracket_coefficients()


def nonholonomic_bracket(model: MechanicalModel, a: int, b: int, q: np.ndarray) -> np.ndarray:
    """⟦e_A, e_B⟧ 的適配分量 c^C"""
    if not (0 <= a < model.k and 0 <= b < model.k):
        raise InvalidParameterError(f"基底索引超出範圍: A={a}, B={b}, k={model.k}")
    return AdaptedFrame(model, q).bracket_coefficients()[..., :, a, b]


def christoffel(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    return AdaptedFrame(model, q).christoffel()


def grad_potential(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    return AdaptedFrame(model, q).grad_potential()


def kinetic_energy(model: MechanicalModel, q: np.ndarray, y: np.ndarray) -> np.ndarray:
    """½ G^D(y, y)"""
    frame = AdaptedFrame(model, q)
    return 0.5 * np.einsum("...A,...AB,...B->...", y, frame.induced, y)


def mechanical_energy(model: MechanicalModel, q: np.ndarray, y: np.ndarray) -> np.ndarray:
    """½ G^D(y, y) + V(q)"""
    return kinetic_energy(model, q, y) + potential_value(model, q)
