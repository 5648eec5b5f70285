"""
求解服務
固定步長顯式積分器、初始協態的 (多段) 打靶法、κ 掃描與單值矩陣檢查
"""

import asyncio
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson, trapezoid

from app.core.config import settings
from app.core.exceptions import (
    ChartExitError,
    ChartViolationError,
    ConvergenceError,
    IntegrationError,
    InvalidParameterError,
    NonholonomicError,
)
from app.services.geometry import AdaptedState, MechanicalModel, check_chart
from app.services.ocp import (
    CostModel,
    ExtremalState,
    extremal_controls,
    extremal_vector_field,
    hamiltonian,
)

# 設置日誌
logger = logging.getLogger(__name__)

StateCheck = Callable[[float, np.ndarray], None]


class IntegrationMethod(str, Enum):
    RK4 = "RK4"
    HEUN = "Heun"
    EULER = "Euler"


def _euler(rhs, z, h):
    return z + h * rhs(z)


def _heun(rhs, z, h):
    k1 = rhs(z)
    k2 = rhs(z + h * k1)
    return z + 0.5 * h * (k1 + k2)


def _rk4(rhs, z, h):
    k1 = rhs(z)
    k2 = rhs(z + 0.5 * h * k1)
    k3 = rhs(z + 0.5 * h * k2)
    k4 = rhs(z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STEPPERS = {
    IntegrationMethod.RK4: _rk4,
    IntegrationMethod.HEUN: _heun,
    IntegrationMethod.EULER: _euler,
}


@dataclass
class Trajectory:
    """均勻時間網格上的狀態樣本；kind 為 adapted (q, y) 或 extremal (q, y, p_i, p_A)"""

    times: np.ndarray
    states: np.ndarray
    n: int = 0
    k: int = 0
    kind: str = "adapted"
    controls: Optional[np.ndarray] = None
    cost: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if len(self.times) != len(self.states):
            raise InvalidParameterError(f"時間與狀態長度不一致: {len(self.times)} != {len(self.states)}")
        if self.controls is not None and len(self.controls) != len(self.times):
            raise InvalidParameterError("控制樣本長度與時間網格不一致")

    @property
    def q(self) -> np.ndarray:
        return self.states[..., : self.n]

    @property
    def y(self) -> np.ndarray:
        return self.states[..., self.n : self.n + self.k]

    @property
    def p_base(self) -> np.ndarray:
        return self.states[..., self.n + self.k : 2 * self.n + self.k]

    @property
    def p_fiber(self) -> np.ndarray:
        return self.states[..., 2 * self.n + self.k : 2 * (self.n + self.k)]

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def min_distance(self, center: Sequence[float], indices: Tuple[int, int] = (0, 1)) -> float:
        """軌跡到平面點 center 的最小距離"""
        planar = self.states[:, list(indices)]
        return float(np.min(np.linalg.norm(planar - np.asarray(center, dtype=float), axis=-1)))


def _grid(T: float, h: float) -> Tuple[int, float]:
    if not T > 0:
        raise InvalidParameterError(f"時間長度必須為正: T={T}")
    if not 0 < h <= T:
        raise InvalidParameterError(f"步長必須滿足 0 < h <= T: h={h}, T={T}")
    steps = max(1, int(math.ceil(T / h - 1e-9)))
    return steps, T / steps


def _march(rhs, z0, steps, h, method, checks, store):
    try:
        stepper = _STEPPERS[IntegrationMethod(method)]
    except ValueError as e:
        raise InvalidParameterError(f"未知的積分方法: {method}") from e
    z = np.array(z0, dtype=float)
    samples = [z] if store else None
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for i in range(steps):
            t = (i + 1) * h
            try:
                z = stepper(rhs, z, h)
            except ChartViolationError as e:
                raise ChartExitError(f"積分中離開座標卡: {e}", t - h, z) from e
            except IntegrationError:
                raise
            except (NonholonomicError, np.linalg.LinAlgError) as e:
                raise IntegrationError(f"積分中幾何量失效: {e}", t - h, z) from e
            if not np.all(np.isfinite(z)):
                raise IntegrationError("積分狀態出現非有限值", t, z)
            for check in checks:
                check(t, z)
            if store:
                samples.append(z)
    return z, samples


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    state0: np.ndarray,
    T: float,
    h: float,
    method: str = "RK4",
    checks: Sequence[StateCheck] = (),
) -> Trajectory:
    """
    固定步長顯式積分

    網格步數 N = ceil(T/h)，實際步長 T/N。state0 可帶前置批次維度，
    此時 states 形狀為 (N+1, ..., d)。
    """
    steps, h_eff = _grid(T, h)
    _, samples = _march(rhs, state0, steps, h_eff, method, checks, store=True)
    times = np.linspace(0.0, T, steps + 1)
    return Trajectory(times=times, states=np.stack(samples), kind="raw", metadata={"method": str(method), "h": h_eff})


def integrate_final(
    rhs: Callable[[np.ndarray], np.ndarray],
    state0: np.ndarray,
    T: float,
    h: float,
    method: str = "RK4",
    checks: Sequence[StateCheck] = (),
) -> np.ndarray:
    """只回傳終點狀態的積分"""
    steps, h_eff = _grid(T, h)
    final, _ = _march(rhs, state0, steps, h_eff, method, checks, store=False)
    return final


def chart_exit_check(model: MechanicalModel) -> StateCheck:
    def check(t: float, z: np.ndarray) -> None:
        if not np.all(model.in_chart(z[..., : model.n])):
            raise ChartExitError(f"{model.name}: 軌跡離開座標卡", t, z)

    return check


@dataclass(frozen=True)
class BoundaryConditions:
    state0: AdaptedState
    stateT: AdaptedState
    T: float

    def validate(self, model: MechanicalModel) -> None:
        if not self.T > 0:
            raise InvalidParameterError(f"時間長度必須為正: T={self.T}")
        for label, state in (("state0", self.state0), ("stateT", self.stateT)):
            if np.shape(state.q) != (model.n,) or np.shape(state.y) != (model.k,):
                raise InvalidParameterError(f"{label} 形狀應為 q:{model.n}, y:{model.k}")
            check_chart(model, state.q)


@dataclass(frozen=True)
class ShootingConfig:
    h: float = field(default_factory=lambda: settings.DEFAULT_STEP)
    method: str = field(default_factory=lambda: settings.DEFAULT_METHOD)
    newton_tol: float = field(default_factory=lambda: settings.NEWTON_TOL)
    newton_max_iter: int = field(default_factory=lambda: settings.NEWTON_MAX_ITER)
    fd_step: float = field(default_factory=lambda: settings.FD_STEP)
    damping: float = field(default_factory=lambda: settings.LINE_SEARCH_FACTOR)
    min_step: float = field(default_factory=lambda: settings.MIN_LINE_SEARCH_STEP)
    segments: int = 1
    initial_costate_guess: Optional[Tuple[float, ...]] = None
    warm_start_clearance: float = field(default_factory=lambda: settings.WARM_START_CLEARANCE)
    # Newton 停滯時，把終點目標分成幾段逐步延拓；1 表示不延拓
    continuation_stages: int = field(default_factory=lambda: settings.CONTINUATION_STAGES)
    # 先在此步長的粗網格上求解；不大於 2h 時略過粗網格
    coarse_step: float = field(default_factory=lambda: settings.COARSE_STEP)

    def __post_init__(self):
        if not self.h > 0 or not self.newton_tol > 0 or not self.fd_step > 0:
            raise InvalidParameterError("步長與容許誤差必須為正")
        if not 0 < self.damping < 1 or not 0 < self.min_step <= 1:
            raise InvalidParameterError(f"線搜尋參數不合法: damping={self.damping}, min_step={self.min_step}")
        if self.segments < 1 or self.newton_max_iter < 1 or self.continuation_stages < 1:
            raise InvalidParameterError("segments、newton_max_iter 與 continuation_stages 必須 >= 1")
        if not self.coarse_step >= 0:
            raise InvalidParameterError(f"coarse_step 必須非負: {self.coarse_step}")
        try:
            IntegrationMethod(self.method)
        except ValueError as e:
            raise InvalidParameterError(f"未知的積分方法: {self.method}") from e


@dataclass
class ShootingResult:
    trajectory: Optional[Trajectory]
    costates: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float
    residual_history: List[float] = field(default_factory=list)
    step_history: List[float] = field(default_factory=list)
    cost: Optional[float] = None
    cost_trapezoid: Optional[float] = None
    hamiltonian_drift: Optional[float] = None

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual_norm,
            "residual_history": list(self.residual_history),
            "step_sizes": list(self.step_history),
            "initial_costates": [float(v) for v in self.costates],
            "J": self.cost,
            "J_trapezoid": self.cost_trapezoid,
            "H_drift": self.hamiltonian_drift,
        }


class _ShootingProblem:
    """未知量為初始協態 (n+k) 與中間節點的完整極值狀態"""

    def __init__(self, model, cost, bc, cfg, checks):
        self.model = model
        self.cost = cost
        self.cfg = cfg
        self.checks = list(checks)
        self.m = model.n + model.k
        self.d = 2 * self.m
        self.segments = cfg.segments
        self.seg_T = bc.T / cfg.segments
        self.seg_steps, self.seg_h = _grid(self.seg_T, min(cfg.h, self.seg_T))
        self.rhs = extremal_vector_field(model, cost)
        self.head = np.concatenate([np.asarray(bc.state0.q, float), np.asarray(bc.state0.y, float)])
        self.target = np.concatenate([np.asarray(bc.stateT.q, float), np.asarray(bc.stateT.y, float)])
        self.size = self.m + (self.segments - 1) * self.d

    def starts(self, x: np.ndarray) -> np.ndarray:
        """(..., S, d) 各段起點"""
        head = np.broadcast_to(self.head, x.shape[:-1] + (self.m,))
        first = np.concatenate([head, x[..., : self.m]], axis=-1)[..., None, :]
        if self.segments == 1:
            return first
        rest = x[..., self.m :].reshape(x.shape[:-1] + (self.segments - 1, self.d))
        return np.concatenate([first, rest], axis=-2)

    def residual(self, x: np.ndarray) -> np.ndarray:
        starts = self.starts(x)
        ends = integrate_final(self.rhs, starts, self.seg_T, self.seg_h, self.cfg.method, self.checks)
        terminal = ends[..., -1, : self.m] - self.target
        if self.segments == 1:
            return terminal
        defects = (ends[..., :-1, :] - starts[..., 1:, :]).reshape(x.shape[:-1] + ((self.segments - 1) * self.d,))
        return np.concatenate([defects, terminal], axis=-1)

    def jacobian(self, x: np.ndarray, fx: np.ndarray) -> np.ndarray:
        # 前向差分，各欄一次批次積分
        delta = self.cfg.fd_step * np.maximum(1.0, np.abs(x))
        columns = self.residual(x + np.diag(delta))
        return ((columns - fx) / delta[:, None]).T

    def initial_guess(self, p0: np.ndarray) -> np.ndarray:
        if self.segments == 1:
            return p0
        z0 = np.concatenate([self.head, p0])
        try:
            traj = integrate(self.rhs, z0, self.seg_T * self.segments, self.seg_h, self.cfg.method, self.checks)
            nodes = traj.states[[s * self.seg_steps for s in range(1, self.segments)]]
        except IntegrationError:
            # 沿直線內插 (q, y)，協態保持常值
            weights = np.arange(1, self.segments)[:, None] / self.segments
            qy = (1.0 - weights) * self.head + weights * self.target
            nodes = np.concatenate([qy, np.broadcast_to(p0, (self.segments - 1, self.m))], axis=-1)
        return np.concatenate([p0, nodes.reshape(-1)])

    def trajectory(self, x: np.ndarray) -> Trajectory:
        starts = self.starts(x)
        raw = integrate(self.rhs, starts, self.seg_T, self.seg_h, self.cfg.method, self.checks)
        pieces = [raw.states[:-1, s] for s in range(self.segments - 1)] + [raw.states[:, -1]]
        states = np.concatenate(pieces, axis=0)
        times = np.linspace(0.0, self.seg_T * self.segments, len(states))
        return Trajectory(
            times=times,
            states=states,
            n=self.model.n,
            k=self.model.k,
            kind="extremal",
            metadata={"model": self.model.name, "method": self.cfg.method, "h": self.seg_h},
        )


def _try_residual(problem: _ShootingProblem, x: np.ndarray) -> Optional[np.ndarray]:
    try:
        return problem.residual(x)
    except IntegrationError as e:
        logger.debug(f"試探打靶被拒絕: {e}")
        return None


def _sup(f: np.ndarray) -> float:
    return float(np.max(np.abs(f)))


def _merit(f: np.ndarray) -> float:
    # 步長接受以歐氏範數判斷，收斂仍以最大分量判斷
    return float(np.linalg.norm(f))


def _line_search(problem, x, fx, dx):
    merit = _merit(fx)
    alpha = 1.0
    while alpha >= problem.cfg.min_step:
        f_trial = _try_residual(problem, x + alpha * dx)
        if f_trial is not None:
            logger.debug(f"線搜尋 alpha={alpha:.3e} 殘差={_merit(f_trial):.3e}")
            if _merit(f_trial) < merit:
                return x + alpha * dx, f_trial, alpha
        alpha *= problem.cfg.damping
    return None


def _levenberg_marquardt_step(problem, x, fx, jac):
    merit = _merit(fx)
    jtj = jac.T @ jac
    scale = max(float(np.max(np.diag(jtj))), 1e-300)
    for mu in (1e-6, 1e-4, 1e-2, 1.0, 1e2):
        dx = np.linalg.solve(jtj + mu * scale * np.eye(len(x)), -jac.T @ fx)
        f_trial = _try_residual(problem, x + dx)
        if f_trial is not None and _merit(f_trial) < merit:
            logger.debug(f"Levenberg-Marquardt 步 mu={mu:.0e} 殘差={_merit(f_trial):.3e}")
            return x + dx, f_trial, -mu
    return None


class _NewtonRun(NamedTuple):
    x: np.ndarray
    fx: np.ndarray
    iterations: int
    history: List[float]
    steps: List[float]

    @property
    def norm(self) -> float:
        return self.history[-1]


def _newton(problem: _ShootingProblem, x: np.ndarray, fx: np.ndarray) -> _NewtonRun:
    """阻尼 Newton：最小平方步、回溯線搜尋，失敗時退回 LM 步"""
    cfg = problem.cfg
    history = [_sup(fx)]
    steps: List[float] = []
    iteration = 0
    while history[-1] > cfg.newton_tol and iteration < cfg.newton_max_iter:
        iteration += 1
        try:
            jac = problem.jacobian(x, fx)
        except IntegrationError as e:
            logger.warning(f"Jacobian 積分失敗: {e}")
            break
        # Jacobian 在零協態附近可能奇異
        dx = np.linalg.lstsq(jac, -fx, rcond=None)[0]
        accepted = _line_search(problem, x, fx, dx)
        if accepted is None:
            accepted = _levenberg_marquardt_step(problem, x, fx, jac)
        if accepted is None:
            logger.warning(f"{problem.model.name}: 第 {iteration} 次迭代線搜尋與 LM 步均失敗，殘差 {history[-1]:.3e}")
            break
        x, fx, alpha = accepted
        history.append(_sup(fx))
        steps.append(alpha)
        logger.info(f"Newton 迭代 {iteration}: 殘差 {history[-1]:.3e} (步長 {alpha:.3g})")
    return _NewtonRun(x, fx, iteration, history, steps)


def _continuation(problem: _ShootingProblem, x0: np.ndarray, f0: np.ndarray) -> Optional[_NewtonRun]:
    """
    終點延拓：從初始猜測實際到達的終點出發，把目標分段移向真正終點，
    每段以前一段的解為起點
    """
    stages = problem.cfg.continuation_stages
    final_target = problem.target
    reached = f0[-problem.m :] + final_target
    x = x0
    iterations = 0
    history: List[float] = []
    steps: List[float] = []
    run: Optional[_NewtonRun] = None
    try:
        for stage in range(1, stages + 1):
            weight = stage / stages
            problem.target = (1.0 - weight) * reached + weight * final_target
            fx = _try_residual(problem, x)
            if fx is None:
                return None
            run = _newton(problem, x, fx)
            iterations += run.iterations
            history.extend(run.history)
            steps.extend(run.steps)
            logger.info(f"延拓第 {stage}/{stages} 段: 殘差 {run.norm:.3e}")
            if run.norm > problem.cfg.newton_tol:
                break
            x = run.x
    finally:
        problem.target = final_target
    if run is None or run.norm > problem.cfg.newton_tol:
        return None
    return _NewtonRun(run.x, run.fx, iterations, history, steps)


def _finalize(problem: _ShootingProblem, x: np.ndarray, result: ShootingResult) -> ShootingResult:
    traj = problem.trajectory(x)
    ex = ExtremalState.unpack(problem.model, traj.states)
    controls = extremal_controls(problem.model, problem.cost, ex)
    running = np.asarray(problem.cost.running_cost(ex.q, ex.y, controls), dtype=float)
    traj.controls = controls
    traj.cost = float(simpson(running, x=traj.times))
    result.cost_trapezoid = float(trapezoid(running, x=traj.times))
    result.cost = traj.cost
    energy = hamiltonian(problem.model, problem.cost, ex)
    result.hamiltonian_drift = float(np.max(np.abs(energy - energy[0])) / max(1.0, abs(float(energy[0]))))
    result.trajectory = traj
    logger.info(
        f"J(Simpson)={result.cost:.12g}, J(梯形)={result.cost_trapezoid:.12g}, "
        f"差={abs(result.cost - result.cost_trapezoid):.3e}, H 漂移={result.hamiltonian_drift:.3e}"
    )
    return result


def shoot(
    model: MechanicalModel,
    cost: CostModel,
    bc: BoundaryConditions,
    cfg: Optional[ShootingConfig] = None,
    checks: Sequence[StateCheck] = (),
) -> ShootingResult:
    """
    以 Newton 法求解初始協態的兩點邊值問題

    coarse_step > 2h 時先在粗網格上求解 (含延拓)，再以其解為起點在 h 網格上
    做少數幾次 Newton 修正；粗網格未收斂即視為不收斂。直接 Newton 停滯時，
    若 continuation_stages > 1 則從同一初始猜測改做終點延拓。

    Returns:
        ShootingResult: 收斂的極值軌跡、初始協態與診斷資料

    Raises:
        ConvergenceError: Newton 停滯，e.result 帶有最佳迭代與殘差歷史
    """
    cfg = cfg or ShootingConfig()
    bc.validate(model)
    checks = [chart_exit_check(model), *checks]
    problem = _ShootingProblem(model, cost, bc, cfg, checks)

    guess = np.zeros(problem.m) if cfg.initial_costate_guess is None else np.asarray(cfg.initial_costate_guess, float)
    if guess.shape != (problem.m,):
        raise InvalidParameterError(f"初始協態猜測長度應為 {problem.m}，實際為 {guess.shape}")

    prior: Optional[_NewtonRun] = None
    if cfg.coarse_step > 2.0 * problem.seg_h and cfg.coarse_step < problem.seg_T:
        coarse = _ShootingProblem(model, cost, bc, replace(cfg, h=cfg.coarse_step), checks)
        prior = _solve(coarse, coarse.initial_guess(guess))
        if prior is None:
            logger.warning(f"{model.name}: 粗網格初始猜測積分失敗，改在 h={problem.seg_h:.3e} 網格上求解")
        elif prior.norm > cfg.newton_tol:
            _fail(problem, prior, "粗網格")
    x0 = prior.x if prior is not None else problem.initial_guess(guess)

    run = _solve(problem, x0)
    if run is None:
        best = ShootingResult(None, x0[: problem.m].copy(), False, 0, float("inf"))
        raise ConvergenceError(f"{model.name}: 初始猜測的打靶積分失敗", best)
    if prior is not None:
        run = _NewtonRun(run.x, run.fx, prior.iterations + run.iterations, prior.history + run.history, prior.steps + run.steps)
    if run.norm > cfg.newton_tol:
        _fail(problem, run, "")
    return _finalize(problem, run.x, _result(problem, run))


def _solve(problem: _ShootingProblem, x0: np.ndarray) -> Optional[_NewtonRun]:
    """直接 Newton，停滯時退回終點延拓；初始猜測無法積分時回傳 None"""
    cfg = problem.cfg
    f0 = _try_residual(problem, x0)
    if f0 is None:
        return None
    logger.info(
        f"{problem.model.name}: 開始打靶 (segments={cfg.segments}, h={problem.seg_h:.3e})，初始殘差 {_sup(f0):.3e}"
    )
    run = _newton(problem, x0, f0)
    if run.norm > cfg.newton_tol and cfg.continuation_stages > 1:
        logger.warning(
            f"{problem.model.name}: 直接 Newton 停滯於 {run.norm:.3e}，改用 {cfg.continuation_stages} 段終點延拓"
        )
        continued = _continuation(problem, x0, f0)
        if continued is not None:
            run = _NewtonRun(
                continued.x,
                continued.fx,
                run.iterations + continued.iterations,
                run.history + continued.history,
                run.steps + continued.steps,
            )
    return run


def _result(problem: _ShootingProblem, run: _NewtonRun) -> ShootingResult:
    return ShootingResult(
        trajectory=None,
        costates=run.x[: problem.m].copy(),
        converged=run.norm <= problem.cfg.newton_tol,
        iterations=run.iterations,
        residual_norm=run.norm,
        residual_history=run.history,
        step_history=run.steps,
    )


def _fail(problem: _ShootingProblem, run: _NewtonRun, stage: str) -> None:
    """在 h 網格上重建最佳迭代後拋出 ConvergenceError"""
    result = _result(problem, run)
    result.converged = False
    try:
        _finalize(problem, run.x, result)
    except NonholonomicError as e:
        logger.debug(f"最佳迭代無法重建軌跡: {e}")
    raise ConvergenceError(
        f"{problem.model.name}: {stage}打靶法在 {run.iterations} 次迭代後停滯，"
        f"殘差 {run.norm:.3e} > {problem.cfg.newton_tol:.1e}",
        result,
    )


def planted_boundary(
    model: MechanicalModel,
    cost: CostModel,
    state0: AdaptedState,
    costates: np.ndarray,
    T: float,
    h: float,
    method: str = "RK4",
) -> BoundaryConditions:
    """由給定初始協態積分極值流，產生以其終點為目標的邊界條件"""
    z0 = np.concatenate([np.asarray(state0.q, float), np.asarray(state0.y, float), np.asarray(costates, float)])
    final = integrate_final(extremal_vector_field(model, cost), z0, T, h, method, [chart_exit_check(model)])
    return BoundaryConditions(state0, AdaptedState(final[: model.n], final[model.n : model.n + model.k]), T)


def monodromy_matrix(
    model: MechanicalModel,
    cost: CostModel,
    z0: np.ndarray,
    T: float,
    h: float,
    method: str = "RK4",
    eps: float = 1e-6,
) -> np.ndarray:
    """時間 T 極值流映射的中央差分 Jacobian"""
    z0 = np.asarray(z0, dtype=float)
    d = len(z0)
    perturb = eps * np.eye(d)
    batch = np.concatenate([z0 + perturb, z0 - perturb], axis=0)
    finals = integrate_final(extremal_vector_field(model, cost), batch, T, h, method, [chart_exit_check(model)])
    return ((finals[:d] - finals[d:]) / (2.0 * eps)).T


def symplectic_form(dim: int) -> np.ndarray:
    half = dim // 2
    omega = np.zeros((dim, dim))
    omega[:half, half:] = np.eye(half)
    omega[half:, :half] = -np.eye(half)
    return omega


def symplectic_defect(monodromy: np.ndarray) -> float:
    """‖JᵀΩJ - Ω‖_∞ (最大元素絕對值)"""
    omega = symplectic_form(monodromy.shape[0])
    return float(np.max(np.abs(monodromy.T @ omega @ monodromy - omega)))


@dataclass
class SweepEntry:
    kappa: float
    converged: bool
    cost: Optional[float] = None
    min_distance: Optional[float] = None
    iterations: int = 0
    residual_norm: Optional[float] = None
    warm_started: bool = False
    error: Optional[str] = None
    result: Optional[ShootingResult] = None


    seed_kappa: Optional[float] = None


def detour_costates(
    model: MechanicalModel,
    cost: CostModel,
    bc: BoundaryConditions,
    cfg: ShootingConfig,
    costates: Sequence[float],
    center: Sequence[float],
    offset: float,
    indices: Tuple[int, int] = (0, 1),
    checks: Sequence[StateCheck] = (),
) -> np.ndarray:
    """
    以最小範數修正初始協態，使軌跡最接近 center 的點沿法向側移 offset

    側移方向取軌跡所在的一側；正好通過 center 時取切向的左法向。
    敏感度以前向差分的各欄一次批次積分求得；積分失敗或敏感度為零時原樣回傳。
    """
    costates = np.asarray(costates, dtype=float)
    m = len(costates)
    head = np.concatenate([np.asarray(bc.state0.q, float), np.asarray(bc.state0.y, float)])
    delta = cfg.fd_step * np.maximum(1.0, np.abs(costates))
    batch = np.concatenate([costates[None, :], costates + np.diag(delta)], axis=0)
    z0 = np.concatenate([np.broadcast_to(head, (m + 1, len(head))), batch], axis=-1)
    try:
        traj = integrate(
            extremal_vector_field(model, cost), z0, bc.T, cfg.h, cfg.method, [chart_exit_check(model), *checks]
        )
    except IntegrationError as e:
        logger.warning(f"{model.name}: 側移敏感度積分失敗，保留原協態: {e}")
        return costates

    planar = traj.states[..., list(indices)]
    base = planar[:, 0]
    center = np.asarray(center, dtype=float)
    i = int(np.argmin(np.linalg.norm(base - center, axis=-1)))
    tangent = base[min(i + 1, len(base) - 1)] - base[max(i - 1, 0)]
    length = float(np.linalg.norm(tangent))
    if length == 0:
        return costates
    normal = np.array([-tangent[1], tangent[0]]) / length
    side = float(np.sign(normal @ (base[i] - center))) or 1.0
    sensitivity = ((planar[i, 1:] - base[i]) @ normal) / delta
    norm2 = float(sensitivity @ sensitivity)
    if norm2 == 0:
        return costates
    shifted = costates + side * offset * sensitivity / norm2
    logger.info(
        f"{model.name}: 最接近點 t={traj.times[i]:.3f} 側移 {offset:.3g}，"
        f"協態修正 {np.max(np.abs(shifted - costates)):.3e}"
    )
    return shifted


def seed_costates(
    model: MechanicalModel,
    cost: CostModel,
    bc: BoundaryConditions,
    cfg: ShootingConfig,
    previous: ShootingResult,
    center: Sequence[float],
) -> np.ndarray:
    """前一個解的協態；其軌跡距 center 小於 warm_start_clearance 時以 cost (前一個解的成本) 先側移"""
    distance = previous.trajectory.min_distance(center)
    if distance >= cfg.warm_start_clearance:
        return np.asarray(previous.costates, dtype=float)
    logger.warning(f"前一個解距障礙中心僅 {distance:.3e}，側移 {cfg.warm_start_clearance:g} 後再暖啟動")
    return detour_costates(model, cost, bc, cfg, previous.costates, center, cfg.warm_start_clearance)


def kappa_continuation(
    model: MechanicalModel,
    cost_family: Callable[[float], CostModel],
    bc: BoundaryConditions,
    cfg: ShootingConfig,
    start_kappa: float,
    start: ShootingResult,
    kappa: float,
    center: Sequence[float],
    check_family: Optional[Callable[[float], Sequence[StateCheck]]] = None,
) -> ShootingResult:
    """
    κ 延拓：從 start_kappa 的解出發，把 κ 分 continuation_stages 段線性移到 kappa

    每段以前一段的解 (必要時側移) 為初始協態；回傳結果的 iterations 為各段總和。

    Raises:
        ConvergenceError: 任一段不收斂
    """
    checks_for = check_family or (lambda value: ())
    stages = cfg.continuation_stages
    previous, previous_kappa = start, start_kappa
    iterations = 0
    for stage in range(1, stages + 1):
        value = start_kappa + (kappa - start_kappa) * stage / stages
        cost = cost_family(value)
        checks = checks_for(value)
        guess = seed_costates(model, cost_family(previous_kappa), bc, cfg, previous, center)
        result = shoot(model, cost, bc, replace(cfg, initial_costate_guess=tuple(guess)), checks)
        iterations += result.iterations
        logger.info(f"κ 延拓第 {stage}/{stages} 段 κ={value:.6g}: 迭代 {result.iterations}, J={result.cost:.10g}")
        previous, previous_kappa = result, value
    previous.iterations = iterations
    return previous


def _entry(kappa: float, result: ShootingResult, center, seed_kappa: Optional[float]) -> SweepEntry:
    return SweepEntry(
        kappa=kappa,
        converged=True,
        cost=result.cost,
        min_distance=result.trajectory.min_distance(center),
        iterations=result.iterations,
        residual_norm=result.residual_norm,
        warm_started=seed_kappa is not None,
        result=result,
        seed_kappa=seed_kappa,
    )


def _failed_entry(kappa: float, error: NonholonomicError, seed_kappa: Optional[float]) -> SweepEntry:
    best = error.result if isinstance(error, ConvergenceError) else None
    return SweepEntry(
        kappa=kappa,
        converged=False,
        iterations=getattr(best, "iterations", 0),
        residual_norm=getattr(best, "residual_norm", None),
        warm_started=seed_kappa is not None,
        error=str(error),
        result=best,
        seed_kappa=seed_kappa,
    )


def _solve_entry(
    model, cost_family, bc, cfg, kappa, center, check_family, seed: Optional[Tuple[float, ShootingResult]]
) -> SweepEntry:
    """
    求解單一 κ；seed = (κ', 解) 時以其協態暖啟動，
    暖啟動失敗則從 κ' 做 κ 延拓
    """
    checks_for = check_family or (lambda value: ())
    cost, checks = cost_family(kappa), checks_for(kappa)
    if seed is None:
        try:
            return _entry(kappa, shoot(model, cost, bc, cfg, checks), center, None)
        except NonholonomicError as e:
            return _failed_entry(kappa, e, None)

    seed_kappa, seed_result = seed
    try:
        guess = seed_costates(model, cost_family(seed_kappa), bc, cfg, seed_result, center)
        result = shoot(model, cost, bc, replace(cfg, initial_costate_guess=tuple(guess)), checks)
        return _entry(kappa, result, center, seed_kappa)
    except NonholonomicError as e:
        logger.warning(f"κ={kappa} 由 κ={seed_kappa} 暖啟動失敗 ({e})，改做 κ 延拓")
    try:
        result = kappa_continuation(model, cost_family, bc, cfg, seed_kappa, seed_result, kappa, center, check_family)
        return _entry(kappa, result, center, seed_kappa)
    except NonholonomicError as e:
        return _failed_entry(kappa, e, seed_kappa)


async def sweep(
    model: MechanicalModel,
    cost_family: Callable[[float], CostModel],
    bc: BoundaryConditions,
    cfg: ShootingConfig,
    kappas: Sequence[float],
    center: Sequence[float],
    jobs: int = 1,
    check_family: Optional[Callable[[float], Sequence[StateCheck]]] = None,
) -> List[SweepEntry]:
    """
    對勢場強度 κ 掃描打靶解

    jobs == 1 時依序求解，每個 κ 以最近一個收斂解暖啟動 (路徑太靠近障礙中心時先側移)，
    暖啟動失敗改做 κ 延拓。jobs > 1 時先冷啟動第一個 κ；其路徑距中心小於
    warm_start_clearance 時其餘 κ 都以它為種子，否則全部冷啟動，再以
    asyncio.to_thread 並行求解。單一 κ 失敗只記錄，不中斷掃描。
    """
    kappas = [float(k) for k in kappas]
    entries: List[SweepEntry] = []
    if not kappas:
        return entries

    if jobs > 1:
        first = await asyncio.to_thread(
            _solve_entry, model, cost_family, bc, cfg, kappas[0], center, check_family, None
        )
        seed = None
        if first.converged and first.min_distance < cfg.warm_start_clearance:
            seed = (first.kappa, first.result)
            logger.info(f"κ={first.kappa} 的路徑距中心 {first.min_distance:.3e}，其餘 κ 以它為種子並行求解")
        semaphore = asyncio.Semaphore(jobs)

        async def run(kappa: float) -> SweepEntry:
            async with semaphore:
                return await asyncio.to_thread(
                    _solve_entry, model, cost_family, bc, cfg, kappa, center, check_family, seed
                )

        entries = [first, *(await asyncio.gather(*(run(k) for k in kappas[1:])))]
    else:
        seed = None
        for kappa in kappas:
            entry = await asyncio.to_thread(
                _solve_entry, model, cost_family, bc, cfg, kappa, center, check_family, seed
            )
            entries.append(entry)
            if entry.converged:
                seed = (entry.kappa, entry.result)

    for entry in entries:
        if entry.converged:
            logger.info(
                f"κ={entry.kappa}: J={entry.cost:.10g}, 最小距離={entry.min_distance:.6g}, 迭代={entry.iterations}"
            )
        else:
            logger.warning(f"κ={entry.kappa} 未收斂: {entry.error}")
    return entries
