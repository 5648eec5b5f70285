"""
執行組態 (RunConfig)
單一 JSON 文件，以 pydantic 驗證；所有物理參數都必須明確列出
"""

import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, validator

from app.core.config import settings
from app.core.exceptions import ConfigError, NonholonomicError
from app.models.cvt import CvtParams, cvt
from app.models.obstacle import ObstacleParams, collision_check, sleigh_with_obstacle
from app.models.sleigh import SleighParams, chaplygin_sleigh
from app.services.geometry import AdaptedState, MechanicalModel
from app.services.ocp import CostModel
from app.services.solver import BoundaryConditions, IntegrationMethod, ShootingConfig

logger = logging.getLogger(__name__)


class SleighModelConfig(BaseModel):
    kind: Literal["sleigh"]
    m: float = Field(..., gt=0)
    J: float = Field(..., gt=0)
    # a = 0 只允許用於正則性檢查的退化示範
    a: float = Field(..., ge=0)


class CvtModelConfig(BaseModel):
    kind: Literal["cvt"]
    m: float = Field(..., gt=0)
    J1: float = Field(..., gt=0)
    J2: float = Field(..., gt=0)


class ObstacleConfig(BaseModel):
    kappa: float = Field(..., ge=0)
    center: Tuple[float, float]


class StateConfig(BaseModel):
    q: List[float]
    y: List[float]


class BoundaryConfig(BaseModel):
    T: float = Field(..., gt=0)
    state0: StateConfig
    stateT: Optional[StateConfig] = None


class SolverConfig(BaseModel):
    h: float = Field(default_factory=lambda: settings.DEFAULT_STEP, gt=0)
    method: IntegrationMethod = Field(default_factory=lambda: IntegrationMethod(settings.DEFAULT_METHOD))
    newton_tol: float = Field(default_factory=lambda: settings.NEWTON_TOL, gt=0)
    newton_max_iter: int = Field(default_factory=lambda: settings.NEWTON_MAX_ITER, ge=1)
    fd_step: float = Field(default_factory=lambda: settings.FD_STEP, gt=0)
    damping: float = Field(default_factory=lambda: settings.LINE_SEARCH_FACTOR, gt=0, lt=1)
    min_step: float = Field(default_factory=lambda: settings.MIN_LINE_SEARCH_STEP, gt=0, le=1)
    segments: int = Field(1, ge=1)
    initial_costate_guess: Optional[List[float]] = None
    warm_start_clearance: float = Field(default_factory=lambda: settings.WARM_START_CLEARANCE, ge=0)
    continuation_stages: int = Field(default_factory=lambda: settings.CONTINUATION_STAGES, ge=1)
    coarse_step: float = Field(default_factory=lambda: settings.COARSE_STEP, ge=0)


class OutputConfig(BaseModel):
    dir: Optional[str] = None
    write_csv: bool = True
    write_json: bool = True


class SimulateConfig(BaseModel):
    # 常值控制輸入，省略時為自由運動
    u: Optional[List[float]] = None


class RunConfig(BaseModel):
    model: Union[SleighModelConfig, CvtModelConfig] = Field(..., discriminator="kind")
    obstacle: Optional[ObstacleConfig] = None
    bc: BoundaryConfig
    solver: SolverConfig = Field(default_factory=SolverConfig)
    outputs: OutputConfig = Field(default_factory=OutputConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)
    kappas: Optional[List[float]] = None

    @validator("obstacle")
    def obstacle_only_for_sleigh(cls, value, values):
        model = values.get("model")
        if value is not None and model is not None and model.kind != "sleigh":
            raise ValueError("障礙物只適用於雪橇模型")
        return value

    @validator("kappas", each_item=True)
    def kappa_non_negative(cls, value):
        if value < 0:
            raise ValueError("κ 必須非負")
        return value

    def build_model(self, allow_degenerate: bool = False) -> Tuple[MechanicalModel, CostModel]:
        model_cfg = self.model
        if model_cfg.kind == "sleigh":
            params = SleighParams(m=model_cfg.m, J=model_cfg.J, a=model_cfg.a)
            model, cost = chaplygin_sleigh(params, allow_degenerate=allow_degenerate)
            if self.obstacle is not None:
                cost = sleigh_with_obstacle(params, self.obstacle_params())
            return model, cost
        return cvt(CvtParams(m=model_cfg.m, J1=model_cfg.J1, J2=model_cfg.J2))

    def obstacle_params(self, kappa: Optional[float] = None) -> ObstacleParams:
        base = self.obstacle or ObstacleConfig(kappa=0.0, center=(0.5, 0.5))
        return ObstacleParams(kappa=base.kappa if kappa is None else float(kappa), center=tuple(base.center))

    def cost_for_kappa(self, kappa: float) -> CostModel:
        model_cfg = self.model
        params = SleighParams(m=model_cfg.m, J=model_cfg.J, a=model_cfg.a)
        return sleigh_with_obstacle(params, self.obstacle_params(kappa))

    def checks_for_kappa(self, kappa: float):
        return [collision_check(self.obstacle_params(kappa))]

    def state0(self) -> AdaptedState:
        return AdaptedState(np.array(self.bc.state0.q, dtype=float), np.array(self.bc.state0.y, dtype=float))

    def boundary_conditions(self) -> BoundaryConditions:
        if self.bc.stateT is None:
            raise ConfigError("此指令需要 bc.stateT")
        target = AdaptedState(np.array(self.bc.stateT.q, dtype=float), np.array(self.bc.stateT.y, dtype=float))
        return BoundaryConditions(self.state0(), target, self.bc.T)

    def shooting_config(self) -> ShootingConfig:
        data = self.solver.dict()
        data["method"] = self.solver.method.value
        guess = data.pop("initial_costate_guess")
        return ShootingConfig(initial_costate_guess=None if guess is None else tuple(guess), **data)

    def sweep_kappas(self) -> List[float]:
        return list(self.kappas) if self.kappas is not None else list(settings.SWEEP_KAPPAS)


def load_run_config(path: Optional[str] = None, preset: Optional[str] = None) -> RunConfig:
    """
    讀取組態檔或預設組態

    Raises:
        ConfigError: 檔案不存在、JSON 錯誤或驗證失敗
    """
    if preset is not None:
        if preset not in settings.PRESETS:
            raise ConfigError(f"未知的預設組態: {preset}，可用: {sorted(settings.PRESETS)}")
        data = json.loads(json.dumps(settings.PRESETS[preset]))
        if path is not None:
            logger.warning(f"同時指定 --preset 與 --config，以預設組態 {preset} 為準")
    elif path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"無法讀取組態檔 {path}: {e}") from e
    else:
        raise ConfigError("必須提供 --config 或 --preset")

    try:
        config = RunConfig.parse_obj(data)
        # 及早驗證模型參數與邊界維度
        model, _ = config.build_model(allow_degenerate=True)
        for label, state in (("state0", config.bc.state0), ("stateT", config.bc.stateT)):
            if state is not None and (len(state.q) != model.n or len(state.y) != model.k):
                raise ConfigError(f"bc.{label} 維度應為 q:{model.n}, y:{model.k}")
        if config.solver.initial_costate_guess is not None and len(config.solver.initial_costate_guess) != model.n + model.k:
            raise ConfigError(f"solver.initial_costate_guess 長度應為 {model.n + model.k}")
    except ValidationError as e:
        raise ConfigError(f"組態驗證失敗: {e}") from e
    except ConfigError:
        raise
    except NonholonomicError as e:
        raise ConfigError(f"組態參數不合法: {e}") from e
    return config
