"""
例外類別
所有服務層拋出的錯誤都繼承自 NonholonomicError，CLI 依類別決定結束碼
"""

from typing import Any, Optional

import numpy as np


class NonholonomicError(Exception):
    """工具包的基礎錯誤類別"""


class InvalidParameterError(NonholonomicError, ValueError):
    """模型或成本參數違反其不變量"""


class ConfigError(NonholonomicError):
    """執行組態無法解析或驗證失敗"""


class ChartViolationError(NonholonomicError):
    """座標點不在模型宣告的座標卡範圍內"""

    def __init__(self, q: Any, model_name: str = ""):
        self.q = np.asarray(q, dtype=float)
        self.model_name = model_name
        super().__init__(f"{model_name or 'model'}: q={self.q.tolist()} 超出座標卡範圍")


class SingularMetricError(NonholonomicError):
    """G^D 非對稱正定 (ρ 秩不足或度量非正定)"""


class LegendreInversionError(NonholonomicError):
    """Legendre 變換無法反解 (Hessian 奇異或 Newton 不收斂)"""


class IntegrationError(NonholonomicError):
    """積分過程中狀態出現非有限值"""

    def __init__(self, message: str, time: float, state: Optional[np.ndarray] = None):
        self.time = float(time)
        self.state = None if state is None else np.array(state, dtype=float)
        super().__init__(f"{message} (t={self.time:.6g})")


class ChartExitError(IntegrationError):
    """軌跡在積分途中離開座標卡"""


class ObstacleCollisionError(IntegrationError):
    """軌跡通過導航勢函數的奇異中心"""

    def __init__(self, message: str, time: float, distance: float, state: Optional[np.ndarray] = None):
        self.distance = float(distance)
        super().__init__(message, time, state)


class ConvergenceError(NonholonomicError):
    """打靶法停滯；result 保留最佳迭代與殘差歷史"""

    def __init__(self, message: str, result: Any = None):
        self.result = result
        super().__init__(message)
