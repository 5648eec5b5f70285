import os
from typing import Dict, List, Any, Optional
from dotenv import load_dotenv

# 載入.env檔案中的環境變數
load_dotenv()


def _float_list(raw: str) -> List[float]:
    return [float(item) for item in raw.split(",") if item.strip()]


class Settings:
    # 基本設定
    PROJECT_NAME: str = "nhoc"
    PROJECT_VERSION: str = "0.1.0"
    DESCRIPTION: str = "非完整約束力學系統的模擬與最優控制數值工具"
    SCHEMA_VERSION: int = 1

    # 日誌設定
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"

    # 輸出路徑設定
    OUTPUT_DIR: str = os.getenv("NHOC_OUTPUT_DIR", "./data/output")

    # 積分器設定
    DEFAULT_STEP: float = float(os.getenv("DEFAULT_STEP", "1e-3"))
    DEFAULT_METHOD: str = os.getenv("DEFAULT_METHOD", "RK4")

    # 打靶法 (shooting) 設定
    NEWTON_TOL: float = float(os.getenv("NEWTON_TOL", "1e-10"))
    NEWTON_MAX_ITER: int = int(os.getenv("NEWTON_MAX_ITER", "40"))
    FD_STEP: float = float(os.getenv("FD_STEP", "1e-6"))
    LINE_SEARCH_FACTOR: float = float(os.getenv("LINE_SEARCH_FACTOR", "0.5"))
    MIN_LINE_SEARCH_STEP: float = float(os.getenv("MIN_LINE_SEARCH_STEP", "1e-6"))
    WARM_START_CLEARANCE: float = float(os.getenv("WARM_START_CLEARANCE", "0.05"))
    CONTINUATION_STAGES: int = int(os.getenv("CONTINUATION_STAGES", "4"))
    # 粗網格步長；0 或不大於 2h 時直接在 h 網格上求解
    COARSE_STEP: float = float(os.getenv("COARSE_STEP", "1e-2"))

    # κ 掃描設定 (預設取自障礙物迴避範例)
    SWEEP_KAPPAS: List[float] = _float_list(os.getenv("SWEEP_KAPPAS", "0,0.01,0.1,0.25,0.5"))
    DEFAULT_JOBS: int = int(os.getenv("DEFAULT_JOBS", "1"))
    # 最小距離大於此值才視為已繞開障礙
    OBSTACLE_CLEARANCE: float = float(os.getenv("OBSTACLE_CLEARANCE", "0.05"))

    # 不變量檢查設定
    CHECK_SAMPLES: int = int(os.getenv("CHECK_SAMPLES", "100"))
    RANDOM_SEED: int = int(os.getenv("RANDOM_SEED", "20240517"))

    # 預設組態 (--preset)，所有物理參數皆明確列出
    PRESETS: Dict[str, Dict[str, Any]] = {
        "sleigh-obstacle": {
            "model": {"kind": "sleigh", "m": 1.0, "J": 1.0, "a": 0.5},
            "obstacle": {"kappa": 0.25, "center": [0.5, 0.5]},
            "bc": {
                "T": 1.0,
                "state0": {"q": [0.0, 0.0, 0.0], "y": [0.0, 0.0]},
                "stateT": {"q": [1.0, 1.0, 0.0], "y": [0.0, 0.0]},
            },
            "solver": {"h": 1e-3, "method": "RK4"},
            "kappas": [0.0, 0.01, 0.1, 0.25, 0.5],
        },
        "cvt-shift": {
            "model": {"kind": "cvt", "m": 1.0, "J1": 1.0, "J2": 1.0},
            "bc": {
                "T": 1.0,
                "state0": {"q": [0.0, 0.0, 0.3], "y": [0.02, 0.5]},
                "stateT": {"q": [0.6, 0.3, 0.45], "y": [0.1, 0.4]},
            },
            "solver": {"h": 1e-3, "method": "RK4"},
        },
    }
    # 參考障礙物迴避資料的別名
    PRESETS["paper-sleigh"] = PRESETS["sleigh-obstacle"]


# 實例化設定
settings = Settings()
