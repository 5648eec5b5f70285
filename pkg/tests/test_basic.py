import os
import sys
import unittest

import numpy as np

# 將父級目錄添加到路徑中，這樣才能導入應用程序
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core.config import settings
from app.core.exceptions import (
    ChartExitError,
    ChartViolationError,
    ConfigError,
    ConvergenceError,
    IntegrationError,
    InvalidParameterError,
    NonholonomicError,
    ObstacleCollisionError,
)
from app.services.solver import IntegrationMethod


class TestBasicFunctionality(unittest.TestCase):
    """測試應用程序的基本設定與錯誤類別"""

    def test_settings_defaults(self):
        """數值預設值合理"""
        self.assertGreater(settings.DEFAULT_STEP, 0)
        self.assertIn(settings.DEFAULT_METHOD, {m.value for m in IntegrationMethod})
        self.assertGreater(settings.NEWTON_TOL, 0)
        self.assertGreaterEqual(settings.NEWTON_MAX_ITER, 1)
        self.assertGreaterEqual(settings.CONTINUATION_STAGES, 1)
        self.assertTrue(0 < settings.LINE_SEARCH_FACTOR < 1)
        self.assertEqual(settings.SCHEMA_VERSION, 1)
        self.assertGreaterEqual(settings.COARSE_STEP, 0)
        self.assertGreater(settings.OBSTACLE_CLEARANCE, 0)

    def test_reference_preset_alias(self):
        """--preset paper-sleigh 指向障礙物迴避組態"""
        self.assertEqual(settings.PRESETS["paper-sleigh"], settings.PRESETS["sleigh-obstacle"])

    def test_presets_are_explicit(self):
        """每個預設組態都列出模型、邊界條件與求解器"""
        for name, preset in settings.PRESETS.items():
            with self.subTest(preset=name):
                self.assertIn(preset["model"]["kind"], {"sleigh", "cvt"})
                self.assertIn("T", preset["bc"])
                self.assertIn("stateT", preset["bc"])
                self.assertIn("h", preset["solver"])

    def test_sweep_kappas_sorted(self):
        kappas = settings.SWEEP_KAPPAS
        self.assertEqual(kappas, sorted(kappas))
        self.assertTrue(all(k >= 0 for k in kappas))

    def test_exception_hierarchy(self):
        """所有錯誤都可被 NonholonomicError 捕捉"""
        for cls in (ConfigError, InvalidParameterError, ConvergenceError, IntegrationError):
            self.assertTrue(issubclass(cls, NonholonomicError))
        self.assertTrue(issubclass(InvalidParameterError, ValueError))
        self.assertTrue(issubclass(ChartExitError, IntegrationError))
        self.assertTrue(issubclass(ObstacleCollisionError, IntegrationError))

    def test_exception_payloads(self):
        err = ObstacleCollisionError("碰撞", 0.5, 1e-7, np.zeros(3))
        self.assertEqual(err.time, 0.5)
        self.assertEqual(err.distance, 1e-7)
        self.assertIn("t=0.5", str(err))

        chart = ChartViolationError([0.0, 0.0, 1.5], "cvt")
        self.assertEqual(chart.model_name, "cvt")
        self.assertEqual(chart.q.tolist(), [0.0, 0.0, 1.5])

        best = object()
        self.assertIs(ConvergenceError("停滯", best).result, best)


if __name__ == '__main__':
    unittest.main()
