import os
import sys
import unittest

import numpy as np

# 將父級目錄添加到路徑中，這樣才能導入應用程序
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core.exceptions import ChartViolationError, InvalidParameterError
from app.models.cvt import CvtParams, cvt, cvt_coefficients, cvt_regularity
from app.models.obstacle import ObstacleParams, navigation_potential, sleigh_with_obstacle
from app.models.sleigh import (
    DEFAULT_CONSTANTS,
    SleighParams,
    chaplygin_sleigh,
    sleigh_analytic_extremal,
    sleigh_extremal_costates,
    sleigh_extremal_initial_state,
    sleigh_regularity,
    zero_multiplier_defects,
)
from app.services.geometry import check_chart
from app.services.invariants import extremal_trajectory
from app.services.ocp import ExtremalState, extremal_controls


class TestSleighModel(unittest.TestCase):
    """測試雪橇模型與零乘子閉式解"""

    def test_parameter_validation(self):
        with self.assertRaises(InvalidParameterError):
            chaplygin_sleigh(SleighParams(m=-1.0))
        with self.assertRaises(InvalidParameterError):
            chaplygin_sleigh(SleighParams(a=0.0))
        model, _ = chaplygin_sleigh(SleighParams(a=0.0), allow_degenerate=True)
        self.assertEqual(model.n, 3)

    def test_b_and_regularity(self):
        params = SleighParams(m=2.0, J=0.5, a=0.5)
        self.assertAlmostEqual(params.b, 1.0)
        self.assertAlmostEqual(sleigh_regularity(params), 1.0)
        self.assertAlmostEqual(sleigh_regularity(SleighParams(m=1.0, J=1.0, a=0.5)), 0.0625)

    def test_rest_extremal(self):
        """常數全為零時停在原點"""
        t = np.linspace(0.0, 1.0, 11)
        closed = sleigh_analytic_extremal((0.0,) * 6, SleighParams(), t)
        for values in closed:
            np.testing.assert_array_equal(values, 0.0)

    def test_straight_line_extremal(self):
        """只有 c8 = m 時 x(t) = t"""
        params = SleighParams(m=1.5)
        t = np.linspace(0.0, 2.0, 21)
        closed = sleigh_analytic_extremal((0.0, 0.0, 0.0, 0.0, 0.0, params.m), params, t)
        np.testing.assert_allclose(closed.x, t, atol=1e-12)
        np.testing.assert_allclose(closed.y, 0.0, atol=1e-15)
        np.testing.assert_allclose(closed.y2, params.m)

    def test_closed_form_matches_integration(self):
        params = SleighParams(m=1.2, J=0.8, a=0.6)
        start = sleigh_extremal_initial_state(DEFAULT_CONSTANTS, params)
        z0 = np.concatenate([start.q, start.y, sleigh_extremal_costates(DEFAULT_CONSTANTS, params)])
        model, cost = chaplygin_sleigh(params)
        traj = extremal_trajectory(model, cost, z0, 1.0, 1e-3)
        closed = sleigh_analytic_extremal(DEFAULT_CONSTANTS, params, traj.times)
        np.testing.assert_allclose(traj.q[:, 0], closed.x, atol=1e-8)
        np.testing.assert_allclose(traj.q[:, 1], closed.y, atol=1e-8)
        np.testing.assert_allclose(traj.q[:, 2], closed.theta, atol=1e-10)
        np.testing.assert_allclose(traj.y[:, 0], closed.y1, atol=1e-10)
        np.testing.assert_allclose(traj.y[:, 1], closed.y2, atol=1e-10)
        np.testing.assert_allclose(traj.p_base[:, :2], 0.0, atol=1e-12)

    def test_closed_form_controls_carry_b(self):
        """u₂ = b(c₃t + c₄)/J；a = 0.5、m = J = 1 時 b = 0.25"""
        params = SleighParams(m=1.0, J=1.0, a=0.5)
        start = sleigh_extremal_initial_state(DEFAULT_CONSTANTS, params)
        z0 = np.concatenate([start.q, start.y, sleigh_extremal_costates(DEFAULT_CONSTANTS, params)])
        model, cost = chaplygin_sleigh(params)
        traj = extremal_trajectory(model, cost, z0, 1.0, 1e-3)
        controls = extremal_controls(model, cost, ExtremalState.unpack(model, traj.states))
        closed = sleigh_analytic_extremal(DEFAULT_CONSTANTS, params, traj.times)
        np.testing.assert_allclose(controls[:, 0], closed.u1, atol=1e-10)
        np.testing.assert_allclose(controls[:, 1], closed.u2, atol=1e-10)
        c3, c4 = DEFAULT_CONSTANTS[:2]
        np.testing.assert_allclose(closed.u2, 0.25 * (c3 * traj.times + c4), atol=1e-15)

    def test_zero_multiplier_defects(self):
        """y₁ 二次、y₂ 一次、u₁ 常值、u₂ 仿射"""
        defects = zero_multiplier_defects(SleighParams(m=1.0, J=1.0, a=0.5))
        self.assertEqual(
            set(defects), {"y1_quadratic", "y2_linear", "u1_constant", "u2_affine", "theta_closed_form"}
        )
        for name, value in defects.items():
            self.assertLessEqual(value, 1e-7, name)

    def test_constant_count(self):
        with self.assertRaises(InvalidParameterError):
            sleigh_analytic_extremal((1.0, 2.0), SleighParams(), np.zeros(1))


class TestCvtModel(unittest.TestCase):
    """測試 CVT 模型"""

    def test_coefficients(self):
        params = CvtParams(m=1.0, J1=1.0, J2=1.0)
        a_coef, b_coef = cvt_coefficients(params, 0.3)
        self.assertAlmostEqual(float(a_coef), 0.4)
        self.assertAlmostEqual(float(b_coef), 0.58)
        self.assertAlmostEqual(float(cvt_regularity(params, 0.5)), 0.25)

    def test_coefficient_derivatives(self):
        """A' = -J₁ - J₂，B' = -2A"""
        params = CvtParams(m=1.0, J1=0.7, J2=1.9)
        x, h = 0.4, 1e-6
        a_plus, b_plus = cvt_coefficients(params, x + h)
        a_minus, b_minus = cvt_coefficients(params, x - h)
        a_coef, _ = cvt_coefficients(params, x)
        self.assertAlmostEqual(float((a_plus - a_minus) / (2 * h)), -(params.J1 + params.J2), places=7)
        self.assertAlmostEqual(float((b_plus - b_minus) / (2 * h)), float(-2.0 * a_coef), places=7)

    def test_chart_guard(self):
        model, _ = cvt(CvtParams())
        inside = model.in_chart(np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [9.0, -9.0, 0.999]]))
        np.testing.assert_array_equal(inside, [True, False, False, True])
        with self.assertRaises(ChartViolationError):
            check_chart(model, np.array([0.0, 0.0, 1.2]))

    def test_sampling_stays_in_chart(self):
        model, _ = cvt(CvtParams())
        q = model.sample_chart(np.random.default_rng(0), 200)
        self.assertTrue(np.all(model.in_chart(q)))

    def test_parameter_validation(self):
        with self.assertRaises(InvalidParameterError):
            cvt(CvtParams(J1=0.0))


class TestObstacle(unittest.TestCase):
    """測試導航勢與障礙成本"""

    def test_zero_kappa_is_plain_quadratic(self):
        cost = sleigh_with_obstacle(SleighParams(), ObstacleParams(kappa=0.0))
        self.assertIsNone(cost.potential_term)
        self.assertTrue(cost.quadratic)

    def test_potential_values(self):
        potential, gradient = navigation_potential(ObstacleParams(kappa=0.5, center=(1.0, 2.0)))
        q = np.array([[1.0, 3.0, 0.4], [3.0, 2.0, -1.0]])
        np.testing.assert_allclose(potential(q), [0.5, 0.125])
        np.testing.assert_allclose(gradient(q), [[0.0, -1.0, 0.0], [-0.125, 0.0, 0.0]])

    def test_gradient_matches_difference(self):
        potential, gradient = navigation_potential(ObstacleParams(kappa=0.3, center=(0.5, -0.2)))
        q = np.array([0.1, 0.4, 0.7])
        h = 1e-6
        numeric = [(potential(q + h * e) - potential(q - h * e)) / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(gradient(q), numeric, atol=1e-7)

    def test_cost_includes_half_potential(self):
        cost = sleigh_with_obstacle(SleighParams(), ObstacleParams(kappa=1.0, center=(0.0, 0.0)))
        q = np.array([1.0, 0.0, 0.0])
        value = cost.running_cost(q, np.zeros(2), np.array([1.0, 1.0]))
        self.assertAlmostEqual(float(value), 1.0 + 0.5)

    def test_invalid_parameters(self):
        with self.assertRaises(InvalidParameterError):
            sleigh_with_obstacle(SleighParams(), ObstacleParams(kappa=-0.1))
        with self.assertRaises(InvalidParameterError):
            sleigh_with_obstacle(SleighParams(), ObstacleParams(kappa=0.1, center=(0.0, 0.0, 0.0)))


if __name__ == '__main__':
    unittest.main()
