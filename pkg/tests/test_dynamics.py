import os
import sys
import unittest

import numpy as np

# 將父級目錄添加到路徑中，這樣才能導入應用程序
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core.exceptions import ChartExitError, InvalidParameterError
from app.models.cvt import CvtParams, cvt, cvt_coefficients
from app.models.sleigh import SleighParams, chaplygin_sleigh
from app.services.dynamics import (
    admissibility_residual,
    controlled_rhs,
    free_rhs,
    integrate_free,
    inverse_dynamics,
)
from app.services.geometry import AdaptedState, ControlMode, mechanical_energy
from app.services.invariants import admissibility_defect, energy_drift
from app.services.solver import Trajectory
from tests.model_factory import random_model


class TestAdmissibility(unittest.TestCase):
    """測試速度可容許性殘差"""

    def setUp(self):
        self.model, _ = chaplygin_sleigh(SleighParams(m=1.0, J=1.0, a=0.5))

    def test_admissible_velocity(self):
        q = np.array([0.0, 0.0, 0.0])
        y = np.array([0.0, 1.0])
        np.testing.assert_array_equal(admissibility_residual(self.model, q, y, np.array([1.0, 0.0, 0.0])), 0.0)

    def test_rest(self):
        q = np.array([0.3, 0.2, 1.0])
        residual = admissibility_residual(self.model, q, np.zeros(2), np.zeros(3))
        np.testing.assert_array_equal(residual, np.zeros(3))

    def test_lateral_slip_detected(self):
        """θ = π/2 時沿 x 方向運動違反約束"""
        y = np.array([0.2, 0.3])
        residual = admissibility_residual(self.model, np.array([0.0, 0.0, np.pi / 2]), y, np.array([1.0, 0.0, 0.0]))
        np.testing.assert_allclose(residual, [1.0, -0.3, -0.2], atol=1e-15)

    def test_shape_mismatch(self):
        with self.assertRaises(InvalidParameterError):
            admissibility_residual(self.model, np.zeros(3), np.zeros(3), np.zeros(3))


class TestFreeDynamics(unittest.TestCase):
    """測試自由非完整方程"""

    def test_sleigh_free_acceleration_vanishes(self):
        """雪橇自由運動 ẏ = 0"""
        model, _ = chaplygin_sleigh(SleighParams(m=1.4, J=0.6, a=0.8))
        rng = np.random.default_rng(0)
        q = rng.uniform(-1.0, 1.0, size=(10, 3))
        y = rng.normal(size=(10, 2))
        qdot, ydot = free_rhs(model, AdaptedState(q, y))
        np.testing.assert_allclose(ydot, 0.0, atol=1e-14)
        np.testing.assert_allclose(admissibility_residual(model, q, y, qdot), 0.0, atol=1e-15)

    def test_cvt_example(self):
        """CVT：x = 0.3、y = (0.7, -0.2) 時 ẏ₂ = -0.0965517…"""
        model, _ = cvt(CvtParams(m=1.0, J1=1.0, J2=1.0))
        qdot, ydot = free_rhs(model, AdaptedState(np.array([0.0, 0.0, 0.3]), np.array([0.7, -0.2])))
        self.assertAlmostEqual(ydot[0], 0.0, places=14)
        self.assertAlmostEqual(ydot[1], -0.056 / 0.58, places=12)
        np.testing.assert_allclose(qdot, [0.7 * -0.2, 0.3 * -0.2, 0.7], atol=1e-15)

    def test_rest_is_equilibrium_without_potential(self):
        model = random_model(seed=12, with_potential=False)
        qdot, ydot = free_rhs(model, AdaptedState(np.array([0.3, -0.4, 0.1]), np.zeros(2)))
        np.testing.assert_array_equal(qdot, np.zeros(3))
        np.testing.assert_allclose(ydot, 0.0, atol=1e-15)


class TestControlledDynamics(unittest.TestCase):
    """測試受控方程與逆動力學"""

    def test_zero_control_matches_free(self):
        for model in (random_model(seed=1), chaplygin_sleigh(SleighParams())[0], cvt(CvtParams())[0]):
            state = AdaptedState(np.array([0.1, 0.2, 0.4]), np.array([0.3, -0.5]))
            free = free_rhs(model, state)
            controlled = controlled_rhs(model, state, np.zeros(2))
            np.testing.assert_array_equal(free[0], controlled[0])
            np.testing.assert_array_equal(free[1], controlled[1])

    def test_sleigh_euler_lagrange_inputs(self):
        """雪橇：ẏ₁ = J u₂ / b，ẏ₂ = m u₁"""
        params = SleighParams(m=1.5, J=0.8, a=0.6)
        model, _ = chaplygin_sleigh(params)
        u = np.array([0.4, -1.1])
        _, ydot = controlled_rhs(model, AdaptedState(np.array([0.0, 0.0, 0.9]), np.array([0.2, 0.1])), u)
        np.testing.assert_allclose(ydot, [params.J * u[1] / params.b, params.m * u[0]], atol=1e-13)

    def test_sleigh_inverse_example(self):
        """b = 0.5、J = 1：ẏ = (2, 0) 需要 u₂ = 1"""
        params = SleighParams(m=1.0, J=1.0, a=np.sqrt(0.5))
        model, _ = chaplygin_sleigh(params)
        u = inverse_dynamics(model, np.zeros(3), np.zeros(2), np.array([2.0, 0.0]))
        np.testing.assert_allclose(u, [0.0, 1.0], atol=1e-12)

    def test_cvt_euler_lagrange_inputs(self):
        """CVT：ẏ₁ = m u₂，ẏ₂ = (u₁ + y₁ y₂ A / m) / B"""
        params = CvtParams(m=1.2, J1=0.9, J2=1.4)
        model, _ = cvt(params)
        x, y, u = 0.35, np.array([0.3, -0.6]), np.array([0.7, 0.2])
        _, ydot = controlled_rhs(model, AdaptedState(np.array([0.0, 0.0, x]), y), u)
        a_coef, b_coef = cvt_coefficients(params, x)
        expected = [params.m * u[1], (u[0] + y[0] * y[1] * a_coef / params.m) / b_coef]
        np.testing.assert_allclose(ydot, expected, atol=1e-13)

    def test_free_acceleration_needs_no_control(self):
        model = random_model(seed=14)
        state = AdaptedState(np.array([0.2, 0.1, -0.3]), np.array([0.5, 0.4]))
        _, ydot = free_rhs(model, state)
        np.testing.assert_allclose(inverse_dynamics(model, state.q, state.y, ydot), 0.0, atol=1e-12)

    def test_round_trip_both_modes(self):
        """inverse_dynamics(controlled_rhs(u)) = u"""
        rng = np.random.default_rng(15)
        for mode in (ControlMode.NORMALIZED, ControlMode.EULER_LAGRANGE):
            model = random_model(seed=15, mode=mode)
            for _ in range(5):
                q = rng.uniform(-1.0, 1.0, size=3)
                y = rng.normal(size=2)
                u = rng.normal(size=2)
                _, ydot = controlled_rhs(model, AdaptedState(q, y), u)
                np.testing.assert_allclose(inverse_dynamics(model, q, y, ydot), u, atol=1e-10)

    def test_control_dimension_checked(self):
        model, _ = chaplygin_sleigh(SleighParams())
        with self.assertRaises(InvalidParameterError):
            controlled_rhs(model, AdaptedState(np.zeros(3), np.zeros(2)), np.zeros(3))


class TestIntegrateFree(unittest.TestCase):
    """測試自由動力學積分"""

    def test_straight_line(self):
        """雪橇 θ = 0、y₂ = m：x(t) = t"""
        params = SleighParams(m=2.0, J=1.0, a=0.5)
        model, _ = chaplygin_sleigh(params)
        traj = integrate_free(model, AdaptedState(np.zeros(3), np.array([0.0, 2.0])), 1.0, 1e-2)
        np.testing.assert_allclose(traj.q[:, 0], traj.times, atol=1e-12)
        np.testing.assert_allclose(traj.q[:, 1:], 0.0, atol=1e-15)
        self.assertEqual(traj.kind, "adapted")
        self.assertEqual(len(traj.times), 101)

    def test_pure_rotation(self):
        """雪橇 y₁ = J、y₂ = 0：θ(t) = t，位置不變"""
        params = SleighParams(m=1.0, J=1.5, a=0.5)
        model, _ = chaplygin_sleigh(params)
        traj = integrate_free(model, AdaptedState(np.zeros(3), np.array([1.5, 0.0])), 1.0, 1e-2)
        np.testing.assert_allclose(traj.q[:, 2], traj.times, atol=1e-12)
        np.testing.assert_allclose(traj.q[:, :2], 0.0, atol=1e-15)

    def test_rest_stays_at_rest(self):
        model, _ = cvt(CvtParams())
        start = AdaptedState(np.array([0.1, 0.2, 0.4]), np.zeros(2))
        traj = integrate_free(model, start, 1.0, 1e-2)
        np.testing.assert_allclose(traj.states, np.broadcast_to(traj.states[0], traj.states.shape), atol=1e-15)

    def test_energy_conservation(self):
        """T = 10、h = 1e-3 的 RK4 相對能量漂移 ≤ 1e-9"""
        sleigh, _ = chaplygin_sleigh(SleighParams(m=1.2, J=0.7, a=0.4))
        traj = integrate_free(sleigh, AdaptedState(np.array([0.0, 0.0, 0.3]), np.array([0.8, -0.5])), 10.0, 1e-3)
        self.assertLessEqual(energy_drift(sleigh, traj), 1e-9)

        transmission, _ = cvt(CvtParams(m=1.0, J1=1.0, J2=1.0))
        traj = integrate_free(transmission, AdaptedState(np.array([0.0, 0.0, 0.3]), np.array([0.02, 0.5])), 10.0, 1e-3)
        self.assertLessEqual(energy_drift(transmission, traj), 1e-9)

    def test_energy_drift_near_rest(self):
        """近靜止時能量漂移為絕對量，不會被極小的初始能量放大"""
        model, _ = chaplygin_sleigh(SleighParams())
        states = np.zeros((3, 5))
        states[:, 3] = [1e-6, 2e-6, 1e-6]
        traj = Trajectory(times=np.linspace(0.0, 1.0, 3), states=states, n=3, k=2)
        energy = mechanical_energy(model, traj.q, traj.y)
        self.assertGreater(energy[1], 2.0 * energy[0])
        self.assertAlmostEqual(energy_drift(model, traj), float(energy[1] - energy[0]), places=20)
        self.assertLessEqual(energy_drift(model, traj), 1e-11)

    def test_potential_energy_conservation(self):
        """帶位能的隨機模型 (差分導數)：動能加位能守恆"""
        model = random_model(seed=16)
        traj = integrate_free(model, AdaptedState(np.array([0.1, 0.0, -0.2]), np.array([0.3, 0.1])), 2.0, 1e-3)
        energy = mechanical_energy(model, traj.q, traj.y)
        self.assertLessEqual(float(np.max(np.abs(energy - energy[0]))), 1e-8)

    def test_admissibility_is_second_order(self):
        """差分可容許性殘差隨 h 以約 4 倍縮小"""
        model, _ = chaplygin_sleigh(SleighParams())
        start = AdaptedState(np.zeros(3), np.array([1.0, 0.8]))
        coarse = admissibility_defect(model, integrate_free(model, start, 1.0, 1e-2))
        fine = admissibility_defect(model, integrate_free(model, start, 1.0, 5e-3))
        self.assertLess(fine, 1e-3)
        self.assertGreater(coarse / fine, 3.0)
        self.assertLess(coarse / fine, 5.0)

    def test_chart_exit(self):
        """CVT 從 x = 0.999 以 ẋ > 0 出發，很快離開座標卡"""
        model, _ = cvt(CvtParams(m=1.0, J1=1.0, J2=1.0))
        with self.assertRaises(ChartExitError) as ctx:
            integrate_free(model, AdaptedState(np.array([0.0, 0.0, 0.999]), np.array([0.5, 0.0])), 1.0, 1e-3)
        self.assertLessEqual(ctx.exception.time, 0.01)

    def test_invalid_step(self):
        model, _ = chaplygin_sleigh(SleighParams())
        with self.assertRaises(InvalidParameterError):
            integrate_free(model, AdaptedState(np.zeros(3), np.zeros(2)), 1.0, 2.0)
        with self.assertRaises(InvalidParameterError):
            integrate_free(model, AdaptedState(np.zeros(3), np.zeros(2)), 0.0, 1e-3)


if __name__ == '__main__':
    unittest.main()
