import asyncio
import csv
import io
import json
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# 將父級目錄添加到路徑中，這樣才能導入應用程序
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.cli import commands
from app.cli.schemas import load_run_config
from app.core.config import settings
from app.core.exceptions import ConfigError
from app.data_processing import trajectory_io
from app.main import build_parser, main
from app.models.cvt import CvtParams, cvt, cvt_regularity
from app.models.sleigh import SleighParams, chaplygin_sleigh
from app.services.dynamics import integrate_free
from app.services.geometry import AdaptedState
from app.services.invariants import run_invariant_suite
from app.services.solver import ShootingResult, Trajectory


def sleigh_config(**overrides):
    config = {
        "model": {"kind": "sleigh", "m": 1.0, "J": 1.0, "a": 0.5},
        "bc": {
            "T": 1.0,
            "state0": {"q": [0.0, 0.0, 0.0], "y": [0.3, 0.5]},
            "stateT": {"q": [1.0, 0.0, 0.0], "y": [0.0, 0.0]},
        },
        "solver": {"h": 1e-2, "method": "RK4"},
    }
    config.update(overrides)
    return config


def write_config(directory, payload):
    path = Path(directory) / "run.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


class TestRunConfig(unittest.TestCase):
    """測試執行組態的讀取與驗證"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def load(self, payload):
        return load_run_config(write_config(self.tmp.name, payload))

    def test_presets(self):
        sleigh = load_run_config(preset="sleigh-obstacle")
        self.assertEqual(sleigh.model.kind, "sleigh")
        self.assertEqual(sleigh.obstacle.kappa, 0.25)
        self.assertEqual(sleigh.sweep_kappas(), [0.0, 0.01, 0.1, 0.25, 0.5])
        transmission = load_run_config(preset="cvt-shift")
        model, _ = transmission.build_model()
        self.assertEqual(model.name, "cvt")

    def test_reference_preset_alias(self):
        """paper-sleigh 與 sleigh-obstacle 內容相同"""
        alias = load_run_config(preset="paper-sleigh")
        self.assertEqual(alias.dict(), load_run_config(preset="sleigh-obstacle").dict())
        self.assertEqual(alias.obstacle.center, (0.5, 0.5))
        self.assertEqual(alias.bc.stateT.q, [1.0, 1.0, 0.0])

    def test_unknown_preset(self):
        with self.assertRaises(ConfigError):
            load_run_config(preset="nope")

    def test_missing_source(self):
        with self.assertRaises(ConfigError):
            load_run_config()
        with self.assertRaises(ConfigError):
            load_run_config(os.path.join(self.tmp.name, "missing.json"))

    def test_malformed_json(self):
        path = Path(self.tmp.name) / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_run_config(str(path))

    def test_invalid_values(self):
        with self.assertRaises(ConfigError):
            self.load(sleigh_config(model={"kind": "sleigh", "m": -1.0, "J": 1.0, "a": 0.5}))
        with self.assertRaises(ConfigError):
            self.load(sleigh_config(model={"kind": "boat", "m": 1.0}))
        with self.assertRaises(ConfigError):
            self.load(sleigh_config(kappas=[0.1, -0.2]))

    def test_obstacle_requires_sleigh(self):
        payload = sleigh_config(model={"kind": "cvt", "m": 1.0, "J1": 1.0, "J2": 1.0})
        payload["bc"]["state0"]["q"] = [0.0, 0.0, 0.5]
        payload["bc"]["stateT"]["q"] = [0.0, 0.0, 0.5]
        payload["obstacle"] = {"kappa": 0.1, "center": [0.5, 0.5]}
        with self.assertRaises(ConfigError):
            self.load(payload)

    def test_dimension_mismatch(self):
        payload = sleigh_config()
        payload["bc"]["state0"]["q"] = [0.0, 0.0]
        with self.assertRaises(ConfigError):
            self.load(payload)

    def test_costate_guess_length(self):
        payload = sleigh_config(solver={"h": 1e-2, "initial_costate_guess": [0.0, 0.0]})
        with self.assertRaises(ConfigError):
            self.load(payload)

    def test_shooting_config(self):
        config = self.load(sleigh_config(solver={"h": 1e-2, "method": "Heun", "segments": 2, "continuation_stages": 1}))
        cfg = config.shooting_config()
        self.assertEqual(cfg.h, 1e-2)
        self.assertEqual(cfg.method, "Heun")
        self.assertEqual(cfg.segments, 2)
        self.assertEqual(cfg.continuation_stages, 1)
        self.assertIsNone(cfg.initial_costate_guess)

    def test_missing_target(self):
        payload = sleigh_config()
        del payload["bc"]["stateT"]
        config = self.load(payload)
        with self.assertRaises(ConfigError):
            config.boundary_conditions()


class TestCommands(unittest.TestCase):
    """測試 simulate / optimize / check 指令"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name) / "out"
        self.out.mkdir()

    def tearDown(self):
        self.tmp.cleanup()

    def load(self, payload):
        return load_run_config(write_config(self.tmp.name, payload))

    def test_simulate_round_trip(self):
        """CSV 讀回後重算的摘要量與 summary.json 相同"""
        config = self.load(sleigh_config())
        code = asyncio.run(commands.cmd_simulate(config, self.out))
        self.assertEqual(code, commands.EXIT_OK)

        raw = (self.out / "trajectory.csv").read_bytes()
        self.assertTrue(raw.startswith(b"t,x,y,theta,y1,y2\r\n"))
        summary = read_json(self.out / "summary.json")
        self.assertEqual(summary["schema_version"], 1)
        self.assertEqual(summary["samples"], 101)

        model, _ = chaplygin_sleigh(SleighParams(m=1.0, J=1.0, a=0.5))
        header, table = asyncio.run(trajectory_io.read_trajectory_csv(self.out / "trajectory.csv"))
        columns = trajectory_io.split_table(model, header, table)
        traj = Trajectory(
            times=columns["t"], states=np.concatenate([columns["q"], columns["y"]], axis=1), n=model.n, k=model.k
        )
        recomputed = commands.simulation_summary(model, traj)
        self.assertEqual(recomputed["energy_drift"], summary["energy_drift"])
        self.assertEqual(recomputed["admissibility_residual"], summary["admissibility_residual"])

    def test_simulate_constant_control(self):
        payload = sleigh_config(simulate={"u": [0.5, 0.0]})
        payload["bc"]["state0"]["y"] = [0.0, 0.0]
        code = asyncio.run(commands.cmd_simulate(self.load(payload), self.out))
        self.assertEqual(code, commands.EXIT_OK)
        header, table = asyncio.run(trajectory_io.read_trajectory_csv(self.out / "trajectory.csv"))
        self.assertEqual(header[-2:], ["u1", "u2"])
        # ẏ₂ = m u₁
        np.testing.assert_allclose(table[:, 5], 0.5 * table[:, 0], atol=1e-12)

    def test_simulate_chart_exit(self):
        payload = sleigh_config(model={"kind": "cvt", "m": 1.0, "J1": 1.0, "J2": 1.0})
        payload["bc"]["state0"] = {"q": [0.0, 0.0, 0.999], "y": [0.5, 0.0]}
        payload["bc"]["stateT"] = {"q": [0.0, 0.0, 0.5], "y": [0.0, 0.0]}
        code = asyncio.run(commands.cmd_simulate(self.load(payload), self.out))
        self.assertEqual(code, commands.EXIT_INVARIANT)
        summary = read_json(self.out / "summary.json")
        self.assertLessEqual(summary["exit_time"], 0.01)
        self.assertFalse((self.out / "trajectory.csv").exists())

    def test_optimize_free_flow(self):
        """目標即自由運動終點時 J = 0"""
        model, _ = chaplygin_sleigh(SleighParams(m=1.0, J=1.0, a=0.5))
        start = AdaptedState(np.zeros(3), np.array([0.3, 0.5]))
        final = integrate_free(model, start, 1.0, 1e-2)
        payload = sleigh_config()
        payload["bc"]["stateT"] = {"q": final.q[-1].tolist(), "y": final.y[-1].tolist()}
        code = asyncio.run(commands.cmd_optimize(self.load(payload), self.out))
        self.assertEqual(code, commands.EXIT_OK)
        summary = read_json(self.out / "summary.json")
        self.assertTrue(summary["converged"])
        self.assertAlmostEqual(summary["J"], 0.0, places=10)
        header, _ = asyncio.run(trajectory_io.read_trajectory_csv(self.out / "extremal.csv"))
        self.assertEqual(header, ["t", "x", "y", "theta", "y1", "y2", "p_x", "p_y", "p_theta", "p_y1", "p_y2", "u1", "u2"])

    def test_optimize_planted(self):
        payload = sleigh_config(model={"kind": "sleigh", "m": 1.0, "J": 1.0, "a": 1.0})
        payload["bc"]["state0"]["y"] = [0.2, 0.5]
        code = asyncio.run(commands.cmd_optimize(self.load(payload), self.out, planted=True))
        self.assertEqual(code, commands.EXIT_OK)
        summary = read_json(self.out / "summary.json")
        self.assertLessEqual(summary["planted_recovery_error"], 1e-6)

    def test_optimize_non_convergence(self):
        payload = sleigh_config(solver={"h": 1e-2, "newton_max_iter": 1, "continuation_stages": 1})
        payload["bc"]["state0"]["y"] = [0.0, 0.0]
        payload["bc"]["stateT"]["q"] = [1.0, 1.0, 0.0]
        code = asyncio.run(commands.cmd_optimize(self.load(payload), self.out))
        self.assertEqual(code, commands.EXIT_NONCONVERGENCE)
        summary = read_json(self.out / "summary.json")
        self.assertEqual(summary["exit_code"], commands.EXIT_NONCONVERGENCE)
        self.assertFalse(summary["converged"])
        self.assertIn("residual_history", summary)

    def test_optimize_obstacle_by_kappa_continuation(self):
        """κ > 0 時先解 κ = 0 再延拓，路徑繞開中心"""
        payload = sleigh_config(obstacle={"kappa": 0.1, "center": [0.5, 0.5]})
        payload["bc"]["state0"]["y"] = [0.0, 0.0]
        payload["bc"]["stateT"]["q"] = [1.0, 1.0, 0.0]
        code = asyncio.run(commands.cmd_optimize(self.load(payload), self.out))
        self.assertEqual(code, commands.EXIT_OK)
        summary = read_json(self.out / "summary.json")
        self.assertTrue(summary["converged"])
        self.assertEqual(summary["kappa"], 0.1)
        self.assertGreater(summary["min_distance"], settings.OBSTACLE_CLEARANCE)
        self.assertTrue(summary["obstacle_cleared"])

    def test_obstacle_cleared_uses_its_own_threshold(self):
        """obstacle_cleared 不受 warm_start_clearance 影響"""
        payload = sleigh_config(
            obstacle={"kappa": 0.1, "center": [0.5, 0.0]},
            solver={"h": 1e-2, "warm_start_clearance": 0.0},
        )
        config = self.load(payload)
        distance = 0.5 * settings.OBSTACLE_CLEARANCE
        states = np.zeros((3, 10))
        states[:, 0] = [0.0, 0.5, 1.0]
        states[1, 1] = distance
        traj = Trajectory(times=np.linspace(0.0, 1.0, 3), states=states, n=3, k=2, kind="extremal")
        result = ShootingResult(traj, np.zeros(5), True, 1, 0.0)
        summary = commands._result_summary(result, config)
        self.assertAlmostEqual(summary["min_distance"], distance)
        self.assertFalse(summary["obstacle_cleared"])
        states[1, 1] = 2.0 * settings.OBSTACLE_CLEARANCE
        self.assertTrue(commands._result_summary(result, config)["obstacle_cleared"])

    def test_sweep_rejects_cvt(self):
        config = load_run_config(preset="cvt-shift")
        self.assertEqual(asyncio.run(commands.cmd_sweep(config, self.out)), commands.EXIT_CONFIG)

    def test_sweep_writes_table(self):
        payload = sleigh_config(obstacle={"kappa": 0.0, "center": [0.5, 0.3]}, kappas=[0.0, 0.001])
        payload["bc"]["state0"]["y"] = [0.0, 0.0]
        code = asyncio.run(commands.cmd_sweep(self.load(payload), self.out))
        self.assertEqual(code, commands.EXIT_OK)
        rows = list(csv.reader(io.StringIO((self.out / "sweep.csv").read_text(encoding="utf-8"))))
        self.assertEqual(rows[0], ["kappa", "J", "min_distance", "iterations", "converged"])
        self.assertEqual([row[-1] for row in rows[1:]], ["true", "true"])
        summary = read_json(self.out / "summary.json")
        self.assertTrue(summary["cost_non_decreasing"])
        self.assertTrue(summary["min_distance_non_decreasing"])
        self.assertEqual([e["obstacle_cleared"] for e in summary["entries"]], [True, True])
        self.assertEqual([e["seed_kappa"] for e in summary["entries"]], [None, 0.0])
        self.assertTrue((self.out / "trajectory_kappa_0.001.csv").exists())

    def test_check_passes(self):
        payload = sleigh_config(model={"kind": "sleigh", "m": 1.0, "J": 1.0, "a": 1.0}, solver={"h": 1e-3})
        code = asyncio.run(commands.cmd_check(self.load(payload), self.out))
        report = read_json(self.out / "check.json")
        failed = [c["name"] for c in report["checks"] if not c["passed"]]
        self.assertEqual(failed, [])
        self.assertEqual(code, commands.EXIT_OK)

    def test_check_degenerate_sleigh(self):
        """a = 0 時正則性檢查失敗，結束碼為 3"""
        payload = sleigh_config(model={"kind": "sleigh", "m": 1.0, "J": 1.0, "a": 0.0})
        code = asyncio.run(commands.cmd_check(self.load(payload), self.out))
        self.assertEqual(code, commands.EXIT_INVARIANT)
        report = read_json(self.out / "check.json")
        regularity = next(c for c in report["checks"] if c["name"] == "regularity_determinant")
        self.assertFalse(regularity["passed"])


class TestInvariantSuite(unittest.TestCase):
    """測試不變量檢查的狀態分類"""

    def test_tight_tolerance_misses_without_errors(self):
        params = CvtParams(m=1.0, J1=1.0, J2=1.0)
        model, cost = cvt(params)
        results = run_invariant_suite(
            model,
            cost,
            AdaptedState(np.array([0.0, 0.0, 0.4]), np.array([0.1, 0.3])),
            T=0.2,
            h=1e-2,
            method="RK4",
            samples=5,
            seed=3,
            regularity_oracle=lambda q: cvt_regularity(params, q[..., 2]),
            tol=1e-15,
            energy_horizon=0.5,
            monodromy_horizon=0.1,
            monodromy_step=1e-2,
        )
        statuses = {r.status for r in results}
        self.assertNotIn("error", statuses)
        self.assertIn("tolerance_miss", statuses)
        self.assertTrue(all(r.tolerance == 1e-15 for r in results))


class TestMain(unittest.TestCase):
    """測試命令列入口"""

    def test_parser(self):
        args = build_parser().parse_args(["sweep", "--preset", "sleigh-obstacle", "--jobs", "2"])
        self.assertEqual(args.command, "sweep")
        self.assertEqual(args.jobs, 2)
        args = build_parser().parse_args(["check", "--config", "run.json", "--tol", "1e-3"])
        self.assertEqual(args.tol, 1e-3)
        args = build_parser().parse_args(["optimize", "--preset", "paper-sleigh"])
        self.assertEqual(args.preset, "paper-sleigh")

    def test_unknown_preset_rejected(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(["check", "--preset", "nope"])

    def test_config_error_exit_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            code = main(["simulate", "--config", os.path.join(tmp, "missing.json"), "--out", tmp])
        self.assertEqual(code, commands.EXIT_CONFIG)

    def test_simulate_end_to_end(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, sleigh_config())
            out = os.path.join(tmp, "out")
            code = main(["simulate", "--config", path, "--out", out])
            self.assertEqual(code, commands.EXIT_OK)
            stored = read_json(os.path.join(out, "config.json"))
            self.assertEqual(stored["config"]["model"]["kind"], "sleigh")
            self.assertTrue(os.path.exists(os.path.join(out, "trajectory.csv")))


if __name__ == '__main__':
    unittest.main()
