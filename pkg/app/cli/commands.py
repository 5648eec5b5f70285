"""
CLI 指令
simulate / optimize / sweep / check，各自回傳結束碼並把結果寫入輸出目錄
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from app.cli.schemas import RunConfig
from app.core.config import settings
from app.core.exceptions import ChartExitError, ConvergenceError, IntegrationError, NonholonomicError
from app.data_processing import trajectory_io
from app.models.cvt import CvtParams, cvt_regularity
from app.models.sleigh import SleighParams, sleigh_regularity, zero_multiplier_defects
from app.services.dynamics import integrate_free
from app.services.invariants import admissibility_defect, energy_drift, run_invariant_suite
from app.services.solver import ShootingResult, kappa_continuation, planted_boundary, shoot, sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NONCONVERGENCE = 2
EXIT_INVARIANT = 3
EXIT_CONFIG = 4


def _parameters(config: RunConfig) -> Dict[str, Any]:
    payload = {"model": config.model.dict()}
    if config.obstacle is not None:
        payload["obstacle"] = config.obstacle.dict()
    return payload


def simulation_summary(model, traj) -> Dict[str, float]:
    """由軌跡樣本計算的摘要量；讀回 CSV 後重算應得到相同數值"""
    return {
        "energy_drift": energy_drift(model, traj),
        "admissibility_residual": admissibility_defect(model, traj),
    }


async def cmd_simulate(config: RunConfig, out_dir: Path) -> int:
    """積分自由 (或常值控制) 動力學，寫出 trajectory.csv 與 summary.json"""
    model, _ = config.build_model()
    state0 = config.state0()
    u = None if config.simulate.u is None else np.asarray(config.simulate.u, dtype=float)
    summary: Dict[str, Any] = {
        "command": "simulate",
        "parameters": _parameters(config),
        "T": config.bc.T,
        "h": config.solver.h,
        "method": config.solver.method.value,
    }
    logger.info(f"開始模擬 {model.name}，T={config.bc.T}, h={config.solver.h}")
    try:
        traj = integrate_free(model, state0, config.bc.T, config.solver.h, config.solver.method.value, u)
    except ChartExitError as e:
        logger.error(f"模擬離開座標卡: {e}")
        summary.update({"error": str(e), "exit_time": e.time, "exit_code": EXIT_INVARIANT})
        await trajectory_io.write_json(out_dir / "summary.json", summary)
        return EXIT_INVARIANT
    except IntegrationError as e:
        logger.error(f"模擬失敗: {e}", exc_info=True)
        summary.update({"error": str(e), "exit_time": e.time, "exit_code": EXIT_INVARIANT})
        await trajectory_io.write_json(out_dir / "summary.json", summary)
        return EXIT_INVARIANT

    if u is not None:
        traj.controls = np.broadcast_to(u, (len(traj.times), model.k)).copy()
    summary.update(simulation_summary(model, traj))
    summary.update({"samples": len(traj.times), "exit_code": EXIT_OK})
    if config.outputs.write_csv:
        await trajectory_io.write_trajectory_csv(out_dir / "trajectory.csv", model, traj)
    if config.outputs.write_json:
        await trajectory_io.write_json(out_dir / "summary.json", summary)
    logger.info(f"模擬完成，能量漂移 {summary['energy_drift']:.3e}")
    return EXIT_OK


def _result_summary(result: ShootingResult, config: RunConfig) -> Dict[str, Any]:
    payload = result.diagnostics()
    payload["parameters"] = _parameters(config)
    payload["T"] = config.bc.T
    payload["solver"] = config.solver.dict()
    payload["solver"]["method"] = config.solver.method.value
    if config.obstacle is not None and result.trajectory is not None:
        distance = result.trajectory.min_distance(config.obstacle.center)
        payload["kappa"] = config.obstacle.kappa
        payload["min_distance"] = distance
        payload["obstacle_cleared"] = distance > settings.OBSTACLE_CLEARANCE
    return payload


def _solve_obstacle(model, config: RunConfig, bc, cfg) -> ShootingResult:
    """先解 κ = 0，再延拓到組態的 κ，避免從零協態直接冷啟動"""
    base = shoot(model, config.cost_for_kappa(0.0), bc, cfg, config.checks_for_kappa(0.0))
    logger.info(f"κ=0 基準解 J={base.cost:.10g}，延拓至 κ={config.obstacle.kappa}")
    return kappa_continuation(
        model,
        config.cost_for_kappa,
        bc,
        cfg,
        0.0,
        base,
        config.obstacle.kappa,
        config.obstacle.center,
        config.checks_for_kappa,
    )


async def cmd_optimize(config: RunConfig, out_dir: Path, planted: bool = False) -> int:
    """求解最優控制兩點邊值問題，寫出 extremal.csv 與 summary.json"""
    model, cost = config.build_model()
    cfg = config.shooting_config()
    checks = config.checks_for_kappa(config.obstacle.kappa) if config.obstacle is not None else []
    planted_costates: Optional[np.ndarray] = None
    if planted:
        rng = np.random.default_rng(settings.RANDOM_SEED)
        planted_costates = 0.5 * rng.normal(size=model.n + model.k)
        bc = planted_boundary(model, cost, config.state0(), planted_costates, config.bc.T, cfg.h, cfg.method)
        logger.info(f"植入協態 {planted_costates.tolist()}")
    else:
        bc = config.boundary_conditions()

    try:
        if planted or config.obstacle is None or config.obstacle.kappa == 0 or cfg.initial_costate_guess is not None:
            result = shoot(model, cost, bc, cfg, checks)
        else:
            result = _solve_obstacle(model, config, bc, cfg)
    except ConvergenceError as e:
        logger.warning(f"打靶法未收斂: {e}")
        best = e.result
        summary = {"command": "optimize", "error": str(e), "exit_code": EXIT_NONCONVERGENCE}
        if isinstance(best, ShootingResult):
            summary.update(_result_summary(best, config))
            if best.trajectory is not None and config.outputs.write_csv:
                await trajectory_io.write_trajectory_csv(out_dir / "best_iterate.csv", model, best.trajectory)
        await trajectory_io.write_json(out_dir / "summary.json", summary)
        return EXIT_NONCONVERGENCE
    except IntegrationError as e:
        logger.error(f"打靶積分失敗: {e}", exc_info=True)
        await trajectory_io.write_json(
            out_dir / "summary.json", {"command": "optimize", "error": str(e), "exit_code": EXIT_INVARIANT}
        )
        return EXIT_INVARIANT

    summary = {"command": "optimize", "exit_code": EXIT_OK, **_result_summary(result, config)}
    if planted_costates is not None:
        summary["planted_costates"] = planted_costates.tolist()
        summary["planted_recovery_error"] = float(np.max(np.abs(result.costates - planted_costates)))
    if config.outputs.write_csv:
        await trajectory_io.write_trajectory_csv(out_dir / "extremal.csv", model, result.trajectory)
    if config.outputs.write_json:
        await trajectory_io.write_json(out_dir / "summary.json", summary)
    logger.info(f"最佳化完成，J={result.cost:.10g}，迭代 {result.iterations} 次")
    return EXIT_OK


def _non_decreasing(values: List[float]) -> bool:
    return all(b >= a - 1e-12 * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


async def cmd_sweep(config: RunConfig, out_dir: Path, jobs: int = 1) -> int:
    """對 κ 列表掃描障礙物迴避問題，寫出 sweep.csv 與各 κ 的軌跡"""
    if config.model.kind != "sleigh":
        logger.error("sweep 只支援雪橇模型")
        return EXIT_CONFIG
    model, _ = config.build_model()
    kappas = config.sweep_kappas()
    center = config.obstacle_params().center
    logger.info(f"開始 κ 掃描: {kappas} (jobs={jobs})")
    entries = await sweep(
        model,
        config.cost_for_kappa,
        config.boundary_conditions(),
        config.shooting_config(),
        kappas,
        center,
        jobs=jobs,
        check_family=config.checks_for_kappa,
    )

    await trajectory_io.write_sweep_csv(out_dir / "sweep.csv", entries)
    for entry in entries:
        if entry.result is not None and entry.result.trajectory is not None and config.outputs.write_csv:
            await trajectory_io.write_trajectory_csv(
                out_dir / f"trajectory_kappa_{entry.kappa:g}.csv", model, entry.result.trajectory
            )

    converged = [e for e in entries if e.converged]
    summary = {
        "command": "sweep",
        "parameters": _parameters(config),
        "center": list(center),
        "entries": [
            {
                "kappa": e.kappa,
                "converged": e.converged,
                "J": e.cost,
                "min_distance": e.min_distance,
                "iterations": e.iterations,
                "residual": e.residual_norm,
                "warm_started": e.warm_started,
                "seed_kappa": e.seed_kappa,
                "obstacle_cleared": None if e.min_distance is None else e.min_distance > settings.OBSTACLE_CLEARANCE,
                "error": e.error,
            }
            for e in entries
        ],
        "cost_non_decreasing": _non_decreasing([e.cost for e in converged]),
        "min_distance_non_decreasing": _non_decreasing([e.min_distance for e in converged]),
    }
    exit_code = EXIT_OK if len(converged) == len(entries) else EXIT_NONCONVERGENCE
    summary["exit_code"] = exit_code
    await trajectory_io.write_json(out_dir / "summary.json", summary)
    return exit_code


async def cmd_check(config: RunConfig, out_dir: Path, tol: Optional[float] = None) -> int:
    """執行不變量檢查並輸出 pass/fail 報告"""
    model_cfg = config.model
    try:
        model, cost = config.build_model(allow_degenerate=True)
    except NonholonomicError as e:
        logger.error(f"無法建立模型: {e}")
        return EXIT_CONFIG

    extra = {}
    if model_cfg.kind == "sleigh":
        params = SleighParams(m=model_cfg.m, J=model_cfg.J, a=model_cfg.a)

        def oracle(q):
            return sleigh_regularity(params)

        if params.a > 0:
            reduction: Dict[str, float] = {}

            def reduction_block(key):
                def compute():
                    if not reduction:
                        reduction.update(zero_multiplier_defects(params, T=config.bc.T, h=config.solver.h))
                    return reduction[key]

                return compute

            for key in ("y1_quadratic", "y2_linear", "u1_constant", "u2_affine", "theta_closed_form"):
                extra[f"zero_multiplier_{key}"] = reduction_block(key)
    else:
        cvt_params = CvtParams(m=model_cfg.m, J1=model_cfg.J1, J2=model_cfg.J2)

        def oracle(q):
            return cvt_regularity(cvt_params, q[..., 2])

    results = run_invariant_suite(
        model,
        cost,
        config.state0(),
        config.bc.T,
        config.solver.h,
        config.solver.method.value,
        samples=settings.CHECK_SAMPLES,
        seed=settings.RANDOM_SEED,
        regularity_oracle=oracle,
        extra=extra,
        tol=tol,
    )
    passed = all(r.passed for r in results)
    report = {
        "command": "check",
        "parameters": _parameters(config),
        "tolerance_override": tol,
        "passed": passed,
        "checks": [r.to_dict() for r in results],
        "exit_code": EXIT_OK if passed else EXIT_INVARIANT,
    }
    await trajectory_io.write_json(out_dir / "check.json", report)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"不變量檢查失敗: {failed}")
    else:
        logger.info(f"全部 {len(results)} 項不變量檢查通過")
    return report["exit_code"]
