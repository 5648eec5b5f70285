"""
κ 掃描效能測試腳本
比較依序 (逐一以前一個解為起點) 與並行 (共用第一個 κ 的解) 掃描的耗時與收斂率
"""

import argparse
import asyncio
import logging
import os
import sys
import time

from dotenv import load_dotenv

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.cli.schemas import load_run_config  # noqa: E402
from app.services.solver import sweep  # noqa: E402

# 加載環境變量
load_dotenv()

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("benchmark_sweep.log"),
        logging.StreamHandler(),
    ],
)
logger = logging.getLogger(__name__)

MAX_JOBS = int(os.getenv("BENCHMARK_MAX_JOBS", "4"))


async def timed_sweep(config, jobs: int):
    model, _ = config.build_model()
    start_time = time.time()
    entries = await sweep(
        model,
        config.cost_for_kappa,
        config.boundary_conditions(),
        config.shooting_config(),
        config.sweep_kappas(),
        config.obstacle_params().center,
        jobs=jobs,
        check_family=config.checks_for_kappa,
    )
    elapsed = time.time() - start_time
    converged = sum(e.converged for e in entries)
    iterations = sum(e.iterations for e in entries)
    logger.info(f"jobs={jobs}: {elapsed:.2f}s, 收斂 {converged}/{len(entries)}, Newton 迭代共 {iterations} 次")
    return elapsed, entries


async def benchmark(preset: str, config_path: str = None):
    config = load_run_config(config_path, None if config_path else preset)
    logger.info(f"開始效能測試 - κ={config.sweep_kappas()}, h={config.solver.h}, 最大並行數 {MAX_JOBS}")

    baseline, serial = await timed_sweep(config, 1)
    for jobs in range(2, MAX_JOBS + 1):
        elapsed, parallel = await timed_sweep(config, jobs)
        gaps = [
            abs(a.cost - b.cost) for a, b in zip(serial, parallel) if a.converged and b.converged
        ]
        logger.info(
            f"jobs={jobs}: 加速比 {baseline / elapsed if elapsed else float('inf'):.2f}, "
            f"與依序結果的最大 J 差 {max(gaps) if gaps else float('nan'):.3e}"
        )


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="κ 掃描效能測試")
    parser.add_argument("--preset", default="sleigh-obstacle")
    parser.add_argument("--config")
    args = parser.parse_args()
    asyncio.run(benchmark(args.preset, args.config))
