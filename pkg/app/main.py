import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from app.core.config import settings

# 配置日誌
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
)
logger = logging.getLogger(__name__)

from app.cli import commands  # noqa: E402
from app.cli.schemas import load_run_config  # noqa: E402
from app.core.exceptions import ConfigError  # noqa: E402
from app.data_processing.trajectory_io import output_dir, write_json  # noqa: E402


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=settings.PROJECT_NAME, description=settings.DESCRIPTION)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON 組態檔路徑")
        p.add_argument("--preset", choices=sorted(settings.PRESETS), help="使用內建預設組態")
        p.add_argument("--out", help=f"輸出目錄 (預設 {settings.OUTPUT_DIR})")

    common(sub.add_parser("simulate", help="積分自由或常值控制動力學"))
    optimize = sub.add_parser("optimize", help="以打靶法求解最優控制問題")
    common(optimize)
    optimize.add_argument("--planted", action="store_true", help="以隨機植入協態產生邊界條件並檢查回收")
    sweep = sub.add_parser("sweep", help="障礙物勢場強度 κ 掃描")
    common(sweep)
    sweep.add_argument("--jobs", type=int, default=settings.DEFAULT_JOBS, help="並行求解數 (>1 時先解第一個 κ，其餘並行)")
    check = sub.add_parser("check", help="執行不變量檢查")
    common(check)
    check.add_argument("--tol", type=float, help="覆寫所有容許誤差")
    return parser


async def run(args: argparse.Namespace) -> int:
    try:
        config = load_run_config(args.config, args.preset)
    except ConfigError as e:
        logger.error(f"組態錯誤: {e}")
        return commands.EXIT_CONFIG

    out = output_dir(args.out or config.outputs.dir)
    await write_json(out / "config.json", {"config": config.dict()})

    if args.command == "simulate":
        return await commands.cmd_simulate(config, out)
    if args.command == "optimize":
        return await commands.cmd_optimize(config, out, planted=args.planted)
    if args.command == "sweep":
        if args.jobs < 1:
            logger.error("--jobs 必須 >= 1")
            return commands.EXIT_CONFIG
        return await commands.cmd_sweep(config, out, jobs=args.jobs)
    return await commands.cmd_check(config, out, tol=args.tol)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger.info(f"{settings.PROJECT_NAME} {settings.PROJECT_VERSION}: {args.command}")
    try:
        return asyncio.run(run(args))
    except ConfigError as e:
        logger.error(f"組態錯誤: {e}")
        return commands.EXIT_CONFIG
    except Exception as e:
        logger.error(f"指令 {args.command} 中止: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
