import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import aiofiles
import numpy as np

from app.core.config import settings
from app.services.geometry import MechanicalModel
from app.services.solver import SweepEntry, Trajectory

# 配置日誌
logger = logging.getLogger(__name__)


def format_float(value: Any) -> str:
    """最短往返十進位表示 (最多 17 位有效數字)"""
    return repr(float(value))


def trajectory_header(model: MechanicalModel, kind: str, with_controls: bool) -> List[str]:
    """CSV 標頭，使用模型的座標名稱"""
    header = ["t", *model.coordinate_names, *model.velocity_names]
    if kind == "extremal":
        header += [f"p_{name}" for name in model.coordinate_names]
        header += [f"p_{name}" for name in model.velocity_names]
    if with_controls:
        header += [f"u{a + 1}" for a in range(model.k)]
    return header


def trajectory_rows(traj: Trajectory) -> Iterable[List[str]]:
    columns = [traj.times[:, None], traj.states]
    if traj.controls is not None:
        columns.append(traj.controls)
    table = np.concatenate(columns, axis=1)
    for row in table:
        yield [format_float(v) for v in row]


def render_csv(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\r\n")
    writer.writerow(list(header))
    writer.writerows(rows)
    return buffer.getvalue()


def render_json(payload: Dict[str, Any]) -> str:
    body = {"schema_version": settings.SCHEMA_VERSION, **payload}
    return json.dumps(body, indent=2, ensure_ascii=False, default=_json_default) + "\n"


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"無法序列化的型別: {type(value)}")


async def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8", newline="") as f:
        await f.write(text)
    logger.info(f"已寫入 {path}")
    return path


async def write_trajectory_csv(path: Path, model: MechanicalModel, traj: Trajectory) -> Path:
    """寫出軌跡 CSV (t, q, y[, p][, u])"""
    header = trajectory_header(model, traj.kind, traj.controls is not None)
    return await _write_text(Path(path), render_csv(header, trajectory_rows(traj)))


async def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    """寫出帶 schema_version 的 JSON 摘要"""
    return await _write_text(Path(path), render_json(payload))


async def write_sweep_csv(path: Path, entries: Sequence[SweepEntry]) -> Path:
    header = ["kappa", "J", "min_distance", "iterations", "converged"]
    rows = []
    for entry in entries:
        rows.append(
            [
                format_float(entry.kappa),
                "" if entry.cost is None else format_float(entry.cost),
                "" if entry.min_distance is None else format_float(entry.min_distance),
                str(entry.iterations),
                "true" if entry.converged else "false",
            ]
        )
    return await _write_text(Path(path), render_csv(header, rows))


async def read_trajectory_csv(path: Path) -> Tuple[List[str], np.ndarray]:
    """讀回 CSV，回傳 (標頭, 數值表)"""
    async with aiofiles.open(Path(path), "r", encoding="utf-8", newline="") as f:
        text = await f.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    table = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    return header, table


def split_table(model: MechanicalModel, header: Sequence[str], table: np.ndarray) -> Dict[str, np.ndarray]:
    """把讀回的數值表拆成 t, q, y (以及 p、u，若存在)"""
    n, k = model.n, model.k
    out = {"t": table[:, 0], "q": table[:, 1 : 1 + n], "y": table[:, 1 + n : 1 + n + k]}
    offset = 1 + n + k
    if len(header) >= offset + n + k and header[offset].startswith("p_"):
        out["p_base"] = table[:, offset : offset + n]
        out["p_fiber"] = table[:, offset + n : offset + n + k]
        offset += n + k
    if len(header) >= offset + k:
        out["u"] = table[:, offset : offset + k]
    return out


def output_dir(requested: Optional[str]) -> Path:
    path = Path(requested or settings.OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path
