"""扫视路径的 JSON-lines 读写

每行一个 JSON 对象: {"image_id", "user_id", "t", "lat", "lon"}, 角度默认为弧度。
读取时按 (image_id, user_id) 分组, 在 target_hz 的时间格点上取最近的采样点。
"""

from pathlib import Path
from typing import Iterable, Iterator

import json
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from scankit.config import IngestSetting
from scankit.exceptions import IngestError
from scankit.geometry import latlon_to_unit_array
from scankit.log import logger
from scankit.model import Scanpath, ScanpathSet
from scankit.utils.file import FileHelper

ANGLE_DECIMALS = 10


class ScanpathRecord(BaseModel):
    """文件中的一行"""

    model_config = ConfigDict(extra="forbid", coerce_numbers_to_str=True)

    image_id: str
    user_id: str
    t: float
    lat: float
    lon: float

    @field_validator("t", "lat", "lon")
    @classmethod
    def check_finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("必须是有限数")
        return value

    def radians(self, degrees: bool) -> tuple[float, float]:
        lat, lon = (math.radians(self.lat), math.radians(self.lon)) if degrees else (self.lat, self.lon)
        if abs(lat) > math.pi / 2 + 1e-9:
            raise ValueError(f"纬度 {self.lat} 超出范围")
        if abs(lon) > math.pi + 1e-9:
            raise ValueError(f"经度 {self.lon} 超出范围")
        return max(-math.pi / 2, min(math.pi / 2, lat)), lon


def read_records(lines: Iterable[str], degrees: bool = False) -> Iterator[tuple[int, ScanpathRecord, float, float]]:
    """逐行解析, 产出 (行号, 记录, lat, lon), 行号从 1 开始"""
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = ScanpathRecord.model_validate(json.loads(line))
            lat, lon = record.radians(degrees)
        except json.JSONDecodeError as e:
            raise IngestError(f"不是合法的 JSON: {e.msg}", number) from e
        except ValidationError as e:
            error = e.errors()[0]
            raise IngestError(f"字段 {'.'.join(map(str, error['loc']))}: {error['msg']}", number) from e
        except ValueError as e:
            raise IngestError(str(e), number) from e
        yield number, record, lat, lon


def nearest_lattice_indices(times: np.ndarray, target_hz: float) -> np.ndarray:
    """格点 t_k = t_0 + (k + ½)/hz (t_k ≤ t_last + ½/hz) 上最近采样的下标; 距离相同取较早的采样"""
    t0, t_last = times[0], times[-1]
    count = int(math.floor((t_last - t0) * target_hz + 1e-9)) + 1
    lattice = t0 + (np.arange(count) + 0.5) / target_hz
    if len(times) == 1:
        return np.zeros(count, dtype=np.int64)
    right = np.clip(np.searchsorted(times, lattice, side="left"), 1, len(times) - 1)
    left = right - 1
    pick_left = (lattice - times[left]) <= (times[right] - lattice)
    return np.where(pick_left, left, right)


def ingest_lines(lines: Iterable[str], cfg: IngestSetting = IngestSetting(), source: str = "<stream>") -> dict[str, ScanpathSet]:
    """解析并重采样, 返回 image_id → ScanpathSet (按首次出现的顺序)"""
    groups: dict[tuple[str, str], list[tuple[float, float, float]]] = {}
    for number, record, lat, lon in read_records(lines, cfg.degrees):
        samples = groups.setdefault((record.image_id, record.user_id), [])
        if samples and record.t <= samples[-1][0]:
            raise IngestError(
                f"{record.image_id}/{record.user_id} 的时间不是严格递增 ({samples[-1][0]} -> {record.t})", number
            )
        samples.append((record.t, lat, lon))

    result: dict[str, ScanpathSet] = {}
    rejected = 0
    for (image_id, user_id), samples in groups.items():
        data = np.asarray(samples, dtype=np.float64)
        index = nearest_lattice_indices(data[:, 0], cfg.target_hz)
        if cfg.target_T is not None:
            if len(index) < cfg.target_T and cfg.short_policy == "reject":
                logger.warning(f"{image_id}/{user_id} 只有 {len(index)} 个点, 少于 {cfg.target_T}, 已丢弃")
                rejected += 1
                continue
            index = index[:cfg.target_T]
        points = latlon_to_unit_array(data[index, 1], data[index, 2])
        sps = result.get(image_id)
        if sps is None:
            result[image_id] = ScanpathSet([Scanpath(points, cfg.target_hz)], image_id=image_id, user_ids=[user_id])
        else:
            sps.scanpaths.append(Scanpath(points, cfg.target_hz))
            sps.user_ids.append(user_id)

    logger.info(f"从 {source} 读入 {len(result)} 张图, {sum(map(len, result.values()))} 条扫视路径" + (f", 丢弃 {rejected} 条" if rejected else ""))
    return result


def ingest(path: str | Path, cfg: IngestSetting = IngestSetting()) -> dict[str, ScanpathSet]:
    """读取扫视路径文件

    Args:
        path (str | Path): JSON-lines 文件
        cfg (IngestSetting): 目标采样率, 目标长度, 过短记录的处理方式, 是否为角度制

    Returns:
        dict[str, ScanpathSet]: image_id → 扫视路径集合
    """
    try:
        with open(path, "r", encoding="utf-8") as file:
            return ingest_lines(file, cfg, str(path))
    except FileNotFoundError:
        raise IngestError(f"文件不存在: {path}") from None


def load_scanpaths(path: str | Path, degrees: bool = False) -> dict[str, ScanpathSet]:
    """读取已是 1 Hz 的文件 (生成结果或规范化后的数据), 不截断也不丢弃"""
    return ingest(path, IngestSetting(target_T=None, short_policy="keep", degrees=degrees))


def scanpath_lines(sets: dict[str, ScanpathSet] | Iterable[ScanpathSet], degrees: bool = False) -> Iterator[str]:
    """规范格式: t = k / 采样率, 角度保留 10 位小数"""
    values = sets.values() if isinstance(sets, dict) else sets
    for sps in values:
        for user_id, sp in zip(sps.user_ids, sps):
            for k, (lat, lon) in enumerate(sp.latlon()):
                if degrees:
                    lat, lon = math.degrees(lat), math.degrees(lon)
                yield json.dumps({
                    "image_id": sps.image_id,
                    "user_id": user_id,
                    "t": k / sp.sample_rate_hz,
                    "lat": round(float(lat), ANGLE_DECIMALS),
                    "lon": round(float(lon), ANGLE_DECIMALS),
                }, ensure_ascii=False)


def write_scanpaths(path: str | Path, sets: dict[str, ScanpathSet] | Iterable[ScanpathSet], degrees: bool = False) -> None:
    FileHelper.write_lines(Path(path), scanpath_lines(sets, degrees))
    logger.debug(f"扫视路径已写入 {path}")
