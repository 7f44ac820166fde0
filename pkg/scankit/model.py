from dataclasses import dataclass, field
from typing import Iterator, Sequence

import math

import numpy as np

from scankit.consts import DEFAULT_SAMPLE_RATE_HZ
from scankit.exceptions import GeometryError, MetricError


def normalize_lon(lon: float) -> float:
    """经度归一化到 [-π, π)"""
    wrapped = (lon + math.pi) % (2 * math.pi) - math.pi
    # 浮点取模可能得到 π
    return -math.pi if wrapped >= math.pi else wrapped


@dataclass(frozen=True)
class GazePoint:
    """注视点 (纬度, 经度), 单位弧度"""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise GeometryError(f"非有限的注视点 ({self.lat}, {self.lon})")
        if abs(self.lat) > math.pi / 2 + 1e-12:
            raise GeometryError(f"纬度 {self.lat} 超出 [-π/2, π/2]")
        object.__setattr__(self, "lat", max(-math.pi / 2, min(math.pi / 2, self.lat)))
        object.__setattr__(self, "lon", normalize_lon(self.lon))

    def __str__(self):
        return f"注视点 ({math.degrees(self.lat):.2f}°, {math.degrees(self.lon):.2f}°)"

    def to_tuple(self) -> tuple[float, float]:
        return self.lat, self.lon


@dataclass(frozen=True)
class UnitVec3:
    """单位球面上的三维点"""

    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if not math.isfinite(norm):
            raise GeometryError(f"非有限的向量 ({self.x}, {self.y}, {self.z})")
        if abs(norm - 1.0) > 1e-6:
            raise GeometryError(f"向量模长 {norm} 不是 1")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "UnitVec3":
        return cls(float(values[0]), float(values[1]), float(values[2]))


@dataclass(frozen=True)
class TangentCoords:
    """切平面 (日晷投影) 坐标, (0, 0) 即切点"""

    u: float
    v: float


@dataclass(frozen=True, eq=False)
class Scanpath:
    """扫视路径: T 个单位向量组成的 (T, 3) 数组, 默认 1 Hz

    Args:
        points (np.ndarray): (T, 3) 单位向量
        sample_rate_hz (float): 采样率
    """

    points: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
            raise GeometryError(f"扫视路径形状应为 (T, 3), 实际为 {points.shape}")
        if not np.all(np.isfinite(points)):
            raise GeometryError("扫视路径含有非有限坐标")
        norms = np.linalg.norm(points, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise GeometryError(f"扫视路径的点不在单位球面上 (最大偏差 {np.max(np.abs(norms - 1.0)):.3g})")
        if not self.sample_rate_hz > 0:
            raise GeometryError(f"采样率必须为正 {self.sample_rate_hz}")
        points.flags.writeable = False
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __str__(self):
        return f"扫视路径 T={len(self)} @ {self.sample_rate_hz:g} Hz"

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate_hz

    def latlon(self) -> np.ndarray:
        """(T, 2) 的 (lat, lon) 数组"""
        from scankit.geometry import unit_to_latlon_array

        return unit_to_latlon_array(self.points)

    @classmethod
    def from_latlon(cls, latlon: np.ndarray, sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> "Scanpath":
        from scankit.geometry import latlon_to_unit_array

        latlon = np.asarray(latlon, dtype=np.float64)
        return cls(latlon_to_unit_array(latlon[:, 0], latlon[:, 1]), sample_rate_hz)


@dataclass(eq=False)
class ScanpathSet:
    """同一张全景图的一组扫视路径 (长度可以不同)"""

    scanpaths: list[Scanpath]
    image_id: str = ""
    user_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.scanpaths = list(self.scanpaths)
        if not self.scanpaths:
            raise MetricError(f"扫视路径集合 {self.image_id!r} 为空")
        if not self.user_ids:
            self.user_ids = [str(i) for i in range(len(self.scanpaths))]
        if len(self.user_ids) != len(self.scanpaths):
            raise MetricError("user_ids 与扫视路径数量不一致")

    def __len__(self) -> int:
        return len(self.scanpaths)

    def __iter__(self) -> Iterator[Scanpath]:
        return iter(self.scanpaths)

    def __getitem__(self, index: int) -> Scanpath:
        return self.scanpaths[index]

    def __str__(self):
        return f"扫视路径集合 {self.image_id or '未命名'} 共 {len(self)} 条"


@dataclass(frozen=True, eq=False)
class EquirectImage:
    """等距柱状投影全景图, (H, W, 3) 浮点像素, 取值 [0, 1], W = 2H"""

    pixels: np.ndarray
    name: str = ""

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise GeometryError(f"全景图形状应为 (H, W, 3), 实际为 {pixels.shape}")
        height, width, _ = pixels.shape
        if width != 2 * height:
            raise GeometryError(f"全景图宽高比应为 2:1, 实际为 {width}x{height}")
        pixels = np.clip(pixels, 0.0, 1.0)
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def resolution(self) -> tuple[int, int]:
        """(宽, 高)"""
        return self.width, self.height

    def __str__(self):
        return f"全景图 {self.name if self.name else '未命名'} 分辨率 {self.resolution}"


@dataclass(frozen=True)
class TrajectoryFrame:
    """缩略图轨迹的一帧"""

    t: float
    center: GazePoint
    fov_deg: float
