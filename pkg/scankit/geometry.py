"""球面几何: 参数化, 球面距离, 日晷投影与等距柱状像素约定

所有模块共用的约定:

- 三维参数化 x = cosφ·cosλ, y = cosφ·sinλ, z = sinφ
- 等距柱状图: 第 0 行贴北极, 第 0 列对应经度 -π, 按像素中心采样
- 极点处经度规范为 0
"""

from typing import Sequence

import math

import numpy as np

from scankit.exceptions import GeometryError, ProjectionError
from scankit.model import GazePoint, TangentCoords, UnitVec3


def latlon_to_unit_array(lat, lon) -> np.ndarray:
    """批量经纬度转单位向量, 返回形状 (..., 3)"""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    cos_lat = np.cos(lat)
    return np.stack([cos_lat * np.cos(lon), cos_lat * np.sin(lon), np.sin(lat)], axis=-1)


def unit_to_latlon_array(points: np.ndarray) -> np.ndarray:
    """批量单位向量转经纬度, 返回形状 (..., 2) 的 (lat, lon)"""
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise GeometryError("向量含有非有限分量")
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    horizontal = np.hypot(x, y)
    lat = np.arctan2(z, horizontal)
    pole = (x == 0) & (y == 0)
    lon = np.where(pole, 0.0, np.arctan2(y, x))
    return np.stack([lat, lon], axis=-1)


def latlon_to_unit(p: GazePoint) -> UnitVec3:
    """经纬度转单位向量

    Args:
        p (GazePoint): 注视点

    Returns:
        UnitVec3: (cosφ·cosλ, cosφ·sinλ, sinφ)
    """
    cos_lat = math.cos(p.lat)
    return UnitVec3(cos_lat * math.cos(p.lon), cos_lat * math.sin(p.lon), math.sin(p.lat))


def unit_to_latlon(v: UnitVec3) -> GazePoint:
    """单位向量转经纬度, 极点经度取 0

    Args:
        v (UnitVec3): 单位向量

    Returns:
        GazePoint: φ = atan2(z, √(x²+y²)), λ = atan2(y, x)
    """
    if not all(math.isfinite(c) for c in (v.x, v.y, v.z)):
        raise GeometryError(f"非有限的向量 ({v.x}, {v.y}, {v.z})")
    lon = 0.0 if v.x == 0 and v.y == 0 else math.atan2(v.y, v.x)
    return GazePoint(math.atan2(v.z, math.hypot(v.x, v.y)), lon)


def spherical_distance_array(a, b) -> np.ndarray:
    """δ_sph = 2·arcsin(½·|a - b|), 支持广播"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    chord = np.sqrt(np.sum((a - b) ** 2, axis=-1))
    return 2.0 * np.arcsin(np.clip(0.5 * chord, -1.0, 1.0))


def spherical_distance(a: UnitVec3 | Sequence[float], b: UnitVec3 | Sequence[float]) -> float:
    """两点间的大圆距离 (弧度, [0, π])

    Args:
        a (UnitVec3): 第一个点
        b (UnitVec3): 第二个点

    Returns:
        float: 2·arcsin(½·弦长), arcsin 的参数截断到 [-1, 1]
    """
    if isinstance(a, UnitVec3):
        a = a.to_array()
    if isinstance(b, UnitVec3):
        b = b.to_array()
    return float(spherical_distance_array(a, b))


def gnomonic_project_array(lat0, lon0, lat, lon) -> tuple[np.ndarray, np.ndarray]:
    """批量日晷投影, 返回切平面坐标 (u 向东, v 向北)"""
    lat = np.asarray(lat, dtype=np.float64)
    dlon = np.asarray(lon, dtype=np.float64) - lon0
    cos_c = math.sin(lat0) * np.sin(lat) + math.cos(lat0) * np.cos(lat) * np.cos(dlon)
    if np.any(cos_c <= 0):
        raise ProjectionError("点不在切点所在的前半球, 无法做日晷投影")
    u = np.cos(lat) * np.sin(dlon) / cos_c
    v = (math.cos(lat0) * np.sin(lat) - math.sin(lat0) * np.cos(lat) * np.cos(dlon)) / cos_c
    return u, v


def gnomonic_unproject_array(lat0, lon0, u, v) -> tuple[np.ndarray, np.ndarray]:
    """批量日晷反投影, 返回 (lat, lon), 经度归一化到 [-π, π)"""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    rho = np.hypot(u, v)
    c = np.arctan(rho)
    sin_c, cos_c = np.sin(c), np.cos(c)
    safe_rho = np.where(rho == 0, 1.0, rho)
    lat = np.arcsin(np.clip(cos_c * math.sin(lat0) + v * sin_c * math.cos(lat0) / safe_rho, -1.0, 1.0))
    lat = np.where(rho == 0, lat0, lat)
    lon = lon0 + np.arctan2(u * sin_c, rho * math.cos(lat0) * cos_c - v * math.sin(lat0) * sin_c)
    lon = np.where(rho == 0, lon0, lon)
    lon = (lon + math.pi) % (2 * math.pi) - math.pi
    return lat, lon


def gnomonic_project(center: GazePoint, p: GazePoint) -> TangentCoords:
    """日晷投影: 把球面点投到切于 center 的平面上

    Args:
        center (GazePoint): 切点
        p (GazePoint): 待投影的点, 与切点的角距离必须小于 π/2

    Returns:
        TangentCoords: 切平面坐标, 切点对应 (0, 0)
    """
    u, v = gnomonic_project_array(center.lat, center.lon, p.lat, p.lon)
    return TangentCoords(float(u), float(v))


def gnomonic_unproject(center: GazePoint, t: TangentCoords) -> GazePoint:
    """日晷反投影, gnomonic_project 的逆"""
    if not (math.isfinite(t.u) and math.isfinite(t.v)):
        raise GeometryError(f"切平面坐标非有限 ({t.u}, {t.v})")
    lat, lon = gnomonic_unproject_array(center.lat, center.lon, t.u, t.v)
    return GazePoint(float(lat), float(lon))


def kernel_grid_array(lat0: float, lon0: float, k: int, angular_step: float) -> np.ndarray:
    """球面卷积核的采样位置, 返回 (k, k, 2) 的 (lat, lon)

    切平面上取步长 tan(angular_step) 的规则网格再反投影; 第 0 行在北, 第 0 列在西。
    """
    if k < 1 or k % 2 == 0:
        raise GeometryError(f"卷积核尺寸必须为正奇数, 实际为 {k}")
    if not angular_step > 0:
        raise GeometryError(f"角步长必须为正, 实际为 {angular_step}")
    if k * angular_step >= math.pi / 2:
        raise GeometryError(f"卷积核 {k}x{angular_step:.4f} 超出半球")
    offsets = (np.arange(k) - k // 2) * math.tan(angular_step)
    u = np.broadcast_to(offsets[None, :], (k, k))
    v = np.broadcast_to(-offsets[:, None], (k, k))
    lat, lon = gnomonic_unproject_array(lat0, lon0, u, v)
    return np.stack([lat, lon], axis=-1)


def spherical_kernel_grid(center: GazePoint, k: int, angular_step: float) -> list[list[GazePoint]]:
    """以 center 为切点的 k×k 球面卷积核采样网格

    Args:
        center (GazePoint): 核中心
        k (int): 奇数核尺寸
        angular_step (float): 相邻采样点的角步长 (弧度), 要求 k·step < π/2

    Returns:
        list[list[GazePoint]]: k 行 k 列, 中心格即 center
    """
    grid = kernel_grid_array(center.lat, center.lon, k, angular_step)
    cells = [[GazePoint(float(lat), float(lon)) for lat, lon in row] for row in grid]
    cells[k // 2][k // 2] = center
    return cells


def _check_shape(height: int, width: int):
    if height < 1 or width < 1:
        raise GeometryError(f"图像尺寸必须为正 {height}x{width}")


def equirect_pixel_to_latlon(row: int, col: int, height: int, width: int) -> GazePoint:
    """像素中心转经纬度

    lon = ((col + 0.5) / W)·2π − π, lat = π/2 − ((row + 0.5) / H)·π
    """
    _check_shape(height, width)
    if not (0 <= row < height and 0 <= col < width):
        raise GeometryError(f"像素 ({row}, {col}) 超出 {height}x{width}")
    lon = (col + 0.5) / width * 2 * math.pi - math.pi
    lat = math.pi / 2 - (row + 0.5) / height * math.pi
    return GazePoint(lat, lon)


def equirect_latlon_to_pixel(p: GazePoint, height: int, width: int) -> tuple[int, int]:
    """经纬度转所在像素 (row, col), 经度回绕, 纬度截断"""
    rows, cols = latlon_to_pixel_array(p.lat, p.lon, height, width)
    return int(rows), int(cols)


def latlon_to_pixel_array(lat, lon, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    _check_shape(height, width)
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    rows = np.floor((math.pi / 2 - lat) / math.pi * height).astype(np.int64)
    cols = np.floor((lon + math.pi) / (2 * math.pi) * width).astype(np.int64)
    return np.clip(rows, 0, height - 1), np.mod(cols, width)


def pixel_centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """所有像素中心的 (lat, lon), 形状均为 (H, W)"""
    _check_shape(height, width)
    lat = math.pi / 2 - (np.arange(height) + 0.5) / height * math.pi
    lon = (np.arange(width) + 0.5) / width * 2 * math.pi - math.pi
    return np.meshgrid(lat, lon, indexing="ij")


def pixel_unit_vectors(height: int, width: int) -> np.ndarray:
    """所有像素中心的单位向量, 形状 (H, W, 3)"""
    lat, lon = pixel_centers(height, width)
    return latlon_to_unit_array(lat, lon)


def pixel_solid_angle(height: int, width: int) -> np.ndarray:
    """像素立体角 cos(lat)·Δlat·Δlon, 形状 (H, W)"""
    lat, _ = pixel_centers(height, width)
    return np.cos(lat) * (math.pi / height) * (2 * math.pi / width)


def rotate_lon(points: np.ndarray, angle: float) -> np.ndarray:
    """绕 z 轴旋转 angle 弧度 (经度整体平移, 纬度不变)"""
    points = np.asarray(points, dtype=np.float64)
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    rotated = points.copy()
    rotated[..., 0] = cos_a * points[..., 0] - sin_a * points[..., 1]
    rotated[..., 1] = sin_a * points[..., 0] + cos_a * points[..., 1]
    return rotated


def slerp(a: np.ndarray, b: np.ndarray, fraction: float) -> np.ndarray:
    """沿大圆从 a 插值到 b"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    omega = float(spherical_distance_array(a, b))
    if omega < 1e-12:
        return a.copy()
    if abs(omega - math.pi) < 1e-9:
        # 对径点的大圆不唯一, 经过一个与 a 正交的方向
        helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        ortho = helper - a * np.dot(a, helper)
        ortho /= np.linalg.norm(ortho)
        angle = fraction * math.pi
        return math.cos(angle) * a + math.sin(angle) * ortho
    sin_omega = math.sin(omega)
    result = (math.sin((1 - fraction) * omega) * a + math.sin(fraction * omega) * b) / sin_omega
    return result / np.linalg.norm(result)


def sample_uniform_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    """球面均匀采样, (n, 3)"""
    points = rng.standard_normal((n, 3))
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def sample_vmf(mu: np.ndarray, kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """S² 上 von Mises–Fisher 分布的精确采样

    Args:
        mu (np.ndarray): 均值方向 (单位向量)
        kappa (float): 集中度, 0 时退化为均匀分布
        n (int): 样本数
        rng (np.random.Generator): 随机数发生器

    Returns:
        np.ndarray: (n, 3) 单位向量
    """
    mu = np.asarray(mu, dtype=np.float64)
    mu = mu / np.linalg.norm(mu)
    if kappa <= 0:
        return sample_uniform_sphere(n, rng)
    u = rng.uniform(size=n)
    # S² 上 w = cos θ 的逆 CDF 有闭式解
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    w = np.clip(w, -1.0, 1.0)
    tangent = rng.standard_normal((n, 3))
    tangent -= np.outer(tangent @ mu, mu)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    return w[:, None] * mu[None, :] + np.sqrt(1.0 - w * w)[:, None] * tangent
