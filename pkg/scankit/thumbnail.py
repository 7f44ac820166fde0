"""由生成的扫视路径驱动的全景缩略视频 (平移 + 缩放)

每个时刻取核密度的众数作为视口中心, 用密度的扩散程度决定视场角;
中心沿大圆做滑动平均并限制相邻帧的转动角度, 视场角做滑动平均。
"""

from pathlib import Path
from typing import Sequence

import math

import cv2
import numpy as np

from scankit.behavior import kde_mode_and_spread, kde_timestamp, vmf_kernel
from scankit.config import ThumbnailSetting
from scankit.exceptions import GeometryError
from scankit.gan.generate import generate
from scankit.gan.network import GanModel
from scankit.geometry import (
    gnomonic_unproject_array,
    latlon_to_unit,
    pixel_solid_angle,
    pixel_unit_vectors,
    slerp,
    spherical_distance_array,
    unit_to_latlon,
)
from scankit.log import logger
from scankit.model import EquirectImage, GazePoint, ScanpathSet, TrajectoryFrame, UnitVec3
from scankit.utils.file import FileHelper
from scankit.utils.image import save_png


def kernel_spread(mode: GazePoint, kappa: float, height: int, width: int) -> float:
    """以 mode 为中心的单个 vMF 核在同一像素网格上的扩散程度"""
    directions = pixel_unit_vectors(height, width)
    center = latlon_to_unit(mode).to_array()
    mass = vmf_kernel(directions @ center, kappa) * pixel_solid_angle(height, width)
    return float(np.sum(mass * spherical_distance_array(directions, center)) / np.sum(mass))


def fov_from_spread(spread: float, cfg: ThumbnailSetting) -> float:
    """fov = clamp(a · 扩散 (度) + b)"""
    return float(np.clip(cfg.fov_a * math.degrees(spread) + cfg.fov_b, cfg.fov_min, cfg.fov_max))


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """居中的滑动平均, 两端只平均窗口内存在的帧"""
    half = window // 2
    return np.stack([values[max(0, k - half):k + half + 1].mean(axis=0) for k in range(len(values))])


def smooth_trajectory(frames: Sequence[TrajectoryFrame], cfg: ThumbnailSetting) -> list[TrajectoryFrame]:
    """中心: 单位向量滑动平均后重新单位化, 再限制相邻帧的大圆距离; 视场角: 滑动平均"""
    if not frames:
        return []
    centers = np.stack([latlon_to_unit(f.center).to_array() for f in frames])
    fovs = np.array([f.fov_deg for f in frames])

    averaged = _moving_average(centers, cfg.smooth_window)
    norms = np.linalg.norm(averaged, axis=1, keepdims=True)
    # 窗口内方向互相抵消时保留原中心
    averaged = np.where(norms > 1e-9, averaged / np.maximum(norms, 1e-12), centers)
    fovs = _moving_average(fovs, cfg.smooth_window)

    max_pan = math.radians(cfg.max_pan_deg)
    limited = [averaged[0]]
    for target in averaged[1:]:
        distance = float(spherical_distance_array(limited[-1], target))
        limited.append(target if distance <= max_pan else slerp(limited[-1], target, max_pan / distance))

    return [
        TrajectoryFrame(frame.t, unit_to_latlon(UnitVec3.from_array(center / np.linalg.norm(center))), float(fov))
        for frame, center, fov in zip(frames, limited, fovs)
    ]


def trajectory_from_scanpaths(sps: ScanpathSet, cfg: ThumbnailSetting = ThumbnailSetting()) -> list[TrajectoryFrame]:
    """由一组扫视路径计算缩略图轨迹, 每个采样时刻一帧

    扩散程度扣除单个核自身的扩散, 所以全部路径相同时视场角为 fov_min。
    """
    rate = sps[0].sample_rate_hz
    length = max(len(sp) for sp in sps)
    frames = []
    for k in range(length):
        t = k / rate
        density = kde_timestamp(sps, t, cfg.kappa, cfg.map_height, cfg.map_width)
        mode, spread = kde_mode_and_spread(density)
        excess = max(0.0, spread - kernel_spread(mode, cfg.kappa, cfg.map_height, cfg.map_width))
        frames.append(TrajectoryFrame(t, mode, fov_from_spread(excess, cfg)))
    return smooth_trajectory(frames, cfg)


def thumbnail_trajectory(
    img: EquirectImage,
    model: GanModel,
    cfg: ThumbnailSetting = ThumbnailSetting(),
    seed: int = 0,
) -> list[TrajectoryFrame]:
    """生成 cfg.n 条扫视路径, 再计算缩略图轨迹

    Args:
        img (EquirectImage): 全景图
        model (GanModel): 训练好的网络
        cfg (ThumbnailSetting): 条数, 核集中度, 视场角映射与平滑参数
        seed (int): 生成用的随机种子

    Returns:
        list[TrajectoryFrame]: 1 Hz 的轨迹
    """
    sps = generate(img, cfg.n, model, seed)
    return trajectory_from_scanpaths(sps, cfg)


def upsample_trajectory(frames: Sequence[TrajectoryFrame], factor: int) -> list[TrajectoryFrame]:
    """帧间插入 factor - 1 帧: 中心沿大圆插值, 视场角与时间线性插值"""
    if factor < 1:
        raise GeometryError(f"上采样倍数必须为正, 实际为 {factor}")
    if factor == 1 or len(frames) < 2:
        return list(frames)
    result = []
    for a, b in zip(frames[:-1], frames[1:]):
        va, vb = latlon_to_unit(a.center).to_array(), latlon_to_unit(b.center).to_array()
        for step in range(factor):
            fraction = step / factor
            center = slerp(va, vb, fraction)
            result.append(TrajectoryFrame(
                a.t + (b.t - a.t) * fraction,
                unit_to_latlon(UnitVec3.from_array(center / np.linalg.norm(center))),
                a.fov_deg + (b.fov_deg - a.fov_deg) * fraction,
            ))
    result.append(frames[-1])
    return result


def render_viewport(img: EquirectImage, frame: TrajectoryFrame, out_height: int = 360, out_width: int = 640) -> np.ndarray:
    """以 frame.center 为切点做直线 (日晷) 投影, 水平视场角 frame.fov_deg

    Args:
        img (EquirectImage): 全景图
        frame (TrajectoryFrame): 视口中心与视场角
        out_height (int): 输出高度
        out_width (int): 输出宽度

    Returns:
        np.ndarray: (out_height, out_width, 3) 浮点图像, 双线性采样, 经度方向循环
    """
    if out_height < 1 or out_width < 1:
        raise GeometryError(f"输出尺寸必须为正 {out_height}x{out_width}")
    if not 0 < frame.fov_deg < 180:
        raise GeometryError(f"视场角必须在 (0, 180) 内, 实际为 {frame.fov_deg}")
    half = math.tan(math.radians(frame.fov_deg) / 2)
    u = ((np.arange(out_width) + 0.5) / out_width * 2 - 1) * half
    v = (1 - (np.arange(out_height) + 0.5) / out_height * 2) * half * out_height / out_width
    u, v = np.meshgrid(u, v)
    lat, lon = gnomonic_unproject_array(frame.center.lat, frame.center.lon, u, v)

    height, width = img.height, img.width
    # 左右各补一列做经度回绕, 所以 x 整体右移 1
    map_x = (lon + math.pi) / (2 * math.pi) * width - 0.5 + 1.0
    map_y = (math.pi / 2 - lat) / math.pi * height - 0.5
    pixels = img.pixels.astype(np.float32)
    padded = np.concatenate([pixels[:, -1:], pixels, pixels[:, :1]], axis=1)
    return cv2.remap(
        padded, map_x.astype(np.float32), map_y.astype(np.float32),
        interpolation=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE,
    )


def export_frames(
    img: EquirectImage,
    frames: Sequence[TrajectoryFrame],
    out_dir: str | Path,
    out_height: int = 360,
    out_width: int = 640,
) -> list[Path]:
    """逐帧渲染并保存为 frame_0000.png, frame_0001.png, ..."""
    out_dir = Path(out_dir)
    FileHelper.folder_create(out_dir)
    paths = []
    for index, frame in enumerate(frames):
        path = out_dir / f"frame_{index:04d}.png"
        save_png(path, render_viewport(img, frame, out_height, out_width))
        paths.append(path)
    logger.info(f"已导出 {len(paths)} 帧到 {out_dir}")
    return paths


def trajectory_rows(frames: Sequence[TrajectoryFrame]) -> list[dict]:
    return [
        {"t": f.t, "lat": f.center.lat, "lon": f.center.lon, "fov_deg": f.fov_deg}
        for f in frames
    ]
