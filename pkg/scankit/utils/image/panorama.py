from pathlib import Path

import io

import cv2
import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from scankit.exceptions import GeometryError
from scankit.log import logger
from scankit.model import EquirectImage
from scankit.utils.file import FileHelper

__all__ = ["load_panorama", "to_equirect", "to_uint8", "save_png", "heatmap_to_rgb", "save_heatmap"]


def to_equirect(pixels: np.ndarray, height: int | None = None, name: str = "") -> EquirectImage:
    """把 (H, W, 3) 数组整理成 2:1 的全景图

    Args:
        pixels (np.ndarray): uint8 或 [0, 1] 浮点像素
        height (int | None): 目标高度, None 时保持原高度
        name (str): 图像名

    Returns:
        EquirectImage: 宽高比不是 2:1 时按高度重采样并给出警告
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise GeometryError(f"全景图形状应为 (H, W, 3), 实际为 {pixels.shape}")
    if pixels.dtype == np.uint8:
        pixels = pixels.astype(np.float32) / 255.0
    pixels = pixels.astype(np.float32)

    h, w = pixels.shape[:2]
    target_h = height or h
    if w != 2 * h:
        logger.warning(f"全景图 {name or '未命名'} 宽高比为 {w}x{h}, 重采样到 {2 * target_h}x{target_h}")
    if (h, w) != (target_h, 2 * target_h):
        interpolation = cv2.INTER_AREA if target_h < h else cv2.INTER_LINEAR
        pixels = cv2.resize(pixels, (2 * target_h, target_h), interpolation=interpolation)
    return EquirectImage(pixels, name=name)


def load_panorama(path: str | Path, height: int | None = None) -> EquirectImage:
    """读取全景图文件 (PNG/JPEG)"""
    path = Path(path)
    try:
        with open(path, "rb") as file:
            img = PILImage.open(io.BytesIO(file.read())).convert("RGB")
    except FileNotFoundError:
        raise GeometryError(f"全景图不存在: {path}") from None
    except UnidentifiedImageError as e:
        raise GeometryError(f"无法识别的图像文件: {path}") from e
    logger.debug(f"读取全景图 {path} 分辨率 {img.size}")
    return to_equirect(np.array(img), height, name=path.stem)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.dtype == np.uint8:
        return pixels
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    """保存 RGB 或灰度图为 PNG"""
    buffer = io.BytesIO()
    PILImage.fromarray(to_uint8(pixels)).save(buffer, format="PNG")
    FileHelper.atomic_write(Path(path), buffer.getvalue())


def heatmap_to_rgb(density: np.ndarray, colormap: int = cv2.COLORMAP_JET) -> np.ndarray:
    """密度图按最大值归一化后着色, 返回 (H, W, 3) uint8 RGB"""
    density = np.asarray(density, dtype=np.float64)
    peak = density.max()
    scaled = density / peak if peak > 0 else np.zeros_like(density)
    colored = cv2.applyColorMap(to_uint8(scaled), colormap)
    return cv2.cvtColor(colored, cv2.COLOR_BGR2RGB)


def save_heatmap(path: str | Path, density: np.ndarray, background: EquirectImage | None = None, alpha: float = 0.5) -> None:
    """保存热力图, 可叠加在全景图上"""
    rgb = heatmap_to_rgb(density)
    if background is not None:
        base = to_uint8(background.pixels)
        if base.shape[:2] != rgb.shape[:2]:
            rgb = cv2.resize(rgb, (base.shape[1], base.shape[0]), interpolation=cv2.INTER_LINEAR)
        rgb = cv2.addWeighted(base, 1.0 - alpha, rgb, alpha, 0.0)
    save_png(path, rgb)
