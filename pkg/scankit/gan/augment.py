import math

import numpy as np

from scankit.geometry import rotate_lon
from scankit.model import EquirectImage, Scanpath, ScanpathSet


def shift_longitude(img: EquirectImage, sps: ScanpathSet, shift_cols: int) -> tuple[EquirectImage, ScanpathSet]:
    """图像按列循环平移 shift_cols, 所有注视点的经度平移相同的角度 shift_cols·2π/W"""
    shift_cols = int(shift_cols) % img.width
    angle = shift_cols * 2 * math.pi / img.width
    pixels = np.roll(img.pixels, shift_cols, axis=1)
    shifted = [Scanpath(rotate_lon(sp.points, angle), sp.sample_rate_hz) for sp in sps]
    return (
        EquirectImage(pixels, name=img.name),
        ScanpathSet(shifted, image_id=sps.image_id, user_ids=list(sps.user_ids)),
    )


def augment_longitudinal_shift(img: EquirectImage, sps: ScanpathSet, n: int = 6, seed: int = 0) -> list[tuple[EquirectImage, ScanpathSet]]:
    """随机经度平移的 n 个变体

    Args:
        img (EquirectImage): 全景图
        sps (ScanpathSet): 该图的扫视路径
        n (int): 变体数
        seed (int): 随机种子, 平移量在 [0, W) 列中均匀抽取

    Returns:
        list[tuple[EquirectImage, ScanpathSet]]: n 个 (图像, 路径集合)
    """
    rng = np.random.default_rng(seed)
    offsets = rng.integers(0, img.width, size=n)
    return [shift_longitude(img, sps, int(offset)) for offset in offsets]
