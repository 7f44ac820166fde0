import math

import numpy as np

from scankit.consts import SCANPATH_LENGTH
from scankit.geometry import latlon_to_unit_array, pixel_unit_vectors, sample_vmf
from scankit.model import EquirectImage, Scanpath, ScanpathSet


def make_blob_dataset(
    n_images: int = 4,
    n_scanpaths: int = 8,
    height: int = 16,
    seed: int = 0,
    length: int = SCANPATH_LENGTH,
    kappa: float = 40.0,
    max_lat_deg: float = 45.0,
) -> list[tuple[EquirectImage, ScanpathSet]]:
    """合成数据: 暗背景上一个高斯亮斑, 扫视路径围绕亮斑中心按 vMF 分布取点

    亮斑中心的纬度在 ±max_lat_deg 内均匀, 经度在整圈内均匀。
    """
    rng = np.random.default_rng(seed)
    pixels_dirs = pixel_unit_vectors(height, 2 * height)
    dataset = []
    for index in range(n_images):
        lat = rng.uniform(-1.0, 1.0) * math.radians(max_lat_deg)
        lon = rng.uniform(-math.pi, math.pi)
        center = latlon_to_unit_array(lat, lon)
        # 亮斑: exp(κ_img (cos θ - 1)), 宽约 15°
        blob = np.exp(15.0 * (pixels_dirs @ center - 1.0))
        pixels = 0.1 + 0.9 * blob[..., None] * np.array([1.0, 0.9, 0.6])
        image = EquirectImage(pixels, name=f"blob{index:03d}")
        scanpaths = [Scanpath(sample_vmf(center, kappa, length, rng)) for _ in range(n_scanpaths)]
        dataset.append((image, ScanpathSet(scanpaths, image_id=image.name)))
    return dataset
