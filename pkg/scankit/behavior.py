"""行为分析: 聚合图, 逐时刻的球面核密度, 探索时间与观察者间 ROC

像素约定与 geometry 一致, 面积一律按像素立体角 cos(lat)·Δlat·Δlon 计算。
"""

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import math

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.spatial.distance import jensenshannon

from scankit.exceptions import MetricError
from scankit.geometry import (
    latlon_to_pixel_array,
    latlon_to_unit,
    pixel_centers,
    pixel_solid_angle,
    pixel_unit_vectors,
    spherical_distance,
    spherical_distance_array,
)
from scankit.log import logger
from scankit.model import GazePoint, Scanpath, ScanpathSet


@dataclass(frozen=True, eq=False)
class AggregateMap:
    """H×W 非负, 总和为 1"""

    values: np.ndarray
    blur_sigma: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class DensityMap:
    """单个时刻的球面密度 (每球面度), 按像素立体角积分为 1"""

    values: np.ndarray
    kappa: float
    t: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def mass(self) -> np.ndarray:
        """每个像素的概率质量"""
        return self.values * pixel_solid_angle(*self.shape)

    def integral(self) -> float:
        return float(self.mass.sum())


@dataclass
class ExplorationCurve:
    offsets_deg: np.ndarray
    mean_time: np.ndarray
    """秒; 没有任何路径到达的偏移为 nan"""
    coverage: np.ndarray
    """到达该偏移的路径比例"""

    def rows(self) -> list[dict]:
        return [
            {"offset_deg": float(o), "mean_time": None if math.isnan(t) else float(t), "coverage": float(c)}
            for o, t, c in zip(self.offsets_deg, self.mean_time, self.coverage)
        ]


@dataclass
class RocCurve:
    ladder: np.ndarray
    """显著区域占球面的百分比 n, 从 0 到 100"""
    hit_rate: np.ndarray
    """各路径命中率的平均 (%)"""
    hit_rate_std: np.ndarray
    per_scanpath: np.ndarray = field(repr=False)
    """(路径数, len(ladder))"""

    def rows(self) -> list[dict]:
        return [
            {"n": float(n), "hit_rate": float(h), "std": float(s)}
            for n, h, s in zip(self.ladder, self.hit_rate, self.hit_rate_std)
        ]


def _splat(sps: Iterable[Scanpath], height: int, width: int) -> np.ndarray:
    counts = np.zeros((height, width))
    for sp in sps:
        latlon = sp.latlon()
        rows, cols = latlon_to_pixel_array(latlon[:, 0], latlon[:, 1], height, width)
        np.add.at(counts, (rows, cols), 1.0)
    return counts


def _blur(counts: np.ndarray, blur_sigma: float) -> np.ndarray:
    """高斯模糊, sigma 单位为度; 经度方向循环, 纬度方向在两极反射"""
    if blur_sigma <= 0:
        return counts
    height, width = counts.shape
    blurred = gaussian_filter1d(counts, blur_sigma / (360.0 / width), axis=1, mode="wrap")
    return gaussian_filter1d(blurred, blur_sigma / (180.0 / height), axis=0, mode="reflect")


def _normalized(values: np.ndarray) -> np.ndarray:
    total = values.sum()
    if total <= 0:
        raise MetricError("聚合图没有任何注视点")
    return values / total


def aggregate_map(sps: ScanpathSet, height: int = 64, width: int = 128, blur_sigma: float = 3.0) -> AggregateMap:
    """聚合图: 所有注视点落到像素上, 经度循环的高斯模糊后归一化

    Args:
        sps (ScanpathSet): 扫视路径集合
        height (int): 图高
        width (int): 图宽
        blur_sigma (float): 高斯模糊 sigma (度), 0 为不模糊

    Returns:
        AggregateMap: 总和为 1
    """
    return AggregateMap(_normalized(_blur(_splat(sps, height, width), blur_sigma)), blur_sigma)


def latitude_marginal(agg: AggregateMap) -> tuple[np.ndarray, np.ndarray]:
    """聚合图的纬度边缘分布, 返回 (各行纬度 (度), 各行质量)"""
    lat, _ = pixel_centers(*agg.shape)
    return np.degrees(lat[:, 0]), agg.values.sum(axis=1)


def vmf_kernel(cos_angle: np.ndarray, kappa: float) -> np.ndarray:
    """S² 上的 vMF 密度, 写成 κ/(2π(1−e^{−2κ}))·exp(κ(cosθ − 1)) 避免溢出"""
    return kappa / (2 * math.pi * -math.expm1(-2 * kappa)) * np.exp(kappa * (cos_angle - 1.0))


def _time_index(sp: Scanpath, t: float) -> int:
    return int(math.floor(t * sp.sample_rate_hz + 0.5))


def kde_timestamp(sps: ScanpathSet, t: float, kappa: float = 80.0, height: int = 64, width: int = 128) -> DensityMap:
    """时刻 t 的球面核密度

    每条路径在 t 时刻的注视点放一个集中度 kappa 的 vMF 核, 在像素网格上求值后按立体角重新归一化。
    比 t 短的路径不参与。
    """
    if kappa <= 0:
        raise MetricError(f"kappa 必须为正, 实际为 {kappa}")
    if t < 0:
        raise MetricError(f"时刻必须非负, 实际为 {t}")
    centers = [sp.points[_time_index(sp, t)] for sp in sps if _time_index(sp, t) < len(sp)]
    if not centers:
        raise MetricError(f"没有扫视路径覆盖时刻 {t}s")
    if len(centers) < len(sps):
        logger.debug(f"时刻 {t}s: {len(sps) - len(centers)} 条路径过短, 已跳过")

    directions = pixel_unit_vectors(height, width)
    values = np.zeros((height, width))
    for mu in centers:
        values += vmf_kernel(directions @ mu, kappa)
    values /= np.sum(values * pixel_solid_angle(height, width))
    return DensityMap(values, kappa, t)


def kde_mode_and_spread(d: DensityMap) -> tuple[GazePoint, float]:
    """密度最高的像素中心与按密度加权的平均球面距离

    多个像素同为最大值时取平铺下标最小的一个。
    """
    height, width = d.shape
    index = int(np.argmax(d.values))
    lat, lon = pixel_centers(height, width)
    row, col = divmod(index, width)
    mode = GazePoint(float(lat[row, col]), float(lon[row, col]))
    directions = pixel_unit_vectors(height, width)
    distance = spherical_distance_array(directions, directions[row, col])
    mass = d.mass
    return mode, float(np.sum(mass * distance) / np.sum(mass))


def start_region_partition(sps: ScanpathSet, bin_deg: float = 40.0) -> dict[int, ScanpathSet]:
    """按起点经度分组

    Args:
        sps (ScanpathSet): 扫视路径集合
        bin_deg (float): 分组宽度 (度), 组 k 覆盖 [−180 + k·bin_deg, −180 + (k+1)·bin_deg)

    Returns:
        dict[int, ScanpathSet]: 组号 → 路径集合, 只含非空组, 按组号排序
    """
    if not 0 < bin_deg <= 360:
        raise MetricError(f"分组宽度必须在 (0, 360] 内, 实际为 {bin_deg}")
    n_bins = math.ceil(360.0 / bin_deg - 1e-9)
    groups: dict[int, list[int]] = {}
    for index, sp in enumerate(sps):
        lon_deg = math.degrees(float(sp.latlon()[0, 1]))
        key = min(int(math.floor((lon_deg + 180.0) / bin_deg)), n_bins - 1)
        groups.setdefault(key, []).append(index)
    return {
        key: ScanpathSet([sps[i] for i in members], image_id=sps.image_id, user_ids=[sps.user_ids[i] for i in members])
        for key, members in sorted(groups.items())
    }


def region_bounds(key: int, bin_deg: float = 40.0) -> tuple[float, float]:
    """组号对应的经度区间 (度)"""
    low = -180.0 + key * bin_deg
    return low, min(low + bin_deg, 180.0)


def first_passage_times(sp: Scanpath, offsets_deg: Sequence[float]) -> np.ndarray:
    """一条路径首次到达各经度偏移的时间 (秒), 相邻采样之间线性插值; 未到达为 nan"""
    lon = np.unwrap(sp.latlon()[:, 1])
    offset = np.degrees(np.abs(lon - lon[0]))
    times = np.full(len(offsets_deg), np.nan)
    for j, theta in enumerate(offsets_deg):
        reached = np.nonzero(offset >= theta)[0]
        if reached.size == 0:
            continue
        k = int(reached[0])
        if k == 0:
            times[j] = 0.0
        else:
            fraction = (theta - offset[k - 1]) / (offset[k] - offset[k - 1])
            times[j] = (k - 1 + fraction) / sp.sample_rate_hz
    return times


def exploration_time(sps: ScanpathSet, offsets_deg: Sequence[float] = tuple(range(0, 181, 20))) -> ExplorationCurve:
    """到达各经度偏移 (相对起点) 的平均时间, 只对到达过的路径取平均"""
    offsets = np.asarray(offsets_deg, dtype=np.float64)
    if np.any(offsets < 0) or np.any(offsets > 180):
        raise MetricError("经度偏移必须在 [0, 180] 内")
    times = np.stack([first_passage_times(sp, offsets) for sp in sps])
    reached = ~np.isnan(times)
    coverage = reached.mean(axis=0)
    sums = np.where(reached, times, 0.0).sum(axis=0)
    counts = reached.sum(axis=0)
    mean_time = np.divide(sums, counts, out=np.full(offsets.shape, np.nan), where=counts > 0)
    return ExplorationCurve(offsets, mean_time, coverage)


def _mask_sizes(order: np.ndarray, area: np.ndarray, ladder: np.ndarray) -> np.ndarray:
    """按密度从高到低累积立体角, 到达 n% 时包含的像素个数"""
    cumulative = np.cumsum(area.ravel()[order])
    cumulative /= cumulative[-1]
    sizes = np.searchsorted(cumulative, ladder / 100.0, side="left") + 1
    sizes = np.where(ladder <= 0, 0, sizes)
    return np.where(ladder >= 100, order.size, np.minimum(sizes, order.size))


def roc_congruency(
    sps: ScanpathSet,
    height: int = 64,
    width: int = 128,
    ladder: Sequence[float] = tuple(range(1, 101)),
    blur_sigma: float = 3.0,
) -> RocCurve:
    """观察者间一致性 ROC

    对每条路径 i, 用其余路径的聚合图按密度排序像素, 取立体角占 n% 的最显著区域,
    统计路径 i 的注视点落入该区域的比例。同密度的像素按平铺下标从小到大排序。
    """
    if len(sps) < 2:
        raise MetricError("ROC 至少需要两条扫视路径")
    ladder = np.unique(np.concatenate([[0.0, 100.0], np.asarray(ladder, dtype=np.float64)]))
    if ladder[0] < 0 or ladder[-1] > 100:
        raise MetricError("ROC 的 n 必须在 [0, 100] 内")
    area = pixel_solid_angle(height, width)
    own = [_splat([sp], height, width) for sp in sps]
    total = np.sum(own, axis=0)

    curves = np.zeros((len(sps), ladder.size))
    for i, sp in enumerate(sps):
        others = _blur(total - own[i], blur_sigma)
        order = np.argsort(-others.ravel(), kind="stable")
        rank = np.empty(order.size, dtype=np.int64)
        rank[order] = np.arange(order.size)
        sizes = _mask_sizes(order, area, ladder)
        latlon = sp.latlon()
        rows, cols = latlon_to_pixel_array(latlon[:, 0], latlon[:, 1], height, width)
        point_rank = rank[rows * width + cols]
        curves[i] = 100.0 * np.mean(point_rank[None, :] < sizes[:, None], axis=1)
    return RocCurve(ladder, curves.mean(axis=0), curves.std(axis=0), curves)


@dataclass
class LayoutComparison:
    t: float
    mode_a: GazePoint
    mode_b: GazePoint
    mode_distance: float
    """两个众数之间的球面距离 (弧度)"""
    js_divergence: float
    """两个密度的 Jensen–Shannon 散度 (nats)"""


def layout_kde_comparison(
    sps_a: ScanpathSet,
    sps_b: ScanpathSet,
    times: Sequence[float],
    kappa: float = 80.0,
    height: int = 64,
    width: int = 128,
) -> list[LayoutComparison]:
    """同一场景两种布局的逐时刻核密度比较"""
    results = []
    for t in times:
        da = kde_timestamp(sps_a, t, kappa, height, width)
        db = kde_timestamp(sps_b, t, kappa, height, width)
        mode_a, _ = kde_mode_and_spread(da)
        mode_b, _ = kde_mode_and_spread(db)
        distance = spherical_distance(latlon_to_unit(mode_a), latlon_to_unit(mode_b))
        js = float(jensenshannon(da.mass.ravel(), db.mass.ravel())) ** 2
        results.append(LayoutComparison(float(t), mode_a, mode_b, distance, js))
    return results


def kde_by_start_region(
    sps: ScanpathSet,
    times: Sequence[float],
    kappa: float = 80.0,
    bin_deg: float = 40.0,
    height: int = 64,
    width: int = 128,
) -> dict[int, list[DensityMap]]:
    """按起点经度分组后, 每组逐时刻的核密度"""
    return {
        key: [kde_timestamp(group, t, kappa, height, width) for t in times]
        for key, group in start_region_partition(sps, bin_deg).items()
    }
