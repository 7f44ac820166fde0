"""扫视路径相似度指标与评估协议

指标 (均基于球面距离 δ_sph):

- 直接位置: MAN, EYE
- 字符串: LEV, SMT (先量化到经纬度网格)
- 曲线: HAU, FRE
- 时间序列: DTW, TDE
- 交叉递归: REC, DET, LAM, CORM
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable

import json
import math

import numpy as np

from pydantic import BaseModel, Field
from rapidfuzz.distance import Levenshtein

from scankit.base import get_metric, metrics, register_metric
from scankit.config import MetricSetting
from scankit.exceptions import MetricError
from scankit.geometry import latlon_to_unit_array, spherical_distance_array
from scankit.log import logger
from scankit.model import Scanpath, ScanpathSet
from scankit.timewarp import cost_matrix_spherical, dtw_hard

SYMBOL_BASE = 0x100
"""量化字符串的起始码位 (避开控制字符)"""


@dataclass(frozen=True)
class QuantizationGrid:
    """经纬度网格, n_lat 行 × n_lon 列, 平铺整个球面; 第 0 行在北, 第 0 列从经度 -π 开始"""

    n_lat: int = 9
    n_lon: int = 18

    def __post_init__(self):
        if self.n_lat < 1 or self.n_lon < 1:
            raise MetricError(f"网格尺寸必须为正 {self.n_lat}x{self.n_lon}")
        if self.n_lat * self.n_lon > 50000:
            raise MetricError("网格过细, 字符表超出范围")

    @property
    def size(self) -> int:
        return self.n_lat * self.n_lon

    def bin_index(self, sp: Scanpath) -> np.ndarray:
        latlon = sp.latlon()
        rows = np.floor((math.pi / 2 - latlon[:, 0]) / math.pi * self.n_lat).astype(np.int64)
        cols = np.floor((latlon[:, 1] + math.pi) / (2 * math.pi) * self.n_lon).astype(np.int64)
        return np.clip(rows, 0, self.n_lat - 1) * self.n_lon + np.mod(cols, self.n_lon)

    def bin_centers(self) -> np.ndarray:
        """每个格子中心的单位向量, (size, 3)"""
        lat = math.pi / 2 - (np.arange(self.n_lat) + 0.5) / self.n_lat * math.pi
        lon = (np.arange(self.n_lon) + 0.5) / self.n_lon * 2 * math.pi - math.pi
        lat, lon = np.meshgrid(lat, lon, indexing="ij")
        return latlon_to_unit_array(lat.ravel(), lon.ravel())


@dataclass(frozen=True)
class RecurrenceConfig:
    radius: float = 0.25
    min_line: int = 2

    def __post_init__(self):
        if not 0 < self.radius < math.pi:
            raise MetricError(f"递归半径必须在 (0, π) 内, 实际为 {self.radius}")
        if self.min_line < 2:
            raise MetricError(f"最短线长必须 >= 2, 实际为 {self.min_line}")


class MetricReport(BaseModel):
    """一张图上各指标在某个比较协议下的均值, 附带完整的指标参数"""

    image_id: str = ""
    protocol: str = "pairwise"
    MAN: float | None = None
    EYE: float | None = None
    LEV: float | None = None
    SMT: float | None = Field(None, ge=0, le=1)
    HAU: float | None = None
    FRE: float | None = None
    DTW: float | None = None
    TDE: float | None = None
    REC: float | None = Field(None, ge=0, le=100)
    DET: float | None = Field(None, ge=0, le=100)
    LAM: float | None = Field(None, ge=0, le=100)
    CORM: float | None = None
    config: dict = {}

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in metrics if getattr(self, name) is not None}

    def to_text(self) -> str:
        """扁平的 key=value 文本, 每行一个"""
        lines = [f"image_id={self.image_id}", f"protocol={self.protocol}"]
        lines += [f"{name}={value:.6f}" for name, value in self.values().items()]
        lines += [f"config.{key}={value}" for key, value in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), ensure_ascii=False)


def quantize(sp: Scanpath, grid: QuantizationGrid = QuantizationGrid()) -> str:
    """把扫视路径量化成字符串, 每个注视点一个字符 (所在格子的编号)"""
    return "".join(chr(SYMBOL_BASE + int(index)) for index in grid.bin_index(sp))


def _distances(a: Scanpath, b: Scanpath) -> np.ndarray:
    return cost_matrix_spherical(a, b).values


@register_metric("MAN")
def mannan(a: Scanpath, b: Scanpath) -> float:
    """Mannan 距离: 双向最近邻距离的平均 (弧度)"""
    d = _distances(a, b)
    return float((d.min(axis=1).sum() + d.min(axis=0).sum()) / (d.shape[0] + d.shape[1]))


@register_metric("EYE")
def eyenalysis(a: Scanpath, b: Scanpath) -> float:
    """Eyenalysis 双重映射距离 (弧度)"""
    d = _distances(a, b)
    return float((d.min(axis=1).sum() + d.min(axis=0).sum()) / max(d.shape))


@register_metric("LEV", settings=("n_lat", "n_lon"))
def levenshtein(a: Scanpath, b: Scanpath, n_lat: int = 9, n_lon: int = 18) -> int:
    """量化字符串之间的编辑距离 (插入, 删除, 替换代价均为 1)"""
    grid = QuantizationGrid(n_lat, n_lon)
    return Levenshtein.distance(quantize(a, grid), quantize(b, grid))


@lru_cache(maxsize=8)
def _bin_similarity(n_lat: int, n_lon: int, max_score: float) -> np.ndarray:
    centers = QuantizationGrid(n_lat, n_lon).bin_centers()
    distance = spherical_distance_array(centers[:, None, :], centers[None, :, :])
    return max_score - distance / math.pi * max_score


def needleman_wunsch(seq_a: Iterable[int], seq_b: Iterable[int], score_fn: Callable[[int, int], float], gap_penalty: float = 0.0) -> float:
    """全局序列比对的最高得分; gap_penalty 为每个空位的得分 (通常 <= 0)"""
    seq_a, seq_b = list(seq_a), list(seq_b)
    n, m = len(seq_a), len(seq_b)
    prev = [j * gap_penalty for j in range(m + 1)]
    for i in range(1, n + 1):
        row = [i * gap_penalty] + [0.0] * m
        for j in range(1, m + 1):
            row[j] = max(
                prev[j - 1] + score_fn(seq_a[i - 1], seq_b[j - 1]),
                prev[j] + gap_penalty,
                row[j - 1] + gap_penalty,
            )
        prev = row
    return prev[m]


@register_metric("SMT", lower_is_better=False, settings=("n_lat", "n_lon", "scanmatch_gap", "scanmatch_max_score"))
def scanmatch(
    a: Scanpath,
    b: Scanpath,
    n_lat: int = 9,
    n_lon: int = 18,
    scanmatch_gap: float = 0.0,
    scanmatch_max_score: float = 1.0,
    score_fn: Callable[[int, int], float] | None = None,
) -> float:
    """ScanMatch: 带替换得分矩阵的 Needleman–Wunsch 比对, 归一化到 [0, 1]

    Args:
        a (Scanpath): 扫视路径
        b (Scanpath): 扫视路径
        n_lat (int): 量化网格行数
        n_lon (int): 量化网格列数
        scanmatch_gap (float): 空位得分
        scanmatch_max_score (float): 相同格子的得分, 也是归一化的上界
        score_fn (Callable): 自定义的格子对得分; 默认按格子中心的球面距离线性递减

    Returns:
        float: 比对得分 / (max_score · max(len_a, len_b))
    """
    grid = QuantizationGrid(n_lat, n_lon)
    if score_fn is None:
        table = _bin_similarity(n_lat, n_lon, scanmatch_max_score)

        def score_fn(x: int, y: int) -> float:
            return float(table[x, y])

    bins_a, bins_b = grid.bin_index(a).tolist(), grid.bin_index(b).tolist()
    score = needleman_wunsch(bins_a, bins_b, score_fn, scanmatch_gap)
    normalized = score / (scanmatch_max_score * max(len(bins_a), len(bins_b)))
    return float(min(1.0, max(0.0, normalized)))


@register_metric("HAU")
def hausdorff(a: Scanpath, b: Scanpath) -> float:
    """双向 Hausdorff 距离 (弧度)"""
    d = _distances(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


@register_metric("FRE")
def frechet(a: Scanpath, b: Scanpath) -> float:
    """离散 Fréchet 距离 (弧度), 按动态规划计算"""
    d = _distances(a, b).tolist()
    n, m = len(d), len(d[0])
    ca = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                reach = 0.0
            elif i == 0:
                reach = ca[0][j - 1]
            elif j == 0:
                reach = ca[i - 1][0]
            else:
                reach = min(ca[i - 1][j], ca[i - 1][j - 1], ca[i][j - 1])
            ca[i][j] = max(reach, d[i][j])
    return ca[n - 1][m - 1]


@register_metric("DTW")
def dtw_metric(a: Scanpath, b: Scanpath) -> float:
    """球面距离下的硬 DTW (弧度)"""
    return dtw_hard(cost_matrix_spherical(a, b))[0]


@register_metric("TDE", settings=("tde_k", "tde_stride"))
def tde(a: Scanpath, b: Scanpath, tde_k: int = 2, tde_stride: int = 1) -> float:
    """时延嵌入距离

    a 按 stride 取长度为 k 的子路径, 每个子路径与 b 的所有长度 k 子路径求 Hausdorff 距离取最小, 再对 a 的子路径取平均。
    该指标不对称。
    """
    if tde_k < 1 or tde_stride < 1:
        raise MetricError("TDE 的 k 与 stride 必须为正")
    if tde_k > min(len(a), len(b)):
        raise MetricError(f"TDE 的 k={tde_k} 超过路径长度 {min(len(a), len(b))}")
    d = _distances(a, b)
    starts_a = range(0, len(a) - tde_k + 1, tde_stride)
    starts_b = range(0, len(b) - tde_k + 1)
    total = 0.0
    for i in starts_a:
        best = math.inf
        for j in starts_b:
            block = d[i:i + tde_k, j:j + tde_k]
            best = min(best, max(block.min(axis=1).max(), block.min(axis=0).max()))
        total += best
    return total / len(starts_a)


def resample_nearest(sp: Scanpath, length: int) -> np.ndarray:
    """按最近下标把路径重采样到 length 个点"""
    n = len(sp)
    if n == length:
        return sp.points
    if length == 1:
        return sp.points[:1]
    index = np.floor(np.arange(length) * (n - 1) / (length - 1) + 0.5).astype(np.int64)
    return sp.points[index]


def _runs_mask(line: np.ndarray, min_line: int) -> np.ndarray:
    mask = np.zeros(line.shape[0], dtype=bool)
    start = None
    for k in range(line.shape[0] + 1):
        on = k < line.shape[0] and bool(line[k])
        if on and start is None:
            start = k
        elif not on and start is not None:
            if k - start >= min_line:
                mask[start:k] = True
            start = None
    return mask


def recurrence_matrix(a: Scanpath, b: Scanpath, radius: float) -> np.ndarray:
    """交叉递归矩阵, 较短的路径先按最近下标重采样到等长"""
    length = max(len(a), len(b))
    pa, pb = resample_nearest(a, length), resample_nearest(b, length)
    return spherical_distance_array(pa[:, None, :], pb[None, :, :]) <= radius


def cross_recurrence(a: Scanpath, b: Scanpath, cfg: RecurrenceConfig = RecurrenceConfig()) -> tuple[float, float, float, float]:
    """交叉递归分析

    Args:
        a (Scanpath): 扫视路径
        b (Scanpath): 扫视路径
        cfg (RecurrenceConfig): 递归半径与最短线长

    Returns:
        tuple[float, float, float, float]: (REC, DET, LAM, CORM), 均为百分比; 无递归点时全为 0
    """
    r = recurrence_matrix(a, b, cfg.radius)
    n = r.shape[0]
    count = int(r.sum())
    if count == 0:
        return 0.0, 0.0, 0.0, 0.0

    diagonal = np.zeros_like(r)
    for offset in range(-(n - 1), n):
        rows = np.arange(max(0, -offset), min(n, n - offset))
        diagonal[rows, rows + offset] = _runs_mask(r[rows, rows + offset], cfg.min_line)

    laminar = np.zeros_like(r)
    for k in range(n):
        laminar[k, :] |= _runs_mask(r[k, :], cfg.min_line)
        laminar[:, k] |= _runs_mask(r[:, k], cfg.min_line)

    rec = 100.0 * count / (n * n)
    det = 100.0 * diagonal.sum() / count
    lam = 100.0 * laminar.sum() / count
    i, j = np.nonzero(r)
    corm = 100.0 * float(np.sum(j - i)) / ((n - 1) * count) if n > 1 else 0.0
    return rec, det, lam, corm


def _recurrence_component(index: int):
    def metric(a: Scanpath, b: Scanpath, recurrence_radius: float = 0.25, min_line: int = 2) -> float:
        return cross_recurrence(a, b, RecurrenceConfig(recurrence_radius, min_line))[index]

    return metric


for _index, _name in enumerate(("REC", "DET", "LAM", "CORM")):
    register_metric(_name, lower_is_better=False, settings=("recurrence_radius", "min_line"))(
        _recurrence_component(_index)
    )


def pairwise_eval(gen: ScanpathSet, gt: ScanpathSet, metric: Callable[[Scanpath, Scanpath], float]) -> float:
    """生成集合 × 真值集合的全部配对取平均 (固定下标顺序求和)"""
    if len(gen) == 0 or len(gt) == 0:
        raise MetricError("比较的扫视路径集合为空")
    values = np.array([[metric(g, t) for t in gt] for g in gen], dtype=np.float64)
    return float(values.sum() / values.size)


def human_baseline(gt: ScanpathSet, metric: Callable[[Scanpath, Scanpath], float]) -> float:
    """真值集合内所有有序对 (i ≠ j) 的平均, 作为人类基线"""
    if len(gt) < 2:
        raise MetricError(f"人类基线至少需要两条扫视路径, {gt.image_id!r} 只有 {len(gt)} 条")
    values = [metric(gt[i], gt[j]) for i in range(len(gt)) for j in range(len(gt)) if i != j]
    return float(np.sum(values) / len(values))


def random_baseline(T: int, n: int, seed: int, image_id: str = "random") -> ScanpathSet:
    """随机基线: 在等距柱状图上均匀采样注视点 (经纬度矩形内均匀, 不是球面均匀)"""
    if n < 1:
        raise MetricError("随机基线至少需要一条扫视路径")
    if T < 1:
        raise MetricError("随机基线的路径长度必须为正")
    rng = np.random.default_rng(seed)
    lat = rng.uniform(-math.pi / 2, math.pi / 2, size=(n, T))
    lon = rng.uniform(-math.pi, math.pi, size=(n, T))
    points = latlon_to_unit_array(lat, lon)
    return ScanpathSet([Scanpath(p) for p in points], image_id=image_id)


def bind_metric(name: str, cfg: MetricSetting = MetricSetting()) -> Callable[[Scanpath, Scanpath], float]:
    """按配置绑定指标参数, 得到二元函数"""
    spec = get_metric(name)
    kwargs = {key: getattr(cfg, key) for key in spec.settings}
    return lambda a, b: float(spec(a, b, **kwargs))


def _clamp_tde_window(image_id: str, cfg: MetricSetting, sets: Iterable[ScanpathSet]) -> MetricSetting:
    """TDE 的窗口长度不超过参与比较的最短路径"""
    lengths = [len(sp) for group in sets for sp in group]
    shortest = min(lengths, default=cfg.tde_k)
    if cfg.tde_k <= shortest:
        return cfg
    logger.warning(f"{image_id}: 最短路径只有 {shortest} 个注视点, TDE 窗口 k 从 {cfg.tde_k} 降为 {shortest}")
    return cfg.model_copy(update={"tde_k": shortest})


def _report(
    image_id: str,
    protocol: str,
    cfg: MetricSetting,
    compute: Callable[[Callable], float],
    names: Iterable[str] | None,
    sets: Iterable[ScanpathSet] = (),
) -> MetricReport:
    names = list(names) if names else list(metrics)
    values = {}
    used = cfg
    for name in names:
        spec = get_metric(name)
        bound_cfg = cfg
        if spec.name == "TDE" and sets:
            bound_cfg = used = _clamp_tde_window(image_id, cfg, sets)
        values[spec.name] = compute(bind_metric(spec.name, bound_cfg))
        logger.debug(f"{image_id} {protocol} {spec.name}={values[spec.name]:.4f}")
    return MetricReport(image_id=image_id, protocol=protocol, config=used.model_dump(), **values)


def evaluate(gen: ScanpathSet, gt: ScanpathSet, cfg: MetricSetting = MetricSetting(), names: Iterable[str] | None = None) -> MetricReport:
    """生成集合对真值集合的全部指标"""
    return _report(gt.image_id, "pairwise", cfg, lambda metric: pairwise_eval(gen, gt, metric), names, (gen, gt))


def human_baseline_report(gt: ScanpathSet, cfg: MetricSetting = MetricSetting(), names: Iterable[str] | None = None) -> MetricReport:
    return _report(gt.image_id, "human_baseline", cfg, lambda metric: human_baseline(gt, metric), names, (gt,))


def random_baseline_report(gt: ScanpathSet, cfg: MetricSetting = MetricSetting(), n: int | None = None, seed: int = 0, names: Iterable[str] | None = None) -> MetricReport:
    T = max(len(sp) for sp in gt)
    random_set = random_baseline(T, n or len(gt), seed)
    report = _report(gt.image_id, "random_baseline", cfg, lambda metric: pairwise_eval(random_set, gt, metric), names, (random_set, gt))
    report.config["random_seed"] = seed
    return report
