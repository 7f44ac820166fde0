"""动态时间规整: 硬 DTW, 球面 DTW 与可微的 soft-DTW

soft-DTW 的前向递推用三前驱的 soft-min, 反向递推得到期望对齐矩阵
E = ∂soft-DTW/∂Δ, 再经 ∂δ/∂r 链到原始三维坐标上。
"""

from dataclasses import dataclass
from typing import Literal

import math

import numpy as np

from scankit.consts import CHORD_EPS
from scankit.exceptions import TimewarpError
from scankit.geometry import spherical_distance_array
from scankit.model import Scanpath

INF = math.inf

GroundDistance = Literal["sph", "euclid"]


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """两条序列逐点距离组成的 n×m 矩阵"""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise TimewarpError(f"代价矩阵必须是非空二维矩阵, 实际形状 {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise TimewarpError("代价矩阵必须是非负有限值")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class AlignmentMatrix:
    """单调对齐路径, 从 (0, 0) 到 (n-1, m-1), 每步为 (+1,0), (0,+1) 或 (+1,+1)"""

    path: tuple[tuple[int, int], ...]
    shape: tuple[int, int]

    @property
    def cells(self) -> np.ndarray:
        cells = np.zeros(self.shape, dtype=np.int8)
        for i, j in self.path:
            cells[i, j] = 1
        return cells

    def cost(self, cost: CostMatrix) -> float:
        return float(sum(cost.values[i, j] for i, j in self.path))


@dataclass(frozen=True)
class SoftDtwConfig:
    """gamma > 0 为 soft-DTW, gamma = 0 退化为硬 DTW"""

    gamma: float = 1.0

    def __post_init__(self):
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise TimewarpError(f"gamma 必须为非负有限值, 实际为 {self.gamma}")


def _as_points(sp: Scanpath | np.ndarray) -> np.ndarray:
    points = sp.points if isinstance(sp, Scanpath) else np.asarray(sp, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
        raise TimewarpError(f"序列形状应为 (T, 3), 实际为 {points.shape}")
    return points


def cost_matrix_spherical(r: Scanpath | np.ndarray, s: Scanpath | np.ndarray) -> CostMatrix:
    """Δ_sph(r, s) = [δ_sph(r_i, s_j)]"""
    r, s = _as_points(r), _as_points(s)
    return CostMatrix(spherical_distance_array(r[:, None, :], s[None, :, :]))


def cost_matrix_euclidean(r: Scanpath | np.ndarray, s: Scanpath | np.ndarray) -> CostMatrix:
    """三维参数化下的欧氏距离矩阵 (对照用的数据项)"""
    r, s = _as_points(r), _as_points(s)
    return CostMatrix(np.linalg.norm(r[:, None, :] - s[None, :, :], axis=-1))


def dtw_hard(cost: CostMatrix) -> tuple[float, AlignmentMatrix]:
    """硬 DTW: min_A ⟨A, Δ⟩

    Args:
        cost (CostMatrix): 代价矩阵

    Returns:
        tuple[float, AlignmentMatrix]: 最小路径代价与取得它的路径;
            回溯时同代价优先对角, 其次竖直 (i-1, j), 最后水平 (i, j-1)
    """
    values = cost.values.tolist()
    n, m = cost.shape
    acc = [[INF] * m for _ in range(n)]
    for i in range(n):
        row, prev = acc[i], acc[i - 1] if i else None
        for j in range(m):
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = min(
                    prev[j - 1] if i and j else INF,
                    prev[j] if i else INF,
                    row[j - 1] if j else INF,
                )
            row[j] = values[i][j] + best

    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        candidates = []
        if i and j:
            candidates.append((acc[i - 1][j - 1], i - 1, j - 1))
        if i:
            candidates.append((acc[i - 1][j], i - 1, j))
        if j:
            candidates.append((acc[i][j - 1], i, j - 1))
        # min 取第一个最小值, 顺序即平局规则
        _, i, j = min(candidates, key=lambda item: item[0])
        path.append((i, j))
    path.reverse()
    return acc[n - 1][m - 1], AlignmentMatrix(tuple(path), (n, m))


def _softmin3(a: float, b: float, c: float, gamma: float) -> float:
    low = min(a, b, c)
    if low == INF:
        return INF
    return low - gamma * math.log(
        math.exp((low - a) / gamma) + math.exp((low - b) / gamma) + math.exp((low - c) / gamma)
    )


def _soft_forward(values: list[list[float]], gamma: float) -> list[list[float]]:
    """(n+2)×(m+2) 的累积矩阵 R, 内部下标 1..n, 1..m"""
    n, m = len(values), len(values[0])
    R = [[INF] * (m + 2) for _ in range(n + 2)]
    R[0][0] = 0.0
    for i in range(1, n + 1):
        above, row, cost_row = R[i - 1], R[i], values[i - 1]
        for j in range(1, m + 1):
            row[j] = cost_row[j - 1] + _softmin3(above[j - 1], above[j], row[j - 1], gamma)
    return R


def soft_dtw(cost: CostMatrix, cfg: SoftDtwConfig = SoftDtwConfig()) -> float:
    """soft-DTW^γ(Δ) = min^γ_A ⟨A, Δ⟩

    Args:
        cost (CostMatrix): 代价矩阵
        cfg (SoftDtwConfig): gamma = 0 时与 dtw_hard 完全一致

    Returns:
        float: soft-DTW 值
    """
    if cfg.gamma == 0:
        return dtw_hard(cost)[0]
    n, m = cost.shape
    return _soft_forward(cost.values.tolist(), cfg.gamma)[n][m]


def expected_alignment(cost: CostMatrix, cfg: SoftDtwConfig = SoftDtwConfig()) -> tuple[float, np.ndarray]:
    """soft-DTW 的值与期望对齐矩阵 E = ∂soft-DTW/∂Δ"""
    if cfg.gamma <= 0:
        raise TimewarpError("soft-DTW 的梯度需要 gamma > 0")
    gamma = cfg.gamma
    values = cost.values.tolist()
    n, m = cost.shape
    R = _soft_forward(values, gamma)
    value = R[n][m]

    D = [[0.0] * (m + 2) for _ in range(n + 2)]
    for i in range(n):
        D[i + 1][1:m + 1] = values[i]
    for i in range(1, n + 1):
        R[i][m + 1] = -INF
    for j in range(1, m + 1):
        R[n + 1][j] = -INF
    R[n + 1][m + 1] = R[n][m]

    E = [[0.0] * (m + 2) for _ in range(n + 2)]
    E[n + 1][m + 1] = 1.0
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            r_ij = R[i][j]
            a = math.exp((R[i + 1][j] - r_ij - D[i + 1][j]) / gamma)
            b = math.exp((R[i][j + 1] - r_ij - D[i][j + 1]) / gamma)
            c = math.exp((R[i + 1][j + 1] - r_ij - D[i + 1][j + 1]) / gamma)
            E[i][j] = E[i + 1][j] * a + E[i][j + 1] * b + E[i + 1][j + 1] * c
    return value, np.array(E, dtype=np.float64)[1:n + 1, 1:m + 1]


def soft_dtw_spherical(r: Scanpath | np.ndarray, s: Scanpath | np.ndarray, cfg: SoftDtwConfig = SoftDtwConfig()) -> float:
    """球面 soft-DTW: soft_dtw(cost_matrix_spherical(r, s))"""
    return soft_dtw(cost_matrix_spherical(r, s), cfg)


def _ground_grad(r: np.ndarray, s: np.ndarray, ground: GroundDistance) -> np.ndarray:
    """∂δ(r_i, s_j)/∂r_i, 形状 (n, m, 3); 弦长做 ε 平滑"""
    diff = r[:, None, :] - s[None, :, :]
    chord = np.sqrt(np.sum(diff * diff, axis=-1) + CHORD_EPS * CHORD_EPS)
    if ground == "euclid":
        return diff / chord[..., None]
    # d/dc [2 arcsin(c/2)] = 1 / √(1 - c²/4)
    slope = 1.0 / np.sqrt(np.maximum(1.0 - 0.25 * chord * chord, 1e-12))
    return diff * (slope / chord)[..., None]


def soft_dtw_value_and_grad(
    r: Scanpath | np.ndarray,
    s: Scanpath | np.ndarray,
    cfg: SoftDtwConfig = SoftDtwConfig(),
    ground: GroundDistance = "sph",
) -> tuple[float, np.ndarray]:
    """soft-DTW 值与其对 r 原始三维坐标 (未归一化) 的梯度"""
    r, s = _as_points(r), _as_points(s)
    if cfg.gamma <= 0:
        raise TimewarpError("soft-DTW 的梯度需要 gamma > 0")
    cost = cost_matrix_spherical(r, s) if ground == "sph" else cost_matrix_euclidean(r, s)
    value, E = expected_alignment(cost, cfg)
    grad = np.einsum("ij,ijk->ik", E, _ground_grad(r, s, ground))
    return value, grad


def soft_dtw_grad(r: Scanpath | np.ndarray, s: Scanpath | np.ndarray, cfg: SoftDtwConfig = SoftDtwConfig()) -> np.ndarray:
    """球面 soft-DTW 对 r 的梯度, 形状 (T, 3)

    Args:
        r (Scanpath | np.ndarray): 求导的一侧, 按原始三维坐标求导 (球面归一化的雅可比由调用方负责)
        s (Scanpath | np.ndarray): 参考序列
        cfg (SoftDtwConfig): gamma 必须 > 0

    Returns:
        np.ndarray: (T, 3) 梯度
    """
    return soft_dtw_value_and_grad(r, s, cfg)[1]
