"""对抗损失与生成器的数据项

L_G  = E[log(1 − D(G(z, y), y))] + λ · E[soft-DTW_sph(G(z, y), ρ)]
L_D  = E[log D(x, y)] + E[log(1 − D(G(z, y), y))]

生成器最小化 L_G, 判别器最大化 L_D (训练时对 −L_D 做梯度下降)。
"""

from typing import Sequence

import numpy as np

from scankit.config import TrainConfig
from scankit.exceptions import ModelError
from scankit.model import Scanpath
from scankit.timewarp import (
    SoftDtwConfig,
    cost_matrix_euclidean,
    cost_matrix_spherical,
    soft_dtw,
    soft_dtw_value_and_grad,
)

Paths = Sequence[Scanpath | np.ndarray] | np.ndarray


def _points(sp: Scanpath | np.ndarray) -> np.ndarray:
    return sp.points if isinstance(sp, Scanpath) else np.asarray(sp, dtype=np.float64)


def _check_pairs(gen: Paths, gt: Paths):
    if len(gen) != len(gt) or len(gen) == 0:
        raise ModelError(f"生成路径与配对真值的数量不一致: {len(gen)} vs {len(gt)}")


def data_term_value_and_grad(gen: Paths, gt: Paths, cfg: TrainConfig) -> tuple[float, np.ndarray]:
    """数据项 (按 cfg.data_term) 的批均值及其对生成点的梯度 (B, T, 3)"""
    _check_pairs(gen, gt)
    batch = len(gen)
    grads = np.zeros((batch,) + _points(gen[0]).shape)
    total = 0.0
    for i, (g, t) in enumerate(zip(gen, gt)):
        g, t = _points(g), _points(t)
        if cfg.data_term == "mse":
            if g.shape != t.shape:
                raise ModelError(f"MSE 数据项要求等长路径: {g.shape} vs {t.shape}")
            diff = g - t
            total += float(np.mean(np.sum(diff * diff, axis=-1)))
            grads[i] = 2.0 * diff / g.shape[0]
        else:
            ground = "sph" if cfg.data_term == "sph_dtw" else "euclid"
            value, grads[i] = soft_dtw_value_and_grad(g, t, SoftDtwConfig(cfg.gamma), ground)
            total += value
    return total / batch, grads / batch


def data_term(gen: Paths, gt: Paths, cfg: TrainConfig) -> float:
    """数据项的批均值; gamma = 0 时为硬 DTW"""
    _check_pairs(gen, gt)
    if cfg.data_term == "mse":
        return float(np.mean([np.mean(np.sum((_points(g) - _points(t)) ** 2, axis=-1)) for g, t in zip(gen, gt)]))
    cost = cost_matrix_spherical if cfg.data_term == "sph_dtw" else cost_matrix_euclidean
    return float(np.mean([soft_dtw(cost(g, t), SoftDtwConfig(cfg.gamma)) for g, t in zip(gen, gt)]))


def adversarial_generator_term(d_fake: np.ndarray, non_saturating: bool = False) -> tuple[float, np.ndarray]:
    d_fake = np.asarray(d_fake, dtype=np.float64)
    if non_saturating:
        return float(-np.mean(np.log(d_fake))), -1.0 / (d_fake * d_fake.size)
    return float(np.mean(np.log1p(-d_fake))), -1.0 / ((1.0 - d_fake) * d_fake.size)


def loss_generator(d_fake: np.ndarray, gen: Paths, gt: Paths, cfg: TrainConfig) -> float:
    """生成器损失

    Args:
        d_fake (np.ndarray): 判别器对生成路径的输出 (B,)
        gen (Paths): 生成的路径
        gt (Paths): 与 gen 逐条配对的真值路径 ρ
        cfg (TrainConfig): lambda_dtw, gamma, data_term, non_saturating

    Returns:
        float: 对抗项 + lambda_dtw × 数据项
    """
    adversarial, _ = adversarial_generator_term(d_fake, cfg.non_saturating)
    if cfg.lambda_dtw == 0:
        return adversarial
    return adversarial + cfg.lambda_dtw * data_term(gen, gt, cfg)


def loss_generator_and_grad(d_fake: np.ndarray, gen: Paths, gt: Paths, cfg: TrainConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """返回 (损失, ∂L/∂d_fake, ∂L/∂gen)"""
    adversarial, grad_d = adversarial_generator_term(d_fake, cfg.non_saturating)
    if cfg.lambda_dtw == 0:
        return adversarial, grad_d, np.zeros((len(gen),) + _points(gen[0]).shape)
    value, grad_gen = data_term_value_and_grad(gen, gt, cfg)
    return adversarial + cfg.lambda_dtw * value, grad_d, cfg.lambda_dtw * grad_gen


def loss_discriminator(d_real: np.ndarray, d_fake: np.ndarray) -> float:
    """L_D = mean(log d_real) + mean(log(1 − d_fake)), 判别器最大化它"""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    return float(np.mean(np.log(d_real)) + np.mean(np.log1p(-d_fake)))


def loss_discriminator_descent_grad(d_real: np.ndarray, d_fake: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """−L_D 对 d_real 与 d_fake 的梯度"""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    return -1.0 / (d_real * d_real.size), 1.0 / ((1.0 - d_fake) * d_fake.size)
