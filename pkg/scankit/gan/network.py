"""条件 GAN 的网络结构

生成器 G(z, y) 与判别器 D(x, y) 各自带一个特征提取器: 两层球面卷积
(采样位置来自球面卷积核网格) 加两层全连接, 输出固定宽度的图像特征。
输入图像默认先拼接两个坐标通道 (CoordConv), cfg.coordconv = False 时只用 RGB。
"""

import numpy as np
from scipy.special import expit

from scankit.config import TrainConfig
from scankit.consts import OUTPUT_NORM_EPS, PROB_CLAMP
from scankit.exceptions import ModelError
from scankit.gan.layers import Dense, Flatten, LeakyReLU, Sequential, SphereConv
from scankit.gan.store import ParameterStore
from scankit.model import EquirectImage


def coordconv_concat(img: EquirectImage | np.ndarray) -> np.ndarray:
    """在 RGB 之后追加列坐标与行坐标两个通道, 各自沿轴线性取值 [-1, 1]

    Args:
        img (EquirectImage | np.ndarray): 全景图或 (H, W, 3) 数组

    Returns:
        np.ndarray: (H, W, 5)
    """
    pixels = img.pixels if isinstance(img, EquirectImage) else np.asarray(img, dtype=np.float64)
    height, width = pixels.shape[:2]
    cols = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    rows = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    col_channel = np.broadcast_to(cols[None, :], (height, width))
    row_channel = np.broadcast_to(rows[:, None], (height, width))
    return np.concatenate([pixels, col_channel[..., None], row_channel[..., None]], axis=-1)


def input_channels(cfg: TrainConfig) -> int:
    return 5 if cfg.coordconv else 3


def network_input(img: EquirectImage | np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """按 cfg.coordconv 决定是否追加坐标通道, 得到 (H, W, 5) 或 (H, W, 3)"""
    if cfg.coordconv:
        return coordconv_concat(img)
    pixels = img.pixels if isinstance(img, EquirectImage) else img
    return np.asarray(pixels, dtype=np.float64)


def project_to_sphere(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """三元组投影到球面 p = u / s, s = √(|u|² + ε²); 返回 (p, s)"""
    scale = np.sqrt(np.sum(raw * raw, axis=-1, keepdims=True) + OUTPUT_NORM_EPS * OUTPUT_NORM_EPS)
    return raw / scale, scale


def project_to_sphere_backward(raw: np.ndarray, scale: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """g_u = g_p / s − u (u·g_p) / s³"""
    return grad / scale - raw * np.sum(raw * grad, axis=-1, keepdims=True) / scale**3


def _feature_extractor(store: ParameterStore, prefix: str, cfg: TrainConfig, rng: np.random.Generator) -> Sequential:
    conv0 = SphereConv(
        store, f"{prefix}.conv0", input_channels(cfg), cfg.conv_channels[0], cfg.kernel_size, cfg.conv_strides[0],
        cfg.image_height, cfg.image_width, rng,
    )
    conv1 = SphereConv(
        store, f"{prefix}.conv1", cfg.conv_channels[0], cfg.conv_channels[1], cfg.kernel_size, cfg.conv_strides[1],
        *conv0.output_shape, rng,
    )
    flat = conv1.output_shape[0] * conv1.output_shape[1] * cfg.conv_channels[1]
    return Sequential(
        conv0, LeakyReLU(cfg.leaky_slope),
        conv1, LeakyReLU(cfg.leaky_slope),
        Flatten(),
        Dense(store, f"{prefix}.fc0", flat, cfg.feature_hidden, rng), LeakyReLU(cfg.leaky_slope),
        Dense(store, f"{prefix}.fc1", cfg.feature_hidden, cfg.feature_width, rng),
    )


def _mlp(store: ParameterStore, prefix: str, fan_in: int, widths: tuple[int, int], fan_out: int, slope: float, rng) -> Sequential:
    return Sequential(
        Dense(store, f"{prefix}.fc0", fan_in, widths[0], rng), LeakyReLU(slope),
        Dense(store, f"{prefix}.fc1", widths[0], widths[1], rng), LeakyReLU(slope),
        Dense(store, f"{prefix}.out", widths[1], fan_out, rng),
    )


class GanModel:
    """生成器与判别器; 参数全部放在同一个 ParameterStore, 名字以 "g." / "d." 开头

    Args:
        cfg (TrainConfig): 网络宽度与输入尺寸
        store (ParameterStore | None): 已有参数 (检查点), None 时按 cfg.seed 初始化
    """

    def __init__(self, cfg: TrainConfig, store: ParameterStore | None = None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.store = ParameterStore()
        out_width = cfg.seq_len * 3

        self.g_features = _feature_extractor(self.store, "g.feat", cfg, rng)
        self.generator = _mlp(self.store, "g.mlp", cfg.d_z + cfg.feature_width, cfg.gen_widths, out_width, cfg.leaky_slope, rng)
        self.d_features = _feature_extractor(self.store, "d.feat", cfg, rng)
        self.discriminator = _mlp(self.store, "d.mlp", out_width + cfg.feature_width, cfg.disc_widths, 1, cfg.leaky_slope, rng)

        if store is not None:
            self.store.load_state(store)

    def clone(self) -> "GanModel":
        """参数独立的副本 (每个线程各用一个, 层的前向缓存不共享)"""
        return GanModel(self.cfg, self.store)

    # 生成器

    def forward_generator(self, z: np.ndarray, image: np.ndarray) -> np.ndarray:
        """z (B, d_z), image (H, W, C) → 球面上的点 (B, T, 3)"""
        z = np.atleast_2d(z)
        if z.shape[1] != self.cfg.d_z:
            raise ModelError(f"隐变量维度应为 {self.cfg.d_z}, 实际为 {z.shape[1]}")
        feat = feature_extract(image, self, "g")
        points, self._g_cache = _generator_head(z, feat, self)
        return points

    def backward_generator(self, grad_points: np.ndarray) -> None:
        """把对输出点的梯度传回全部生成器参数 (累加到 grads)"""
        raw, scale = self._g_cache
        grad_raw = project_to_sphere_backward(raw, scale, grad_points).reshape(raw.shape[0], -1)
        grad_in = self.generator.backward(grad_raw)
        grad_feat = grad_in[:, self.cfg.d_z:].sum(axis=0, keepdims=True)
        self.g_features.backward(grad_feat)

    # 判别器

    def forward_discriminator(self, points: np.ndarray, image: np.ndarray) -> np.ndarray:
        """points (B, T, 3), image (H, W, C) → 概率 (B,)"""
        feat = feature_extract(image, self, "d")
        self._d_cache = _discriminator_head(points, feat, self)
        return self._d_cache[0]

    def backward_discriminator(self, grad_probs: np.ndarray) -> np.ndarray:
        """把对概率的梯度传回判别器参数, 返回对输入点的梯度 (B, T, 3)"""
        probs, mask = self._d_cache
        grad_logit = (grad_probs * probs * (1.0 - probs) * mask)[:, None]
        grad_in = self.discriminator.backward(grad_logit)
        out_width = self.cfg.seq_len * 3
        self.d_features.backward(grad_in[:, out_width:].sum(axis=0, keepdims=True))
        return grad_in[:, :out_width].reshape(-1, self.cfg.seq_len, 3)


def feature_extract(x: np.ndarray, model: GanModel, branch: str = "g") -> np.ndarray:
    """图像特征

    Args:
        x (np.ndarray): network_input 的结果 (H, W, C), 或 (B, H, W, C)
        model (GanModel): 网络
        branch (str): "g" 或 "d", 两个分支的特征提取器互相独立

    Returns:
        np.ndarray: (B, feature_width); 单张输入时 B = 1
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    expected = (model.cfg.image_height, model.cfg.image_width, input_channels(model.cfg))
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ModelError(f"特征提取的输入形状应为 (B, {expected}), 实际为 {x.shape}")
    extractor = model.g_features if branch == "g" else model.d_features
    return extractor.forward(x)


def _broadcast_feat(feat: np.ndarray, batch: int) -> np.ndarray:
    feat = np.atleast_2d(feat)
    return np.repeat(feat, batch, axis=0) if feat.shape[0] == 1 else feat


def _generator_head(z: np.ndarray, feat: np.ndarray, model: GanModel):
    z = np.atleast_2d(z)
    inputs = np.concatenate([z, _broadcast_feat(feat, z.shape[0])], axis=1)
    raw = model.generator.forward(inputs).reshape(z.shape[0], model.cfg.seq_len, 3)
    points, scale = project_to_sphere(raw)
    return points, (raw, scale)


def _discriminator_head(points: np.ndarray, feat: np.ndarray, model: GanModel):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    if points.shape[1:] != (model.cfg.seq_len, 3):
        raise ModelError(f"判别器输入应为 (B, {model.cfg.seq_len}, 3), 实际为 {points.shape}")
    flat = points.reshape(points.shape[0], -1)
    inputs = np.concatenate([flat, _broadcast_feat(feat, flat.shape[0])], axis=1)
    logits = model.discriminator.forward(inputs)[:, 0]
    probs = expit(logits)
    mask = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    return np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP), mask


def generator_forward(z: np.ndarray, feat: np.ndarray, model: GanModel) -> np.ndarray:
    """由隐变量与图像特征生成扫视路径

    Args:
        z (np.ndarray): (B, d_z) 或 (d_z,)
        feat (np.ndarray): (1, feature_width) 或 (B, feature_width)
        model (GanModel): 网络

    Returns:
        np.ndarray: (B, T, 3), 每个点做了平滑的单位化
    """
    return _generator_head(z, feat, model)[0]


def discriminator_forward(sp: np.ndarray, feat: np.ndarray, model: GanModel) -> np.ndarray:
    """扫视路径为真的概率, (B,), 截断在 [1e-7, 1 - 1e-7]"""
    return _discriminator_head(sp, feat, model)[0]
