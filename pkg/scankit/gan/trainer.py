"""训练循环

每个训练步: 判别器更新一次 (真实与生成各一个批次拼成一批), 随后生成器更新
gen_cycles_per_disc 次。一个 epoch 遍历全部增强后的 (图像, 路径集合) 样本一次。
每个 epoch 结束时在验证集上计算球面 soft-DTW, 取最好的 epoch 作为结果。
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import math
import tempfile
import time

import numpy as np

from scankit.config import TrainConfig
from scankit.exceptions import ModelError, TrainingDivergedError
from scankit.gan.augment import augment_longitudinal_shift
from scankit.gan.losses import (
    loss_discriminator,
    loss_discriminator_descent_grad,
    loss_generator_and_grad,
)
from scankit.gan.network import GanModel, network_input
from scankit.gan.optim import Adam
from scankit.gan.store import ParameterStore, load_checkpoint, save_checkpoint
from scankit.log import add_jsonl_sink, logger
from scankit.metrics import resample_nearest
from scankit.model import EquirectImage, ScanpathSet
from scankit.timewarp import SoftDtwConfig, soft_dtw_spherical
from scankit.utils.image import to_equirect

Dataset = Sequence[tuple[EquirectImage, ScanpathSet]]


@dataclass
class TrainingSample:
    image_id: str
    tensor: np.ndarray
    """网络输入张量, (H, W, 5) 或关闭 CoordConv 时的 (H, W, 3)"""
    scanpaths: list[np.ndarray]
    """真值路径, 长度可以不同"""
    real_inputs: np.ndarray
    """重采样到 seq_len 的真值, 判别器的输入 (N, T, 3)"""


@dataclass
class EpochLog:
    epoch: int
    step: int
    loss_g: float
    loss_d: float
    val_dtw: float
    seconds: float


@dataclass
class TrainResult:
    model: GanModel
    """验证集上最好的 epoch 的参数"""
    logs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    initial_val: float = math.inf
    final_store: ParameterStore | None = None


def prepare_samples(dataset: Dataset, cfg: TrainConfig, augment: bool = True) -> list[TrainingSample]:
    """图像缩放到训练尺寸, 做经度平移增强, 转成网络输入"""
    samples = []
    for index, (img, sps) in enumerate(dataset):
        if (img.height, img.width) != (cfg.image_height, cfg.image_width):
            img = to_equirect(img.pixels, cfg.image_height, img.name)
        variants = augment_longitudinal_shift(img, sps, cfg.n_augment, cfg.seed + index) if augment else [(img, sps)]
        for variant_img, variant_sps in variants:
            samples.append(TrainingSample(
                image_id=sps.image_id,
                tensor=network_input(variant_img, cfg),
                scanpaths=[sp.points for sp in variant_sps],
                real_inputs=np.stack([resample_nearest(sp, cfg.seq_len) for sp in variant_sps]),
            ))
    return samples


def validation_dtw(model: GanModel, samples: Sequence[TrainingSample], cfg: TrainConfig) -> float:
    """每张验证图生成 val_samples 条路径 (固定隐变量), 与真值轮流配对, 求球面 soft-DTW 的均值"""
    rng = np.random.default_rng([cfg.seed, 1])
    dtw_cfg = SoftDtwConfig(cfg.gamma)
    values = []
    for sample in samples:
        z = rng.uniform(-1.0, 1.0, size=(cfg.val_samples, cfg.d_z))
        generated = model.forward_generator(z, sample.tensor)
        for i, points in enumerate(generated):
            values.append(soft_dtw_spherical(points, sample.scanpaths[i % len(sample.scanpaths)], dtw_cfg))
    return float(np.mean(values))


class Trainer:
    """按 TrainConfig 训练 GanModel

    Args:
        cfg (TrainConfig): 超参数
        model (GanModel | None): 初始网络, None 时按 cfg.seed 初始化
    """

    def __init__(self, cfg: TrainConfig, model: GanModel | None = None):
        if cfg.gamma <= 0 and cfg.data_term != "mse":
            raise ModelError("训练需要 gamma > 0 (soft-DTW 的梯度)")
        self.cfg = cfg
        self.model = model or GanModel(cfg)
        self.store = self.model.store
        self.rng = np.random.default_rng([cfg.seed, 2])
        self.adam_g = Adam(cfg.lr_g, cfg.adam_betas, cfg.adam_eps)
        self.adam_d = Adam(cfg.lr_d, cfg.adam_betas, cfg.adam_eps)
        self.epoch = 0
        self.step = 0
        self.best_epoch = 0
        self.best_val = math.inf
        self.best_store: ParameterStore | None = None

    # 单步

    def _latents(self, batch: int) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, size=(batch, self.cfg.d_z))

    def discriminator_step(self, sample: TrainingSample) -> float:
        cfg, model = self.cfg, self.model
        real = sample.real_inputs[self.rng.integers(0, len(sample.real_inputs), size=cfg.batch_size)]
        fake = model.forward_generator(self._latents(cfg.batch_size), sample.tensor)

        self.store.zero_grad("d.")
        probs = model.forward_discriminator(np.concatenate([real, fake]), sample.tensor)
        d_real, d_fake = probs[:cfg.batch_size], probs[cfg.batch_size:]
        grad_real, grad_fake = loss_discriminator_descent_grad(d_real, d_fake)
        model.backward_discriminator(np.concatenate([grad_real, grad_fake]))
        self.adam_d.step(self.store, "d")
        return loss_discriminator(d_real, d_fake)

    def generator_step(self, sample: TrainingSample) -> float:
        cfg, model = self.cfg, self.model
        self.store.zero_grad("g.")
        fake = model.forward_generator(self._latents(cfg.batch_size), sample.tensor)
        if not np.all(np.isfinite(fake)):
            self._diverged(math.nan, math.nan)
        # 每条生成路径配对一条均匀抽取的真值
        rho = [sample.scanpaths[i] for i in self.rng.integers(0, len(sample.scanpaths), size=cfg.batch_size)]
        d_fake = model.forward_discriminator(fake, sample.tensor)
        loss, grad_d, grad_points = loss_generator_and_grad(d_fake, fake, rho, cfg)
        grad_points = grad_points + model.backward_discriminator(grad_d)
        model.backward_generator(grad_points)
        self.adam_g.step(self.store, "g")
        return loss

    def train_step(self, sample: TrainingSample) -> tuple[float, float]:
        loss_d = self.discriminator_step(sample)
        loss_g = float(np.mean([self.generator_step(sample) for _ in range(self.cfg.gen_cycles_per_disc)]))
        if not (math.isfinite(loss_g) and math.isfinite(loss_d) and self.store.is_finite()):
            self._diverged(loss_g, loss_d)
        return loss_g, loss_d

    # 检查点

    def _header(self) -> dict:
        return {
            "cfg": self.cfg.model_dump(mode="json"),
            "epoch": self.epoch,
            "step": self.step,
            "best_epoch": self.best_epoch,
            "best_val": self.best_val if math.isfinite(self.best_val) else None,
            "rng_state": self.rng.bit_generator.state,
        }

    def save_resume(self) -> Path | None:
        if not self.cfg.checkpoint_path:
            return None
        path = Path(f"{self.cfg.checkpoint_path}.resume")
        save_checkpoint(path, self.store, self._header())
        if self.best_store is not None:
            save_checkpoint(Path(f"{self.cfg.checkpoint_path}.resume.best"), self.best_store, self._header())
        return path

    def load_resume(self, path: str | Path) -> None:
        """从 save_resume 写出的文件继续训练"""
        store, header = load_checkpoint(path)
        self.store.load_state(store)
        self.epoch = int(header["epoch"])
        self.step = int(header["step"])
        self.best_epoch = int(header.get("best_epoch", 0))
        self.best_val = header["best_val"] if header.get("best_val") is not None else math.inf
        self.rng.bit_generator.state = header["rng_state"]
        best_path = Path(f"{path}.best")
        if best_path.exists():
            self.best_store = load_checkpoint(best_path)[0]
        logger.info(f"从 {path} 恢复训练: 第 {self.epoch} 轮, 第 {self.step} 步")

    def _diverged(self, loss_g: float, loss_d: float):
        if self.cfg.checkpoint_path:
            dump = Path(f"{self.cfg.checkpoint_path}.diverged")
        else:
            dump = Path(tempfile.gettempdir()) / f"scankit-diverged-{self.step}.sckt"
        header = self._header() | {"loss_g": repr(loss_g), "loss_d": repr(loss_d)}
        save_checkpoint(dump, self.store, header)
        logger.error(f"第 {self.epoch + 1} 轮第 {self.step} 步损失非有限 (G={loss_g}, D={loss_d}), 状态已保存到 {dump}")
        raise TrainingDivergedError(f"训练发散: loss_g={loss_g}, loss_d={loss_d}", dump)

    # 主循环

    def fit(
        self,
        samples: Sequence[TrainingSample],
        val_samples: Sequence[TrainingSample],
        on_epoch: Callable[[EpochLog], None] | None = None,
    ) -> TrainResult:
        cfg = self.cfg
        if not samples:
            raise ModelError("训练集为空")
        sink = add_jsonl_sink(Path(cfg.log_path)) if cfg.log_path else None
        result = TrainResult(model=self.model, initial_val=validation_dtw(self.model, val_samples, cfg))
        logger.info(f"初始验证 soft-DTW = {result.initial_val:.4f}, {self.store}")
        try:
            while self.epoch < cfg.epochs and (cfg.max_steps is None or self.step < cfg.max_steps):
                start = time.perf_counter()
                losses = []
                for index in self.rng.permutation(len(samples)):
                    if cfg.max_steps is not None and self.step >= cfg.max_steps:
                        break
                    losses.append(self.train_step(samples[index]))
                    self.step += 1
                self.epoch += 1

                val = validation_dtw(self.model, val_samples, cfg)
                log = EpochLog(
                    epoch=self.epoch,
                    step=self.step,
                    loss_g=float(np.mean([g for g, _ in losses])) if losses else math.nan,
                    loss_d=float(np.mean([d for _, d in losses])) if losses else math.nan,
                    val_dtw=val,
                    seconds=time.perf_counter() - start,
                )
                result.logs.append(log)
                if val < self.best_val:
                    self.best_epoch, self.best_val, self.best_store = self.epoch, val, self.store.copy()
                logger.bind(epoch_log=True, **asdict(log)).info("epoch")
                logger.info(
                    f"第 {log.epoch} 轮: G={log.loss_g:.4f} D={log.loss_d:.4f} "
                    f"验证 soft-DTW={val:.4f} (最好第 {self.best_epoch} 轮) 用时 {log.seconds:.1f}s"
                )
                self.save_resume()
                if on_epoch:
                    on_epoch(log)
        except KeyboardInterrupt:
            path = self.save_resume()
            logger.warning(f"训练被中断于第 {self.step} 步" + (f", 状态已保存到 {path}" if path else ""))
            raise
        finally:
            if sink is not None:
                logger.remove(sink)

        result.final_store = self.store.copy()
        if self.best_store is not None:
            result.model = GanModel(cfg, self.best_store)
        result.best_epoch = self.best_epoch
        result.best_val = self.best_val if self.best_store is not None else result.initial_val
        if cfg.checkpoint_path:
            save_checkpoint(Path(cfg.checkpoint_path), result.model.store, self._header() | {"best_epoch": result.best_epoch})
            logger.info(f"最好的第 {result.best_epoch} 轮参数已保存到 {cfg.checkpoint_path}")
        return result


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    val_dataset: Dataset | None = None,
    resume: str | Path | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """训练条件 GAN

    Args:
        dataset (Dataset): (全景图, 扫视路径集合) 列表
        cfg (TrainConfig): 超参数
        val_dataset (Dataset | None): 验证集, 默认使用未增强的训练集
        resume (str | Path | None): 续训文件
        on_epoch (Callable | None): 每轮结束的回调

    Returns:
        TrainResult: 最好 epoch 的网络与逐轮日志; epochs = 0 时网络即初始化结果
    """
    if not dataset:
        raise ModelError("训练集为空")
    trainer = Trainer(cfg)
    if resume is not None:
        trainer.load_resume(resume)
    samples = prepare_samples(dataset, cfg)
    val_samples = prepare_samples(val_dataset or dataset, cfg, augment=False)
    logger.info(f"训练样本 {len(samples)} 个 (增强 ×{cfg.n_augment}), 验证样本 {len(val_samples)} 个")
    return trainer.fit(samples, val_samples, on_epoch)
