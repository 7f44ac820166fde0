from concurrent.futures import ThreadPoolExecutor

import time

import numpy as np

from scankit.config import TrainConfig
from scankit.exceptions import ModelError
from scankit.gan.network import GanModel, network_input
from scankit.gan.store import load_checkpoint
from scankit.log import logger
from scankit.model import EquirectImage, Scanpath, ScanpathSet
from scankit.utils.image import to_equirect

REFERENCE_THROUGHPUT = 1000.0
"""参考吞吐量 (条/秒)"""


def worker_chunks(n: int, workers: int) -> list[int]:
    """n 条路径尽量均匀地分给各个 worker"""
    base, extra = divmod(n, workers)
    return [base + (1 if index < extra else 0) for index in range(workers)]


def latent_codes(n: int, d_z: int, seed: int, workers: int = 1) -> list[np.ndarray]:
    """每个 worker 的隐变量 z ~ U(-1, 1), 随机流由 SeedSequence(seed).spawn 派生"""
    streams = np.random.SeedSequence(seed).spawn(workers)
    return [
        np.random.default_rng(stream).uniform(-1.0, 1.0, size=(count, d_z))
        for stream, count in zip(streams, worker_chunks(n, workers))
    ]


def _renormalize(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ModelError("生成器输出了零向量")
    return points / norms


def _run(model: GanModel, tensor: np.ndarray, z: np.ndarray, batch_size: int) -> np.ndarray:
    outputs = [model.forward_generator(z[start:start + batch_size], tensor) for start in range(0, len(z), batch_size)]
    return np.concatenate(outputs) if outputs else np.zeros((0, model.cfg.seq_len, 3))


def generate(
    img: EquirectImage,
    n: int,
    model: GanModel,
    seed: int,
    workers: int = 1,
    batch_size: int = 256,
) -> ScanpathSet:
    """为一张全景图批量生成扫视路径

    Args:
        img (EquirectImage): 条件图像, 尺寸不符时先缩放到训练尺寸
        n (int): 路径条数
        model (GanModel): 训练好的网络
        seed (int): 随机种子; (seed, workers) 相同时结果逐位一致
        workers (int): 并行线程数, 每个线程用独立的网络副本与随机流
        batch_size (int): 每次前向的批大小

    Returns:
        ScanpathSet: n 条扫视路径
    """
    if n < 1:
        raise ModelError("生成数量必须为正")
    workers = max(1, min(workers, n))
    cfg = model.cfg
    if (img.height, img.width) != (cfg.image_height, cfg.image_width):
        img = to_equirect(img.pixels, cfg.image_height, img.name)
    tensor = network_input(img, cfg)
    codes = latent_codes(n, cfg.d_z, seed, workers)

    start = time.perf_counter()
    if workers == 1:
        points = _run(model, tensor, codes[0], batch_size)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(lambda z: _run(model.clone(), tensor, z, batch_size), codes)
            points = np.concatenate(list(parts))
    elapsed = max(time.perf_counter() - start, 1e-9)
    logger.info(f"生成 {n} 条扫视路径用时 {elapsed:.3f}s, {n / elapsed:.0f} 条/秒 (参考约 {REFERENCE_THROUGHPUT:.0f} 条/秒)")

    points = _renormalize(points)
    return ScanpathSet([Scanpath(p) for p in points], image_id=img.name)


def load_model(path) -> GanModel:
    """从检查点恢复网络, 网络结构取自检查点头中的训练配置"""
    store, header = load_checkpoint(path)
    if "cfg" not in header:
        raise ModelError(f"检查点 {path} 缺少训练配置")
    return GanModel(TrainConfig(**header["cfg"]), store)
