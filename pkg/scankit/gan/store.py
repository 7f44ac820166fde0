"""参数仓库与检查点文件

检查点格式 (小端):

    b"SCKT" | u32 版本 | u32 头长度 | JSON 头 | float32 数据

JSON 头记录每个参数的名字与形状, 训练配置, 轮次, 步数与随机数状态;
数据段依次为全部参数, Adam 一阶矩, Adam 二阶矩 (按头中的顺序)。
"""

from pathlib import Path

import json
import struct

import numpy as np

from scankit.consts import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from scankit.exceptions import ModelError
from scankit.log import logger
from scankit.utils.file import FileHelper

_PREFIX = struct.Struct("<4sII")


class ParameterStore:
    """生成器与判别器的全部权重, 梯度与 Adam 累积量; 形状在创建时固定"""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {"g": 0, "d": 0}
        """每个分支已经做过的 Adam 步数"""

    def add(self, name: str, shape: tuple[int, ...], rng: np.random.Generator, fan_in: int | None = None) -> np.ndarray:
        """新建参数, 均匀初始化 U(-a, a), a = 1/√fan_in; fan_in 为 0 时全零"""
        if name in self.params:
            raise ModelError(f"参数 {name} 已存在")
        if fan_in:
            bound = 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        else:
            value = np.zeros(shape)
        self.params[name] = value.astype(np.float64)
        self.grads[name] = np.zeros(shape)
        self.m[name] = np.zeros(shape)
        self.v[name] = np.zeros(shape)
        return self.params[name]

    def names(self, prefix: str = "") -> list[str]:
        return [name for name in self.params if name.startswith(prefix)]

    def zero_grad(self, prefix: str = "") -> None:
        for name in self.names(prefix):
            self.grads[name].fill(0.0)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for value in self.params.values())

    def shapes(self) -> dict[str, list[int]]:
        return {name: list(value.shape) for name, value in self.params.items()}

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for table in ("params", "grads", "m", "v"):
            setattr(other, table, {name: value.copy() for name, value in getattr(self, table).items()})
        other.t = dict(self.t)
        return other

    def load_state(self, other: "ParameterStore") -> None:
        """就地覆盖为 other 的值 (形状必须一致), 网络层持有的数组引用保持有效"""
        if other.shapes() != self.shapes():
            raise ModelError("参数形状与当前网络不一致")
        for table in ("params", "m", "v"):
            mine, theirs = getattr(self, table), getattr(other, table)
            for name in mine:
                mine[name][...] = theirs[name]
        self.t = dict(other.t)

    def __len__(self) -> int:
        return sum(value.size for value in self.params.values())

    def __str__(self):
        return f"参数仓库 {len(self.params)} 个张量, 共 {len(self)} 个参数"


def save_checkpoint(path: str | Path, store: ParameterStore, header: dict | None = None) -> None:
    """写检查点文件 (原子替换)"""
    header = dict(header or {})
    header.update(shapes=store.shapes(), adam_t=store.t)
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    names = list(store.params)
    payload = np.concatenate(
        [table[name].ravel() for table in (store.params, store.m, store.v) for name in names]
        or [np.zeros(0)]
    ).astype("<f4")
    data = _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)) + header_bytes + payload.tobytes()
    FileHelper.atomic_write(Path(path), data)
    logger.debug(f"检查点已写入 {path} ({len(data)} 字节)")


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict]:
    """读检查点文件, 返回 (参数仓库, JSON 头)"""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ModelError(f"检查点不存在: {path}") from None
    if len(data) < _PREFIX.size:
        raise ModelError(f"检查点文件过短: {path}")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ModelError(f"不是检查点文件: {path}")
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"不支持的检查点版本 {version}, 当前版本 {CHECKPOINT_VERSION}")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelError(f"检查点头损坏: {path}") from e

    shapes = {name: tuple(shape) for name, shape in header["shapes"].items()}
    sizes = [int(np.prod(shape)) for shape in shapes.values()]
    payload = np.frombuffer(data, dtype="<f4", offset=_PREFIX.size + header_len)
    if payload.size != 3 * sum(sizes):
        raise ModelError(f"检查点数据长度不符: 期望 {3 * sum(sizes)} 个数, 实际 {payload.size}")

    store = ParameterStore()
    offset = 0
    for table in (store.params, store.m, store.v):
        for (name, shape), size in zip(shapes.items(), sizes):
            table[name] = payload[offset:offset + size].astype(np.float64).reshape(shape)
            offset += size
    store.grads = {name: np.zeros(shape) for name, shape in shapes.items()}
    store.t = {key: int(value) for key, value in header.get("adam_t", {"g": 0, "d": 0}).items()}
    return store, header
