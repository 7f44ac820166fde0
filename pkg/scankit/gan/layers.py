"""手写反向传播的网络层

每层在 forward 时缓存输入, backward 时把参数梯度累加进 ParameterStore.grads,
并返回对输入的梯度。一个层同一时刻只缓存一次前向。
"""

import math

import numpy as np

from scankit.exceptions import ModelError
from scankit.geometry import kernel_grid_array, latlon_to_pixel_array, pixel_centers
from scankit.gan.store import ParameterStore


class Module:
    def __init__(self):
        self._input: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input = x
        return self._compute_output(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._input is None:
            raise ModelError(f"{self!r} 在前向之前调用了反向")
        return self._compute_input_grad(self._input, grad)

    def _compute_output(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _compute_input_grad(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return type(self).__name__


class Dense(Module):
    """全连接层 y = x·W + b"""

    def __init__(self, store: ParameterStore, name: str, fan_in: int, fan_out: int, rng: np.random.Generator):
        super().__init__()
        self.store = store
        self.name = name
        self.fan_in = fan_in
        store.add(f"{name}.w", (fan_in, fan_out), rng, fan_in)
        store.add(f"{name}.b", (fan_out,), rng, fan_in)

    def _compute_output(self, x):
        if x.shape[-1] != self.fan_in:
            raise ModelError(f"{self.name} 期望输入宽度 {self.fan_in}, 实际为 {x.shape[-1]}")
        return x @ self.store.params[f"{self.name}.w"] + self.store.params[f"{self.name}.b"]

    def _compute_input_grad(self, x, grad):
        self.store.grads[f"{self.name}.w"] += x.T @ grad
        self.store.grads[f"{self.name}.b"] += grad.sum(axis=0)
        return grad @ self.store.params[f"{self.name}.w"].T

    def __repr__(self):
        return f"Dense({self.name})"


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope

    def _compute_output(self, x):
        return np.where(x > 0, x, self.slope * x)

    def _compute_input_grad(self, x, grad):
        return grad * np.where(x > 0, 1.0, self.slope)


class Flatten(Module):
    def _compute_output(self, x):
        return x.reshape(x.shape[0], -1)

    def _compute_input_grad(self, x, grad):
        return grad.reshape(x.shape)


class SphereConv(Module):
    """球面卷积: 每个输出像素在球面上取 k×k 的日晷网格, 按最近像素采样输入

    输入输出均为 (B, H, W, C)。输出分辨率为 ceil(H/stride) × ceil(W/stride),
    采样网格的角步长为 min(stride·π/H, 0.45π/k), 保证整个核落在半球内。
    """

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int,
        height: int,
        width: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.store = store
        self.name = name
        self.in_channels = in_channels
        self.input_shape = (height, width)
        self.output_shape = (max(1, math.ceil(height / stride)), max(1, math.ceil(width / stride)))
        self.k = kernel_size
        self.angular_step = min(stride * math.pi / height, 0.45 * math.pi / kernel_size)

        fan_in = kernel_size * kernel_size * in_channels
        store.add(f"{name}.w", (fan_in, out_channels), rng, fan_in)
        store.add(f"{name}.b", (out_channels,), rng, fan_in)
        self.index = self._sampling_index()

    def _sampling_index(self) -> np.ndarray:
        """每个输出像素, 每个核位置对应的输入像素平铺下标, 形状 (Ho·Wo·k·k,)"""
        height, width = self.input_shape
        lat, lon = pixel_centers(*self.output_shape)
        grids = np.stack([
            kernel_grid_array(float(lat0), float(lon0), self.k, self.angular_step)
            for lat0, lon0 in zip(lat.ravel(), lon.ravel())
        ])
        rows, cols = latlon_to_pixel_array(grids[..., 0], grids[..., 1], height, width)
        return (rows * width + cols).ravel()

    def _compute_output(self, x):
        batch, height, width, channels = x.shape
        if (height, width) != self.input_shape or channels != self.in_channels:
            raise ModelError(
                f"{self.name} 期望输入 {self.input_shape + (self.in_channels,)}, 实际为 {(height, width, channels)}"
            )
        ho, wo = self.output_shape
        patches = x.reshape(batch, height * width, channels)[:, self.index, :]
        patches = patches.reshape(batch, ho * wo, -1)
        self._patches = patches
        out = patches @ self.store.params[f"{self.name}.w"] + self.store.params[f"{self.name}.b"]
        return out.reshape(batch, ho, wo, -1)

    def _compute_input_grad(self, x, grad):
        batch, height, width, channels = x.shape
        grad = grad.reshape(batch, -1, grad.shape[-1])
        self.store.grads[f"{self.name}.w"] += np.einsum("bpi,bpo->io", self._patches, grad)
        self.store.grads[f"{self.name}.b"] += grad.sum(axis=(0, 1))

        grad_patches = (grad @ self.store.params[f"{self.name}.w"].T).reshape(batch, -1, channels)
        # 同一输入像素可能被多个核位置采到, 用 add.at 累加
        acc = np.zeros((height * width, batch, channels))
        np.add.at(acc, self.index, grad_patches.transpose(1, 0, 2))
        return acc.transpose(1, 0, 2).reshape(x.shape)

    def __repr__(self):
        return f"SphereConv({self.name}, {self.input_shape}->{self.output_shape})"


class Sequential(Module):
    def __init__(self, *modules: Module):
        super().__init__()
        self.modules = list(modules)

    def _compute_output(self, x):
        for module in self.modules:
            x = module.forward(x)
        return x

    def _compute_input_grad(self, x, grad):
        for module in reversed(self.modules):
            grad = module.backward(grad)
        return grad

    def __repr__(self):
        return f"Sequential({', '.join(map(repr, self.modules))})"
