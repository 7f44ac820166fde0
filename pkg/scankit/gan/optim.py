import numpy as np

from scankit.gan.store import ParameterStore


class Adam:
    """Adam, 一阶/二阶矩存放在 ParameterStore 中, 按名字前缀区分生成器 "g" 与判别器 "d"

    Args:
        lr (float): 学习率
        betas (tuple[float, float]): 动量系数
        eps (float): 分母中的数值稳定项
    """

    def __init__(self, lr: float, betas: tuple[float, float] = (0.5, 0.99), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps

    def step(self, store: ParameterStore, branch: str) -> None:
        store.t[branch] = store.t.get(branch, 0) + 1
        t = store.t[branch]

        # 偏差修正每步只算一次
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        step_size = self.lr / bc1

        for name in store.names(branch + "."):
            g = store.grads[name]
            m, v = store.m[name], store.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            store.params[name] -= step_size * m / (np.sqrt(v / bc2) + self.eps)
