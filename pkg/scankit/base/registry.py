from dataclasses import dataclass
from typing import Callable

import inspect

from scankit.exceptions import MetricError


def get_parameters_details(func: Callable) -> str:
    """把函数签名整理成一段说明, 供 `evaluate --list` 展示"""

    message = f"{func.__doc__.strip().splitlines()[0]}\n" if func.__doc__ else ""

    sig = inspect.signature(func)
    details = []

    for name, param in sig.parameters.items():
        if name in ("a", "b"):
            continue
        default = param.default if param.default is not param.empty else "无默认值"
        details.append(f"  {name} 默认值:{default}")

    return message + "\n".join(details)


@dataclass(frozen=True)
class MetricSpec:
    """一个已注册的扫视路径相似度指标"""

    name: str
    func: Callable
    lower_is_better: bool
    settings: tuple[str, ...] = ()
    """从 MetricSetting 传入的参数名"""

    def __call__(self, a, b, **kwargs) -> float:
        return self.func(a, b, **kwargs)


metrics: dict[str, MetricSpec] = {}


def register_metric(name: str, lower_is_better: bool = True, settings: tuple[str, ...] = ()):
    """注册指标; 注册顺序即报告中的列顺序"""

    def decorator(func: Callable) -> Callable:
        if name in metrics:
            raise MetricError(f"指标 {name} 重复注册")
        metrics[name] = MetricSpec(name, func, lower_is_better, settings)
        return func

    return decorator


def get_metric(name: str) -> MetricSpec:
    try:
        return metrics[name.upper()]
    except KeyError:
        raise MetricError(f"未知指标 {name}, 可用: {', '.join(metrics)}") from None
