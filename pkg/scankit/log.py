import inspect
import logging
import sys
import loguru

from pathlib import Path
from typing import TYPE_CHECKING

from rich.console import Console
from rich.text import Text


if TYPE_CHECKING:
    from loguru import Logger, Record


logger: "Logger" = loguru.logger
"""日志记录器对象。

默认信息:

- 格式: `MM-DD HH:mm:ss [LEVEL] message`
- 等级: `INFO` ，根据 `config.log_level` 配置改变
- 输出: 输出至 stderr (与进度条共用同一个 rich 控制台)

"""

log_level = "INFO"

console = Console(stderr=True)
"""日志与进度条共用的控制台 (侧通道, 不污染 stdout)"""


class LoguruHandler(logging.Handler):  # pragma: no cover
    """logging 与 loguru 之间的桥梁，将 logging 的日志转发到 loguru。"""

    def emit(self, record: logging.LogRecord):
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        frame, depth = inspect.currentframe(), 0
        while frame and (depth == 0 or frame.f_code.co_filename == logging.__file__):
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(
            level, record.getMessage()
        )


def default_filter(record: "Record"):
    """默认的日志过滤器，根据 `config.log_level` 配置改变日志等级。

    每轮训练的结构化记录只进入 jsonl 文件，不在控制台重复输出。
    """
    if record["extra"].get("epoch_log"):
        return False
    levelno = logger.level(log_level).no if isinstance(log_level, str) else log_level
    return record["level"].no >= levelno


def epoch_filter(record: "Record"):
    return bool(record["extra"].get("epoch_log"))


def set_log_level(level: str):
    global log_level
    log_level = level.upper() if isinstance(level, str) else level


default_format: str = (
    "<g>{time:MM-DD HH:mm:ss}</g> "
    "[<lvl>{level}</lvl>] "
    # "<c><u>{name}</u></c> | "
    # "<c>{function}:{line}</c>| "
    "{message}"
)


class LogSink:
    """自定义 Loguru Sink，将日志写入 rich 控制台 (进度条会自动让位)"""

    def __init__(self, target: Console):
        self.console = target

    def write(self, message):
        self.console.print(Text.from_ansi(message.rstrip("\n")), highlight=False)

    def flush(self):
        pass


def add_jsonl_sink(path: Path) -> int:
    """添加逐轮 (epoch) 的结构化日志文件。

    Args:
        path (Path): jsonl 文件路径, 每轮一行 JSON

    Returns:
        int: loguru 的 sink id, 用于 `logger.remove`
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return logger.add(path, level=0, serialize=True, filter=epoch_filter, mode="a", encoding="utf-8")


def reset_sinks(use_console: bool = True) -> int:
    """重新配置控制台输出, 返回 sink id"""
    logger.remove()
    if not use_console:
        return logger.add(sys.stderr, level=0, diagnose=False, filter=default_filter, format=default_format)
    return logger.add(
        LogSink(console),
        level=0,
        diagnose=False,
        colorize=True,
        filter=default_filter,
        format=default_format,
    )


logging.basicConfig(handlers=[LoguruHandler()], level=logging.WARNING, force=True)
logger_id = reset_sinks()
