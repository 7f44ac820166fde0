class ScankitError(Exception):
    """所有错误的基类, `code` 用于命令行的单行错误输出"""

    code = "ScankitError"

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        cls.code = cls.__name__


class GeometryError(ScankitError, ValueError):
    """非有限坐标, 像素越界, 网格超出半球"""


class ProjectionError(GeometryError):
    """日晷 (gnomonic) 投影只定义在切点所在的前半球"""


class TimewarpError(ScankitError, ValueError):
    pass


class MetricError(ScankitError, ValueError):
    pass


class ModelError(ScankitError):
    """网络形状不匹配或参数文件损坏"""


class TrainingDivergedError(ModelError):
    """训练中出现非有限损失"""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class IngestError(ScankitError, ValueError):
    """扫视路径文件格式错误"""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ScankitError):
    pass


class CliError(ScankitError):
    pass
