from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pathlib import Path
from typing import Any, Literal

import copy
import math
import os
import yaml

from scankit.consts import ENV_PREFIX, SCANPATH_LENGTH
from scankit.exceptions import ConfigError
from scankit.log import logger, set_log_level

PATH_WORKING = Path.cwd()
"""
当前工作目录路径
"""

DEFAULT_CONFIG_NAME = "scankit.yaml"


class YamlConfig:
    def __init__(self, filepath):
        self.filepath = filepath

    def read_config(self) -> dict:
        try:
            with open(self.filepath, 'r', encoding="utf-8") as file:
                config = yaml.safe_load(file)
                return config or {}
        except FileNotFoundError:
            logger.error(f"File not found: {self.filepath}")
            raise ConfigError(f"配置文件不存在: {self.filepath}") from None
        except yaml.YAMLError as e:
            logger.error(f"Error reading YAML file: {e}")
            raise ConfigError(f"配置文件格式错误: {self.filepath}") from e

    def write_config(self, config: dict):
        try:
            with open(self.filepath, 'w', encoding="utf-8") as file:
                yaml.safe_dump(config, file, default_flow_style=False, allow_unicode=True, sort_keys=False)
        except yaml.YAMLError as e:
            logger.error(f"Error writing YAML file: {e}")
            raise ConfigError(f"无法写入配置文件: {self.filepath}") from e

    @staticmethod
    def create_file(filepath: str, content: dict):
        YamlConfig(filepath).write_config(content)
        logger.opt(colors=True).debug(f"<g>File '{filepath}' created successfully.</g>")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class IngestSetting(Section):
    target_hz: float = Field(1.0, gt=0)
    target_T: int | None = Field(SCANPATH_LENGTH, ge=1)
    short_policy: Literal["reject", "keep"] = "reject"
    """不足 target_T 的记录: 丢弃或保留较短的路径"""
    degrees: bool = False


class MetricSetting(Section):
    n_lat: int = Field(9, ge=1)
    n_lon: int = Field(18, ge=1)
    scanmatch_gap: float = 0.0
    scanmatch_max_score: float = Field(1.0, gt=0)
    recurrence_radius: float = Field(0.25, gt=0, lt=math.pi)
    min_line: int = Field(2, ge=2)
    tde_k: int = Field(2, ge=1)
    tde_stride: int = Field(1, ge=1)


class TrainConfig(Section):
    """训练超参数; 学习率, 动量, 批大小与 2:1 的生成器/判别器节奏"""

    lr_g: float = Field(1e-4, gt=0)
    lr_d: float = Field(1e-5, gt=0)
    adam_betas: tuple[float, float] = (0.5, 0.99)
    adam_eps: float = Field(1e-8, gt=0)
    batch_size: int = Field(8, ge=1)
    gen_cycles_per_disc: int = Field(2, ge=1)
    lambda_dtw: float = Field(0.1, ge=0)
    gamma: float = Field(1.0, ge=0)
    """soft-DTW 平滑量; 训练需要 > 0, 0 只用于求值 (硬 DTW)"""
    data_term: Literal["sph_dtw", "euclid_dtw", "mse"] = "sph_dtw"
    non_saturating: bool = False
    epochs: int = Field(50, ge=0)
    max_steps: int | None = Field(2000, ge=0)
    seed: int = 0

    seq_len: int = Field(SCANPATH_LENGTH, ge=1)
    d_z: int = Field(32, ge=1)
    image_height: int = Field(64, ge=1)
    image_width: int = Field(128, ge=2)
    kernel_size: int = Field(3, ge=1)
    conv_channels: tuple[int, int] = (8, 16)
    conv_strides: tuple[int, int] = (4, 2)
    feature_hidden: int = Field(128, ge=1)
    feature_width: int = Field(64, ge=1)
    gen_widths: tuple[int, int] = (128, 128)
    disc_widths: tuple[int, int] = (128, 128)
    leaky_slope: float = Field(0.2, ge=0, lt=1)
    coordconv: bool = True
    """输入图像是否追加两个坐标通道; 关闭时网络只看 RGB"""

    n_augment: int = Field(6, ge=1)
    val_samples: int = Field(8, ge=1)
    checkpoint_path: str | None = None
    log_path: str | None = None

    @model_validator(mode="before")
    @classmethod
    def default_width(cls, data: Any):
        # 只给出高度时宽度取 2 倍
        if isinstance(data, dict) and "image_height" in data and "image_width" not in data:
            data = {**data, "image_width": 2 * int(data["image_height"])}
        return data

    @model_validator(mode="after")
    def check_shape(self):
        if self.image_width != 2 * self.image_height:
            raise ValueError("image_width 必须等于 2 * image_height")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size 必须为奇数")
        return self


class BehaviorSetting(Section):
    map_height: int = Field(64, ge=1)
    map_width: int = Field(128, ge=2)
    blur_sigma: float = Field(3.0, ge=0)
    """聚合图的高斯模糊, 单位度"""
    kappa: float = Field(80.0, gt=0)
    start_bin_deg: float = Field(40.0, gt=0, le=360)
    offsets_deg: list[float] = list(range(0, 181, 20))
    roc_ladder: list[float] = list(range(1, 101))


class ThumbnailSetting(Section):
    n: int = Field(100, ge=1)
    kappa: float = Field(80.0, gt=0)
    map_height: int = Field(64, ge=1)
    map_width: int = Field(128, ge=2)
    fov_min: float = Field(30.0, gt=0)
    fov_max: float = Field(100.0, lt=180)
    fov_a: float = 4.0
    """每度扩散对应的视场角增量"""
    fov_b: float = 30.0
    max_pan_deg: float = Field(20.0, gt=0)
    smooth_window: int = Field(3, ge=1)
    upsample: int = Field(1, ge=1)
    out_height: int = Field(360, ge=1)
    out_width: int = Field(640, ge=1)

    @model_validator(mode="after")
    def check_fov(self):
        if self.fov_min > self.fov_max:
            raise ValueError("fov_min 不能大于 fov_max")
        return self


class Setting(BaseModel):
    log_level: str = "INFO"
    seed: int = 0

    ingest: IngestSetting = IngestSetting()
    metrics: MetricSetting = MetricSetting()
    train: TrainConfig = TrainConfig()
    behavior: BehaviorSetting = BehaviorSetting()
    thumbnail: ThumbnailSetting = ThumbnailSetting()

    extra: dict = {}

    model_config = ConfigDict(extra="allow")

    @model_validator(mode= "after")
    def gather_extra(self):
        extra = {}
        config = self.model_dump()
        for key, value in config.items():
            if key not in type(self).model_fields:
                extra[key] = value
                delattr(self, key)
        if extra:
            logger.warning(f"配置文件中有未知的键, 已忽略: {', '.join(extra)}")
        self.extra = extra
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "Setting":
        try:
            return cls(**data)
        except ValidationError as e:
            logger.error(f"Validation error: {e}")
            raise ConfigError(f"配置校验失败: {e.errors()[0]['loc']} {e.errors()[0]['msg']}") from e

    @classmethod
    def from_yaml(cls, yaml_file, create: bool = False) -> "Setting":

        if create and not os.path.exists(yaml_file):
            YamlConfig.create_file(yaml_file, cls().model_dump(exclude = {"extra"}, mode="json"))

        return cls.from_dict(YamlConfig(yaml_file).read_config())

    def to_yaml(self, yaml_file):
        yaml_config = YamlConfig(yaml_file)
        yaml_config.write_config(self.model_dump(exclude = {"extra"}, mode="json"))


def merge_overrides(base: dict, overrides: dict) -> dict:
    """递归合并, overrides 中为 None 的值不覆盖"""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_overrides(merged[key], value)
        else:
            merged[key] = value
    return merged


def env_overrides(environ: dict[str, str] | None = None) -> dict:
    """读取 SCANKIT_ 前缀的环境变量, 例如 SCANKIT_TRAIN__LR_G=1e-3"""
    environ = os.environ if environ is None else environ
    overrides: dict[str, Any] = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        if not all(path):
            continue
        target = overrides
        for part in path[:-1]:
            target = target.setdefault(part, {})
        try:
            target[path[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError:
            target[path[-1]] = raw
    return overrides


def resolve_setting(config_path: str | Path | None = None, flags: dict | None = None, environ: dict[str, str] | None = None) -> Setting:
    """按 命令行参数 > 环境变量 > 配置文件 > 默认值 的优先级合成配置"""
    data: dict = {}
    if config_path is not None:
        data = YamlConfig(config_path).read_config()
    elif (PATH_WORKING / DEFAULT_CONFIG_NAME).exists():
        config_path = PATH_WORKING / DEFAULT_CONFIG_NAME
        data = YamlConfig(config_path).read_config()
    data = merge_overrides(data, env_overrides(environ))
    data = merge_overrides(data, flags or {})
    return Setting.from_dict(data)


setting: Setting | None = None

def get_config() -> Setting:
    global setting
    if setting is None:
        logger.debug(f"配置文件未加载, 使用默认配置")
        setting = Setting()
    return setting

def read_config(path: str | Path | None = None, flags: dict | None = None) -> Setting:
    global setting

    setting = resolve_setting(path, flags)
    set_log_level(setting.log_level)
    logger.info(f"成功载入配置 {path if path else '(默认)'}")
    return setting
