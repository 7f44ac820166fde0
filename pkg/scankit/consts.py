DEFAULT_SAMPLE_RATE_HZ = 1.0
"""扫视路径的标准采样率 (1 Hz)"""

SCANPATH_LENGTH = 30
"""标准训练长度 T (30 秒 @ 1 Hz)"""

CHORD_EPS = 1e-8
"""球面距离求导时的弦长平滑量"""

OUTPUT_NORM_EPS = 1e-6
"""生成器输出投影到球面时的模长平滑量"""

PROB_CLAMP = 1e-7
"""判别器输出离开 {0, 1} 的距离"""

ENV_PREFIX = "SCANKIT_"
"""环境变量覆盖配置的前缀"""

CHECKPOINT_MAGIC = b"SCKT"
CHECKPOINT_VERSION = 1
