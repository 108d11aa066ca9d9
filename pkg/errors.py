"""
异常定义模块
所有库代码抛出的异常都继承自 VaenarError，命令行层按类型映射退出码
"""
from typing import Optional


class VaenarError(Exception):
    """项目内所有异常的基类"""


class ConfigError(VaenarError):
    """配置非法：未知配置项、偶数卷积核、奇数维度等"""


class DimensionError(VaenarError):
    """张量形状不匹配"""


class NumericalError(VaenarError):
    """数值异常：NaN/Inf、零缩放、退化的注意力行等"""


class SingularityError(NumericalError):
    """可逆矩阵行列式过小"""


class VocabularyError(VaenarError):
    """字符ID超出符号表"""


class InputError(VaenarError):
    """用户输入非法，例如空文本"""


class FormatError(VaenarError):
    """文件格式错误：魔数、版本或长度不符"""


class TrainingHalted(VaenarError):
    """训练因数值发散而中止，保留最后一个正常的检查点"""

    def __init__(self, message: str, last_good_checkpoint: Optional[str] = None, epoch: int = -1):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint
        self.epoch = epoch
