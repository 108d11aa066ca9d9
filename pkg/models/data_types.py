"""
数据类型模块
语言学特征、频谱、后验参数、隐变量样本、损失分解等在各模块之间传递的数据
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from engine import Tensor
from errors import DimensionError, InputError


@dataclass
class AttentionWeights:
    """注意力权重 [n_heads, T_q, T_k]，每个 (head, query) 行是一个分布"""
    weights: np.ndarray

    @property
    def n_heads(self) -> int:
        return self.weights.shape[0]

    def head_average(self) -> np.ndarray:
        """对注意力头取平均，得到 [T_q, T_k] 对齐矩阵"""
        return self.weights.mean(axis=0)


@dataclass
class LinguisticFeature:
    """文本编码器输出 X：[M, d_model] 及对应字符ID"""
    x: Tensor
    char_ids: Tuple[int, ...]

    @property
    def length(self) -> int:
        return self.x.shape[0]


@dataclass
class Spectrogram:
    """频谱 Y：[N, n_bins]"""
    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 2 or self.y.shape[0] < 1:
            raise DimensionError(f"频谱必须为非空二维数组，实际形状 {self.y.shape}")
        if not np.all(np.isfinite(self.y)):
            raise InputError("频谱包含 NaN/Inf")

    @property
    def n_frames(self) -> int:
        return self.y.shape[0]

    @property
    def n_bins(self) -> int:
        return self.y.shape[1]


@dataclass
class PosteriorParams:
    """后验 Q(Z|X,Y) 的逐帧均值与对数方差 [N_r, d_z]"""
    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise DimensionError(f"均值与对数方差形状不一致: {self.mean.shape} 与 {self.log_var.shape}")


@dataclass
class LatentSample:
    """帧级隐变量 Z [N_r, d_z]"""
    z: Tensor

    @property
    def n_frames(self) -> int:
        return self.z.shape[0]


@dataclass
class ReductionState:
    """当前缩减因子"""
    r: int
    n_bins: int


@dataclass
class LossBreakdown:
    """
    训练损失分解
    total == recon_mse + alpha*kl + beta*length_loss
    """
    recon_mse: float
    kl: float
    length_loss: float
    total: float
    alpha: float
    beta: float
    recon_before: float = 0.0
    recon_after: float = 0.0

    @staticmethod
    def average(items: List['LossBreakdown']) -> 'LossBreakdown':
        """多条语句的逐项平均"""
        n = len(items)
        if n == 0:
            raise InputError("没有可平均的损失")
        recon = sum(b.recon_mse for b in items) / n
        kl = sum(b.kl for b in items) / n
        length = sum(b.length_loss for b in items) / n
        alpha, beta = items[0].alpha, items[0].beta
        return LossBreakdown(
            recon_mse=recon, kl=kl, length_loss=length,
            total=recon + alpha * kl + beta * length,
            alpha=alpha, beta=beta,
            recon_before=sum(b.recon_before for b in items) / n,
            recon_after=sum(b.recon_after for b in items) / n,
        )


@dataclass
class DecoderOutput:
    """解码器输出：PostNet前后的频谱及每个解码块的交叉注意力"""
    before: Tensor
    after: Tensor
    alignments: List[AttentionWeights] = field(default_factory=list)
