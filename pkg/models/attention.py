"""
注意力模块
正弦位置编码、因果掩码、多头注意力、自注意力块和解码块（交叉注意力）
残差采用后归一化排列：x + 子层(x) -> 层归一化
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from engine import Tensor, constant, matmul, relu, softmax_last, swap_last, transpose
from errors import ConfigError, DimensionError

from .data_types import AttentionWeights, LinguisticFeature
from .layers import Dropout, LayerNorm, Linear, Module, RandomSource


@dataclass
class AttentionConfig:
    """注意力结构配置"""
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} 不能被 n_heads={self.n_heads} 整除")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate 必须在 [0,1) 内，实际为 {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def full_scale(cls) -> 'AttentionConfig':
        return cls(d_model=256, n_heads=4, d_ffn=1024, dropout_rate=0.1)


@lru_cache(maxsize=64)
def _sinusoid_table(length: int, d_model: int) -> np.ndarray:
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = 1.0 / np.power(10000.0, np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)
    table.setflags(write=False)
    return table


def sinusoidal_pe(length: int, d_model: int) -> Tensor:
    """
    正弦位置编码 PE[pos,2i]=sin(pos/10000^(2i/d))，PE[pos,2i+1]=cos(同上)

    Args:
        length: 序列长度
        d_model: 特征宽度（必须为偶数）

    Returns:
        常量张量 [length, d_model]
    """
    if d_model % 2 != 0:
        raise ConfigError(f"位置编码要求 d_model 为偶数，实际为 {d_model}")
    return constant(_sinusoid_table(length, d_model).copy())


def causal_mask(length: int) -> np.ndarray:
    """因果掩码：mask[i,j] 为 True 当且仅当 j <= i"""
    if length < 1:
        raise ConfigError(f"掩码长度必须 >= 1，实际为 {length}")
    return np.tril(np.ones((length, length), dtype=bool))


class MultiHeadAttention(Module):
    """多头缩放点积注意力，总是返回注意力权重供对齐诊断"""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)
        self.w_o = Linear(d, d, rng)
        self.drop = Dropout(cfg.dropout_rate, source)

    def _split_heads(self, x: Tensor) -> Tensor:
        length = x.shape[0]
        return transpose(x.reshape(length, self.cfg.n_heads, self.cfg.head_dim), (1, 0, 2))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 mask: Optional[np.ndarray] = None) -> Tuple[Tensor, AttentionWeights]:
        """
        多头注意力

        Args:
            q: 查询 [T_q, d_model]
            k: 键 [T_k, d_model]
            v: 值 [T_k, d_model]
            mask: 可选布尔掩码 [T_q, T_k]

        Returns:
            (输出 [T_q, d_model], 注意力权重)
        """
        d = self.cfg.d_model
        if q.shape[-1] != d or k.shape[-1] != d or v.shape[-1] != d:
            raise DimensionError(f"注意力输入宽度必须为 {d}: q={q.shape}, k={k.shape}, v={v.shape}")
        if k.shape[0] != v.shape[0]:
            raise DimensionError(f"键与值长度不一致: {k.shape} 与 {v.shape}")
        qh = self._split_heads(self.w_q(q))
        kh = self._split_heads(self.w_k(k))
        vh = self._split_heads(self.w_v(v))
        scores = matmul(qh, swap_last(kh)) * (1.0 / np.sqrt(self.cfg.head_dim))
        weights = softmax_last(scores, mask)
        context = matmul(weights, vh)
        merged = transpose(context, (1, 0, 2)).reshape(q.shape[0], d)
        out = self.drop(self.w_o(merged))
        return out, AttentionWeights(weights.data.copy())


class FeedForward(Module):
    """前馈网络：线性 -> ReLU -> 丢弃 -> 线性"""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        self.fc1 = Linear(cfg.d_model, cfg.d_ffn, rng)
        self.fc2 = Linear(cfg.d_ffn, cfg.d_model, rng)
        self.drop = Dropout(cfg.dropout_rate, source)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.drop(relu(self.fc1(x))))


class SelfAttentionBlock(Module):
    """自注意力块：x + MHA(x,x,x) -> LN -> + FFN -> LN"""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        self.attn = MultiHeadAttention(cfg, rng, source)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg, rng, source)
        self.norm2 = LayerNorm(cfg.d_model)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        attended, _ = self.attn(x, x, x, mask)
        x = self.norm1(x + attended)
        return self.norm2(x + self.ffn(x))


class DecoderBlock(Module):
    """
    解码块：带掩码的自注意力、以语言学特征为键值的交叉注意力、前馈网络
    交叉注意力不加掩码
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg, rng, source)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg, rng, source)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg, rng, source)
        self.norm3 = LayerNorm(cfg.d_model)

    def __call__(self, x: Tensor, memory: LinguisticFeature,
                 self_mask: Optional[np.ndarray] = None) -> Tuple[Tensor, AttentionWeights]:
        attended, _ = self.self_attn(x, x, x, self_mask)
        x = self.norm1(x + attended)
        crossed, cross_weights = self.cross_attn(x, memory.x, memory.x)
        x = self.norm2(x + crossed)
        x = self.norm3(x + self.ffn(x))
        return x, cross_weights


def frame_mask(length: int, causal: bool) -> Optional[np.ndarray]:
    """帧级自注意力掩码：开启因果掩码时返回下三角，否则不加掩码"""
    return causal_mask(length) if causal else None
