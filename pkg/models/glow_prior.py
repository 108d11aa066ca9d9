"""
条件Glow先验 P(Z|X)
每个流块依次为 actnorm -> 可逆1x1卷积 -> 仿射耦合（变换网络为以X为键值的解码块）
forward 方向由噪声生成隐变量，reverse 方向计算给定隐变量的精确对数密度
"""
import logging
from typing import List, Tuple

import numpy as np

from engine import Tensor, absolute, concat, constant, exp, inverse, log, logabsdet, matmul, sum_all
from errors import ConfigError, DimensionError, NumericalError

from .attention import AttentionConfig, DecoderBlock, frame_mask, sinusoidal_pe
from .data_types import LatentSample, LinguisticFeature
from .layers import Linear, Module, RandomSource

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


def actnorm_logdet(scale: Tensor, n_frames: int) -> Tensor:
    """actnorm 前向对数行列式 N_r * sum(log|scale|)"""
    return sum_all(log(absolute(scale))) * float(n_frames)


def standard_normal_log_density(u: Tensor) -> Tensor:
    """标准正态对数密度 log N(u; 0, I)"""
    return sum_all(u * u) * -0.5 - 0.5 * u.size * LOG_2PI


class ActNorm(Module):
    """逐通道仿射层，初始化为 scale=1、bias=0（不做数据相关初始化）"""

    def __init__(self, d_z: int):
        super().__init__()
        self.scale = Tensor(np.ones(d_z), requires_grad=True)
        self.bias = Tensor(np.zeros(d_z), requires_grad=True)

    def _check_scale(self):
        if np.any(self.scale.data == 0.0):
            raise NumericalError("actnorm 缩放存在零元素，不可逆")

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        self._check_scale()
        return x * self.scale + self.bias, actnorm_logdet(self.scale, x.shape[0])

    def reverse(self, y: Tensor) -> Tuple[Tensor, Tensor]:
        self._check_scale()
        return (y - self.bias) / self.scale, -actnorm_logdet(self.scale, y.shape[0])


class InvertibleConv1x1(Module):
    """可逆1x1卷积（逐帧右乘 W），W 初始化为随机正交矩阵"""

    def __init__(self, d_z: int, rng: np.random.Generator):
        super().__init__()
        q, r = np.linalg.qr(rng.normal(size=(d_z, d_z)))
        q = q * np.sign(np.diag(r))
        self.weight = Tensor(q, requires_grad=True)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        logdet = logabsdet(self.weight) * float(x.shape[0])
        return matmul(x, self.weight), logdet

    def reverse(self, y: Tensor) -> Tuple[Tensor, Tensor]:
        logdet = logabsdet(self.weight) * float(-y.shape[0])
        return matmul(y, inverse(self.weight)), logdet


class AffineCoupling(Module):
    """
    仿射耦合层
    特征轴固定对半切分 (x_a, x_b)，x_a 原样通过；
    (log_s, t) = proj(解码块(x_a, X))，y_b = x_b * exp(log_s) + t
    """

    def __init__(self, d_z: int, cfg: AttentionConfig, n_blocks: int, causal: bool,
                 rng: np.random.Generator, source: RandomSource):
        super().__init__()
        if d_z % 2 != 0:
            raise ConfigError(f"仿射耦合要求 d_z 为偶数，实际为 {d_z}")
        self.half = d_z // 2
        self.d_model = cfg.d_model
        self.causal = causal
        self.in_proj = Linear(self.half, cfg.d_model, rng)
        self.blocks = [DecoderBlock(cfg, rng, source) for _ in range(n_blocks)]
        # 零初始化：初始时耦合为恒等变换
        self.out_proj = Linear(cfg.d_model, 2 * (d_z - self.half), rng, zero_init=True)

    def _scale_shift(self, x_a: Tensor, memory: LinguisticFeature) -> Tuple[Tensor, Tensor]:
        if memory.length < 1:
            raise DimensionError("耦合层条件特征为空")
        length = x_a.shape[0]
        h = self.in_proj(x_a) + sinusoidal_pe(length, self.d_model)
        mask = frame_mask(length, self.causal)
        for block in self.blocks:
            h, _ = block(h, memory, mask)
        out = self.out_proj(h)
        width = out.shape[1] // 2
        return out[:, :width], out[:, width:]

    def forward(self, x: Tensor, memory: LinguisticFeature) -> Tuple[Tensor, Tensor]:
        x_a, x_b = x[:, :self.half], x[:, self.half:]
        log_s, t = self._scale_shift(x_a, memory)
        y_b = x_b * exp(log_s) + t
        return concat([x_a, y_b], axis=1), sum_all(log_s)

    def reverse(self, y: Tensor, memory: LinguisticFeature) -> Tuple[Tensor, Tensor]:
        y_a, y_b = y[:, :self.half], y[:, self.half:]
        log_s, t = self._scale_shift(y_a, memory)
        x_b = (y_b - t) * exp(-log_s)
        return concat([y_a, x_b], axis=1), -sum_all(log_s)


class FlowBlock(Module):
    """Glow流块：actnorm -> 1x1卷积 -> 仿射耦合"""

    def __init__(self, d_z: int, cfg: AttentionConfig, n_attention_blocks: int, causal: bool,
                 rng: np.random.Generator, source: RandomSource):
        super().__init__()
        self.actnorm = ActNorm(d_z)
        self.invconv = InvertibleConv1x1(d_z, rng)
        self.coupling = AffineCoupling(d_z, cfg, n_attention_blocks, causal, rng, source)

    def forward(self, x: Tensor, memory: LinguisticFeature) -> Tuple[Tensor, Tensor]:
        x, d1 = self.actnorm.forward(x)
        x, d2 = self.invconv.forward(x)
        x, d3 = self.coupling.forward(x, memory)
        return x, d1 + d2 + d3

    def reverse(self, y: Tensor, memory: LinguisticFeature) -> Tuple[Tensor, Tensor]:
        y, d3 = self.coupling.reverse(y, memory)
        y, d2 = self.invconv.reverse(y)
        y, d1 = self.actnorm.reverse(y)
        return y, d1 + d2 + d3


class GlowPrior(Module):
    """K个流块堆叠的条件先验，基分布为标准正态"""

    def __init__(self, d_z: int, cfg: AttentionConfig, n_blocks: int, n_attention_blocks: int,
                 causal: bool, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        if n_blocks < 1:
            raise ConfigError(f"流块数必须 >= 1，实际为 {n_blocks}")
        self.d_z = d_z
        self.flows = [FlowBlock(d_z, cfg, n_attention_blocks, causal, rng, source) for _ in range(n_blocks)]

    def _check_latent(self, z: Tensor):
        if z.ndim != 2 or z.shape[1] != self.d_z:
            raise DimensionError(f"隐变量形状应为 [N_r, {self.d_z}]，实际为 {z.shape}")

    def forward_with_logdet(self, noise: Tensor, memory: LinguisticFeature) -> Tuple[Tensor, Tensor]:
        """噪声经全部流块正向变换，返回 (z, 正向对数行列式之和)"""
        self._check_latent(noise)
        z = noise
        total = constant(0.0)
        for flow in self.flows:
            z, logdet = flow.forward(z, memory)
            total = total + logdet
        return z, total

    def sample(self, noise, memory: LinguisticFeature) -> LatentSample:
        """
        由噪声生成隐变量（推理时噪声全为0）

        Args:
            noise: [N_r, d_z] 噪声
            memory: 语言学特征 X

        Returns:
            LatentSample
        """
        z, _ = self.forward_with_logdet(constant(noise), memory)
        return LatentSample(z=z)

    def inverse_with_logdet(self, z: Tensor, memory: LinguisticFeature) -> Tuple[Tensor, Tensor]:
        """隐变量经全部流块逆向变换，返回 (基噪声 u, 逆向对数行列式之和)"""
        self._check_latent(z)
        u = z
        total = constant(0.0)
        for flow in reversed(self.flows):
            u, logdet = flow.reverse(u, memory)
            total = total + logdet
        return u, total

    def log_density(self, z: Tensor, memory: LinguisticFeature) -> Tensor:
        """log P(z|X) = log N(u;0,I) + 逆向对数行列式之和，对 z、X 和参数可微"""
        u, logdet = self.inverse_with_logdet(z, memory)
        return standard_normal_log_density(u) + logdet
