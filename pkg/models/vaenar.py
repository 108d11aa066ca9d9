"""
VAENAR 非自回归文本到频谱模型
文本编码器、后验编码器 Q(Z|X,Y)、Glow先验 P(Z|X)、解码器 P(Y|Z,X)、长度预测器以及训练损失
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

import config
from engine import Tensor, clip, concat, constant, exp, log, mean_all, no_grad, power, relu, sum_all, tanh
from errors import ConfigError, DimensionError, InputError, VocabularyError

from .attention import AttentionConfig, DecoderBlock, SelfAttentionBlock, frame_mask, sinusoidal_pe
from .data_types import (
    AttentionWeights, DecoderOutput, LatentSample, LinguisticFeature, LossBreakdown, PosteriorParams,
    ReductionState, Spectrogram,
)
from .glow_prior import LOG_2PI, GlowPrior
from .layers import BatchNorm1d, Conv1d, Dropout, Embedding, Linear, Module, RandomSource

logger = logging.getLogger(__name__)

NOISE_MODES = ('zeros', 'sample')


@dataclass
class VaenarConfig:
    """模型结构配置（默认值为桌面尺寸）"""
    vocab_size: int = 43
    embed_dim: int = 64
    prenet_layers: int = 5
    prenet_kernel: int = 5
    prenet_channels: int = 64
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 128
    dropout_rate: float = 0.1
    encoder_blocks: int = 4
    posterior_prenet_dim: int = 64
    posterior_blocks: int = 2
    decoder_blocks: int = 2
    prior_blocks: int = 3
    prior_attention_blocks: int = 2
    d_z: int = 32
    n_bins: int = 16
    postnet_layers: int = 5
    postnet_channels: int = 64
    postnet_kernel: int = 5
    reduction_factors: Tuple[int, ...] = (2, 3, 4, 5)
    causal_mask: bool = True
    log_var_clamp: float = config.LOG_VAR_CLAMP

    def __post_init__(self):
        self.reduction_factors = tuple(sorted(set(int(r) for r in self.reduction_factors)))
        if not self.reduction_factors or self.reduction_factors[0] < 1:
            raise ConfigError(f"缩减因子必须 >= 1: {self.reduction_factors}")
        if self.d_z % 2 != 0:
            raise ConfigError(f"d_z 必须为偶数，实际为 {self.d_z}")
        for name in ('prenet_kernel', 'postnet_kernel'):
            if getattr(self, name) % 2 == 0:
                raise ConfigError(f"{name} 必须为奇数，实际为 {getattr(self, name)}")
        if self.postnet_layers < 1 or self.prenet_layers < 1:
            raise ConfigError("PreNet/PostNet 层数必须 >= 1")

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.d_model, self.n_heads, self.d_ffn, self.dropout_rate)

    @property
    def final_r(self) -> int:
        return self.reduction_factors[0]

    @classmethod
    def full_scale(cls) -> 'VaenarConfig':
        """原始全尺寸结构"""
        preset = config.FULL_SCALE_PRESET
        keys = [f for f in cls.__dataclass_fields__ if f in preset]
        return cls(**{k: preset[k] for k in keys}, postnet_channels=512,
                   reduction_factors=tuple(range(preset['rf_floor'], preset['rf_initial'] + 1)))


@dataclass
class LossResult:
    """一次前向的全部损失项（张量）与损失分解（浮点）"""
    total: Tensor
    recon: Tensor
    kl: Tensor
    length_loss: Tensor
    breakdown: LossBreakdown
    posterior: PosteriorParams
    decoded: DecoderOutput
    posterior_alignments: List[AttentionWeights] = field(default_factory=list)


@dataclass
class SynthesisResult:
    """合成结果"""
    spectrogram: np.ndarray
    predicted_length: float
    n_frames: int
    r: int
    alignments: List[AttentionWeights] = field(default_factory=list)


def reduce_spectrogram(y, r: int) -> Tensor:
    """
    把频谱按缩减因子折叠：补零到 r 的整数倍，每 r 帧沿特征轴拼接

    Args:
        y: 频谱 [N, n_bins]（张量、数组或 Spectrogram）
        r: 缩减因子

    Returns:
        [ceil(N/r), n_bins*r]
    """
    if r < 1:
        raise ConfigError(f"缩减因子必须 >= 1，实际为 {r}")
    if isinstance(y, Spectrogram):
        y = y.y
    y = constant(y)
    n_frames, n_bins = y.shape
    pad = (-n_frames) % r
    if pad:
        y = concat([y, np.zeros((pad, n_bins))], axis=0)
    return y.reshape((n_frames + pad) // r, n_bins * r)


def expand_spectrogram(y_reduced: Tensor, r: int, n_frames: Optional[int] = None) -> Tensor:
    """reduce_spectrogram 的逆：展开为逐帧频谱，并裁剪到 n_frames（若给定）"""
    if r < 1:
        raise ConfigError(f"缩减因子必须 >= 1，实际为 {r}")
    y_reduced = constant(y_reduced)
    n_reduced, width = y_reduced.shape
    if width % r != 0:
        raise DimensionError(f"折叠频谱宽度 {width} 不是 r={r} 的整数倍")
    y = y_reduced.reshape(n_reduced * r, width // r)
    if n_frames is not None and n_frames < n_reduced * r:
        y = y[:n_frames]
    return y


def reparam_sample(p: PosteriorParams, noise) -> LatentSample:
    """重参数化采样 z = mean + exp(log_var/2) * noise"""
    noise = constant(noise)
    if noise.shape != p.mean.shape:
        raise DimensionError(f"噪声形状 {noise.shape} 与后验均值形状 {p.mean.shape} 不一致")
    return LatentSample(z=p.mean + exp(p.log_var * 0.5) * noise)


def gaussian_log_density(z: Tensor, p: PosteriorParams) -> Tensor:
    """对角高斯 log Q(z; mean, exp(log_var))"""
    diff = z - p.mean
    return sum_all((diff * diff * exp(-p.log_var) + p.log_var + LOG_2PI) * -0.5)


def assemble_loss(recon: Tensor, kl: Tensor, length_loss: Tensor, alpha: float, beta: float) -> Tensor:
    """总损失 recon + alpha*kl + beta*length"""
    return recon + kl * alpha + length_loss * beta


class TextEncoder(Module):
    """文本编码器：嵌入 -> 卷积PreNet(BN+ReLU+丢弃) -> 投影 -> +PE -> 自注意力块"""

    def __init__(self, cfg: VaenarConfig, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        self.d_model = cfg.d_model
        self.embedding = Embedding(cfg.vocab_size, cfg.embed_dim, rng)
        widths = [cfg.embed_dim] + [cfg.prenet_channels] * cfg.prenet_layers
        self.convs = [Conv1d(widths[i], widths[i + 1], cfg.prenet_kernel, rng) for i in range(cfg.prenet_layers)]
        self.norms = [BatchNorm1d(cfg.prenet_channels) for _ in range(cfg.prenet_layers)]
        self.drop = Dropout(cfg.dropout_rate, source)
        self.proj = Linear(cfg.prenet_channels, cfg.d_model, rng)
        self.blocks = [SelfAttentionBlock(cfg.attention, rng, source) for _ in range(cfg.encoder_blocks)]

    def __call__(self, char_ids: Sequence[int]) -> Tensor:
        x = self.embedding(char_ids)
        for conv, norm in zip(self.convs, self.norms):
            x = self.drop(relu(norm(conv(x))))
        x = self.proj(x) + sinusoidal_pe(len(char_ids), self.d_model)
        for block in self.blocks:
            x = block(x)
        return x


class PosteriorEncoder(Module):
    """
    后验编码器
    稠密PreNet（首层按缩减因子分别建立）-> +PE -> 解码块（因果自注意力，交叉注意X）-> 均值/对数方差头
    """

    def __init__(self, cfg: VaenarConfig, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        self.d_model = cfg.d_model
        self.causal = cfg.causal_mask
        self.clamp = cfg.log_var_clamp
        self.prenet_in = {r: Linear(cfg.n_bins * r, cfg.posterior_prenet_dim, rng) for r in cfg.reduction_factors}
        self.prenet_out = Linear(cfg.posterior_prenet_dim, cfg.d_model, rng)
        self.drop = Dropout(cfg.dropout_rate, source)
        self.blocks = [DecoderBlock(cfg.attention, rng, source) for _ in range(cfg.posterior_blocks)]
        self.mean_head = Linear(cfg.d_model, cfg.d_z, rng)
        self.log_var_head = Linear(cfg.d_model, cfg.d_z, rng)

    def __call__(self, y_reduced: Tensor, memory: LinguisticFeature,
                 r: int) -> Tuple[PosteriorParams, List[AttentionWeights]]:
        if r not in self.prenet_in:
            raise ConfigError(f"后验PreNet没有为 r={r} 建立输入层")
        y_reduced = constant(y_reduced)
        if y_reduced.shape[1] != self.prenet_in[r].weight.shape[0]:
            raise DimensionError(f"折叠频谱宽度 {y_reduced.shape[1]} 与 r={r} 不符")
        length = y_reduced.shape[0]
        h = self.drop(relu(self.prenet_in[r](y_reduced)))
        h = self.drop(relu(self.prenet_out(h)))
        h = h + sinusoidal_pe(length, self.d_model)
        mask = frame_mask(length, self.causal)
        alignments = []
        for block in self.blocks:
            h, weights = block(h, memory, mask)
            alignments.append(weights)
        log_var = clip(self.log_var_head(h), -self.clamp, self.clamp)
        return PosteriorParams(mean=self.mean_head(h), log_var=log_var), alignments


class PostNet(Module):
    """卷积PostNet，输出作为频谱的残差补偿"""

    def __init__(self, cfg: VaenarConfig, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        n = cfg.postnet_layers
        widths = [cfg.n_bins] + [cfg.postnet_channels] * (n - 1) + [cfg.n_bins]
        self.convs = [Conv1d(widths[i], widths[i + 1], cfg.postnet_kernel, rng) for i in range(n)]
        self.norms = [BatchNorm1d(widths[i + 1]) for i in range(n)]
        self.drop = Dropout(cfg.dropout_rate, source)

    def __call__(self, y: Tensor) -> Tensor:
        last = len(self.convs) - 1
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            y = norm(conv(y))
            if i < last:
                y = tanh(y)
            y = self.drop(y)
        return y


class Decoder(Module):
    """解码器：隐变量 -> 线性 -> +PE -> 解码块 -> 按r的投影头 -> 展开 -> PostNet残差"""

    def __init__(self, cfg: VaenarConfig, rng: np.random.Generator, source: RandomSource):
        super().__init__()
        self.d_model = cfg.d_model
        self.causal = cfg.causal_mask
        self.in_proj = Linear(cfg.d_z, cfg.d_model, rng)
        self.blocks = [DecoderBlock(cfg.attention, rng, source) for _ in range(cfg.decoder_blocks)]
        # 每个调度中的 r 一个输出头，全部在开始时建立
        self.heads = {r: Linear(cfg.d_model, cfg.n_bins * r, rng) for r in cfg.reduction_factors}
        self.postnet = PostNet(cfg, rng, source)

    def __call__(self, z: Tensor, memory: LinguisticFeature, r: int,
                 n_frames: Optional[int] = None) -> DecoderOutput:
        if r not in self.heads:
            raise ConfigError(f"解码器没有为 r={r} 注册投影头")
        length = z.shape[0]
        if length < 1:
            raise DimensionError("隐变量长度必须 >= 1")
        h = self.in_proj(z) + sinusoidal_pe(length, self.d_model)
        mask = frame_mask(length, self.causal)
        alignments = []
        for block in self.blocks:
            h, weights = block(h, memory, mask)
            alignments.append(weights)
        before = expand_spectrogram(self.heads[r](h), r, n_frames)
        after = before + self.postnet(before)
        return DecoderOutput(before=before, after=after, alignments=alignments)


class LengthPredictor(Module):
    """长度预测器：单通道全连接 + ReLU，逐字符输出视为对数时长"""

    def __init__(self, d_model: int, rng: np.random.Generator):
        super().__init__()
        self.fc = Linear(d_model, 1, rng)

    def __call__(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        per_char = relu(self.fc(x)).reshape(x.shape[0])
        return sum_all(exp(per_char)), per_char


class VaenarTTS(Module):
    """完整的VAENAR网络"""

    def __init__(self, cfg: VaenarConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self._source = RandomSource(seed)
        self.text_encoder = TextEncoder(cfg, rng, self._source)
        self.posterior = PosteriorEncoder(cfg, rng, self._source)
        self.prior = GlowPrior(cfg.d_z, cfg.attention, cfg.prior_blocks, cfg.prior_attention_blocks,
                               cfg.causal_mask, rng, self._source)
        self.decoder = Decoder(cfg, rng, self._source)
        self.length_predictor = LengthPredictor(cfg.d_model, rng)

    @property
    def random_source(self) -> RandomSource:
        return self._source

    def reduction_state(self, r: int) -> ReductionState:
        if r not in self.cfg.reduction_factors:
            raise ConfigError(f"r={r} 不在调度值 {self.cfg.reduction_factors} 中")
        return ReductionState(r=r, n_bins=self.cfg.n_bins)

    def encode_text(self, char_ids: Sequence[int]) -> LinguisticFeature:
        """
        编码字符序列

        Args:
            char_ids: 字符ID序列

        Returns:
            LinguisticFeature [M, d_model]
        """
        char_ids = tuple(int(i) for i in char_ids)
        if not char_ids:
            raise InputError("字符序列为空")
        bad = [i for i in char_ids if not 0 <= i < self.cfg.vocab_size]
        if bad:
            raise VocabularyError(f"字符ID超出符号表（大小 {self.cfg.vocab_size}）: {bad}")
        return LinguisticFeature(x=self.text_encoder(char_ids), char_ids=char_ids)

    def posterior_encode(self, y_reduced: Tensor, memory: LinguisticFeature,
                         r: int) -> Tuple[PosteriorParams, List[AttentionWeights]]:
        return self.posterior(y_reduced, memory, r)

    def kl_estimate(self, p: PosteriorParams, sample: LatentSample, memory: LinguisticFeature) -> Tensor:
        """单样本蒙特卡洛KL估计 log Q(z) - log P(z|X)"""
        return gaussian_log_density(sample.z, p) - self.prior.log_density(sample.z, memory)

    def decode_spectrogram(self, sample: LatentSample, memory: LinguisticFeature, r: int,
                           n_frames: Optional[int] = None) -> DecoderOutput:
        return self.decoder(sample.z, memory, r, n_frames)

    def predict_length(self, memory: LinguisticFeature) -> Tuple[Tensor, Tensor]:
        """预测语句级帧数，输入与文本编码器的梯度路径断开"""
        if memory.length < 1:
            raise InputError("语言学特征为空")
        return self.length_predictor(memory.x.detach())

    def compute_loss(self, y: Spectrogram, char_ids: Sequence[int], noise: np.ndarray,
                     r: int, alpha: float, beta: float) -> LossResult:
        """
        计算训练损失 MSE + alpha*KL + beta*(log L - log L_hat)^2

        Args:
            y: 真实频谱
            char_ids: 字符ID
            noise: 重参数化噪声 [ceil(N/r), d_z]
            r: 当前缩减因子
            alpha: KL权重
            beta: 长度损失权重

        Returns:
            LossResult
        """
        if alpha < 0 or beta < 0:
            raise ConfigError(f"损失权重必须非负: alpha={alpha}, beta={beta}")
        self.reduction_state(r)
        memory = self.encode_text(char_ids)
        target = constant(y.y)
        n_frames = y.n_frames
        y_reduced = reduce_spectrogram(target, r)

        posterior, posterior_alignments = self.posterior_encode(y_reduced, memory, r)
        sample = reparam_sample(posterior, noise)
        kl = self.kl_estimate(posterior, sample, memory)

        decoded = self.decode_spectrogram(sample, memory, r, n_frames)
        diff_before = decoded.before - target
        diff_after = decoded.after - target
        recon_before = mean_all(diff_before * diff_before)
        recon_after = mean_all(diff_after * diff_after)
        recon = (recon_before + recon_after) * 0.5

        predicted, _ = self.predict_length(memory)
        length_loss = power(constant(math.log(n_frames)) - log(predicted), 2)

        total = assemble_loss(recon, kl, length_loss, alpha, beta)
        breakdown = LossBreakdown(
            recon_mse=recon.item(), kl=kl.item(), length_loss=length_loss.item(), total=total.item(),
            alpha=alpha, beta=beta, recon_before=recon_before.item(), recon_after=recon_after.item(),
        )
        return LossResult(total=total, recon=recon, kl=kl, length_loss=length_loss, breakdown=breakdown,
                          posterior=posterior, decoded=decoded, posterior_alignments=posterior_alignments)

    def synthesize(self, char_ids: Sequence[int], length_bias_frames: int = 0, noise_mode: str = 'zeros',
                   rng: Optional[np.random.Generator] = None, r: Optional[int] = None) -> SynthesisResult:
        """
        并行合成频谱：预测长度 -> 先验正向采样 -> 解码，没有逐帧循环

        Args:
            char_ids: 字符ID
            length_bias_frames: 加在预测长度上的常数帧数
            noise_mode: 'zeros'（推理默认）或 'sample'
            rng: noise_mode 为 'sample' 时使用的随机数发生器
            r: 缩减因子，默认使用调度的最终值

        Returns:
            SynthesisResult
        """
        if not char_ids:
            raise InputError("待合成文本为空")
        if noise_mode not in NOISE_MODES:
            raise ConfigError(f"未知噪声模式 {noise_mode}，可选 {NOISE_MODES}")
        r = r or self.cfg.final_r
        self.reduction_state(r)
        with self.evaluating(), no_grad():
            memory = self.encode_text(char_ids)
            predicted, _ = self.predict_length(memory)
            target = max(1, int(math.floor(predicted.item() + 0.5)) + int(length_bias_frames))
            n_reduced = -(-target // r)
            if noise_mode == 'zeros':
                noise = np.zeros((n_reduced, self.cfg.d_z))
            else:
                rng = rng or np.random.default_rng()
                noise = rng.standard_normal((n_reduced, self.cfg.d_z))
            sample = self.prior.sample(noise, memory)
            decoded = self.decoder(sample.z, memory, r)
        logger.debug(f"【合成】预测长度 {predicted.item():.2f}，输出 {n_reduced * r} 帧")
        return SynthesisResult(spectrogram=decoded.after.data.copy(), predicted_length=predicted.item(),
                               n_frames=n_reduced * r, r=r, alignments=decoded.alignments)
