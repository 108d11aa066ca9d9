"""
运行配置管理器
处理运行配置的默认值、命名预设、key = value 文本的解析与回写
"""
import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import config
from errors import ConfigError
from models.vaenar import VaenarConfig
from training.corpus import SyntheticCorpusSpec, text_to_ids
from training.optimizer import OptimizerState
from training.schedule import RFSchedule

logger = logging.getLogger(__name__)

_TRUE = {'true', 'yes', 'on', '1'}
_FALSE = {'false', 'no', 'off', '0'}
# 配置文件中用于选择基础预设的特殊键
PRESET_KEY = 'preset'


@dataclass
class RunConfig:
    """一次运行的全部配置，所有键都有默认值（即 desk 预设）"""
    seed: int = 0

    # 模型结构
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
    causal_mask: bool = True

    # 损失权重
    alpha: float = 1e-4
    beta: float = 1.0

    # 优化器
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = config.GRAD_CLIP_NORM

    # 缩减因子调度
    rf_initial: int = 5
    rf_step_every: int = 20
    rf_floor: int = 2

    # 训练
    epochs: int = 100
    batch_size: int = 8
    checkpoint_every: int = 10
    val_fraction: float = 0.1
    test_fraction: float = 0.05
    show_progress: bool = True

    # 合成，-1 表示取语料平均帧数的10%
    length_bias_frames: int = -1

    # 合成语料
    corpus_utterances: int = 200
    corpus_min_chars: int = 5
    corpus_max_chars: int = 15
    corpus_symbols: str = "abcdefghij"
    corpus_min_duration: int = 2
    corpus_max_duration: int = 6
    corpus_jitter: float = 0.2
    corpus_noise_std: float = 0.05
    corpus_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("epochs、batch_size、checkpoint_every 必须 >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"损失权重必须非负: alpha={self.alpha}, beta={self.beta}")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip 必须为正，实际为 {self.grad_clip}")
        if self.length_bias_frames < -1:
            raise ConfigError(f"length_bias_frames 必须 >= 0（或 -1 表示自动），实际为 {self.length_bias_frames}")

    def replace(self, **changes) -> 'RunConfig':
        return dataclasses.replace(self, **changes)

    def schedule(self) -> RFSchedule:
        return RFSchedule(self.rf_initial, self.rf_step_every, self.rf_floor)

    def model_config(self) -> VaenarConfig:
        return VaenarConfig(
            vocab_size=len(config.get_symbol_table()),
            embed_dim=self.embed_dim, prenet_layers=self.prenet_layers, prenet_kernel=self.prenet_kernel,
            prenet_channels=self.prenet_channels, d_model=self.d_model, n_heads=self.n_heads, d_ffn=self.d_ffn,
            dropout_rate=self.dropout_rate, encoder_blocks=self.encoder_blocks,
            posterior_prenet_dim=self.posterior_prenet_dim, posterior_blocks=self.posterior_blocks,
            decoder_blocks=self.decoder_blocks, prior_blocks=self.prior_blocks,
            prior_attention_blocks=self.prior_attention_blocks, d_z=self.d_z, n_bins=self.n_bins,
            postnet_layers=self.postnet_layers, postnet_channels=self.postnet_channels,
            postnet_kernel=self.postnet_kernel, reduction_factors=self.schedule().values,
            causal_mask=self.causal_mask,
        )

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps)

    def corpus_spec(self) -> SyntheticCorpusSpec:
        symbols = config.get_symbol_table()
        return SyntheticCorpusSpec(
            alphabet=text_to_ids(self.corpus_symbols, symbols),
            n_utterances=self.corpus_utterances, min_chars=self.corpus_min_chars,
            max_chars=self.corpus_max_chars, n_bins=self.n_bins, min_duration=self.corpus_min_duration,
            max_duration=self.corpus_max_duration, duration_jitter=self.corpus_jitter,
            noise_std=self.corpus_noise_std, seed=self.corpus_seed, vocab_size=len(symbols),
        )


def _field_types() -> Dict[str, type]:
    return {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str, kind: type, line_no: int):
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"第 {line_no} 行: {key} 的值 {raw!r} 不是合法的 {kind.__name__}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_pairs(text: str) -> List[Tuple[int, str, str]]:
    """把配置文本拆成 (行号, 键, 值)，忽略空行和 # 注释"""
    pairs = []
    seen = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        if '=' not in stripped:
            raise ConfigError(f"第 {line_no} 行缺少 '=': {line.strip()!r}")
        key, value = (part.strip() for part in stripped.split('=', 1))
        if not key:
            raise ConfigError(f"第 {line_no} 行缺少键名")
        if key in seen:
            raise ConfigError(f"第 {line_no} 行重复的键: {key}")
        seen.add(key)
        pairs.append((line_no, key, value))
    return pairs


class RunConfigManager:
    """运行配置管理器类"""

    def __init__(self, presets_dir: str = config.PRESETS_DIR):
        self.presets_dir = presets_dir

    def get_available_presets(self) -> List[str]:
        """获取可用的命名预设列表"""
        presets = []
        if os.path.exists(self.presets_dir):
            for file in os.listdir(self.presets_dir):
                if file.endswith(config.PRESET_EXT):
                    presets.append(os.path.splitext(file)[0])
        return sorted(presets)

    def load_preset(self, name: str) -> RunConfig:
        """载入命名预设（在默认值上覆盖预设文件中的键）"""
        path = os.path.join(self.presets_dir, name + config.PRESET_EXT)
        if not os.path.isfile(path):
            raise ConfigError(f"未知预设 {name}，可用预设: {self.get_available_presets()}")
        with open(path, 'r', encoding='utf-8') as f:
            return self._overlay(RunConfig(), f.read(), allow_preset=False)

    def parse_text(self, text: str, base: Optional[RunConfig] = None) -> RunConfig:
        """
        解析配置文本

        Args:
            text: key = value 文本；可用 preset = 名称 选择基础预设
            base: 基础配置，默认为 desk 默认值

        Returns:
            RunConfig
        """
        return self._overlay(base or RunConfig(), text, allow_preset=True)

    def _overlay(self, base: RunConfig, text: str, allow_preset: bool) -> RunConfig:
        types = _field_types()
        changes = {}
        for line_no, key, raw in parse_pairs(text):
            if key == PRESET_KEY:
                if not allow_preset:
                    raise ConfigError(f"第 {line_no} 行: 预设文件中不能再引用预设")
                base = self.load_preset(raw)
                continue
            if key not in types:
                raise ConfigError(f"第 {line_no} 行: 未知配置项 {key}")
            changes[key] = _parse_value(key, raw, types[key], line_no)
        return base.replace(**changes)

    def load(self, path: Optional[str], base: Optional[RunConfig] = None) -> Tuple[RunConfig, str]:
        """
        读取配置文件

        Args:
            path: 配置文件路径
            base: 文件内容覆盖之前的基础配置，默认为 RunConfig()

        Returns:
            (配置, 原始文本)；path 为空时返回基础配置和空文本
        """
        base = base if base is not None else RunConfig()
        if not path:
            return base, ""
        if not os.path.isfile(path):
            raise ConfigError(f"配置文件不存在: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
        return self.parse_text(text, base), text

    @staticmethod
    def serialize(cfg: RunConfig) -> str:
        """把完整配置写成 key = value 文本（嵌入检查点）"""
        lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(RunConfig)]
        return '\n'.join(lines) + '\n'
