"""
合成语料模块
每个符号对应一个固定的频谱轮廓和基础时长，语句频谱为各符号轮廓按时长重复后拼接并叠加高斯噪声
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import ConfigError, VocabularyError
from models.data_types import Spectrogram

logger = logging.getLogger(__name__)

# 单位化后任意两个轮廓的最小L2距离
MIN_PROFILE_DISTANCE = 0.1


@dataclass
class SymbolTemplate:
    """单个符号的基础时长（帧）与频谱轮廓 [n_bins]"""
    duration: int
    profile: np.ndarray


@dataclass
class SyntheticCorpusSpec:
    """合成语料描述"""
    alphabet: Tuple[int, ...]
    n_utterances: int = 200
    min_chars: int = 5
    max_chars: int = 15
    n_bins: int = 16
    min_duration: int = 2
    max_duration: int = 6
    duration_jitter: float = 0.2
    noise_std: float = 0.05
    seed: int = 0
    vocab_size: int = 43
    templates: Optional[Dict[int, SymbolTemplate]] = None

    def __post_init__(self):
        self.alphabet = tuple(int(i) for i in self.alphabet)
        if not self.alphabet:
            raise ConfigError("语料字母表为空")
        bad = [i for i in self.alphabet if not 0 <= i < self.vocab_size]
        if bad:
            raise ConfigError(f"语料字母表包含超出符号表的ID: {bad}")
        if self.n_utterances < 1:
            raise ConfigError(f"语句数必须 >= 1，实际为 {self.n_utterances}")
        if not 1 <= self.min_chars <= self.max_chars:
            raise ConfigError(f"字符数范围非法: [{self.min_chars}, {self.max_chars}]")
        if not 2 <= self.min_duration <= self.max_duration:
            raise ConfigError(f"基础时长范围必须满足 2 <= min <= max: [{self.min_duration}, {self.max_duration}]")
        if not 0.0 <= self.duration_jitter < 1.0:
            raise ConfigError(f"时长抖动必须在 [0,1) 内，实际为 {self.duration_jitter}")
        if self.noise_std < 0:
            raise ConfigError(f"噪声标准差必须非负，实际为 {self.noise_std}")
        if self.templates is not None:
            validate_templates(self.templates, self.alphabet, self.n_bins)


@dataclass
class Utterance:
    """一条语句：字符、频谱及真实逐符号时长（时长只用于诊断，不输入模型）"""
    utt_id: str
    char_ids: Tuple[int, ...]
    text: str
    spectrogram: Spectrogram
    durations: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def n_frames(self) -> int:
        return self.spectrogram.n_frames


@dataclass
class CorpusSplit:
    """训练/验证/测试划分"""
    train: List[Utterance]
    val: List[Utterance]
    test: List[Utterance]


def text_to_ids(text: str, symbols: Optional[Sequence[str]] = None) -> Tuple[int, ...]:
    """
    把文本转换为字符ID

    Args:
        text: 文本（小写字母与标点）
        symbols: 符号表，默认读取资源文件

    Returns:
        字符ID元组
    """
    symbols = list(symbols) if symbols is not None else config.get_symbol_table()
    lookup = {s: i for i, s in enumerate(symbols)}
    unknown = sorted({ch for ch in text if ch not in lookup})
    if unknown:
        raise VocabularyError(f"文本包含符号表之外的字符: {''.join(unknown)!r}")
    return tuple(lookup[ch] for ch in text)


def ids_to_text(char_ids: Sequence[int], symbols: Optional[Sequence[str]] = None) -> str:
    symbols = list(symbols) if symbols is not None else config.get_symbol_table()
    return ''.join(symbols[i] for i in char_ids)


def validate_templates(templates: Dict[int, SymbolTemplate], alphabet: Sequence[int], n_bins: int):
    """检查模板覆盖字母表、时长 >= 2 且轮廓两两可区分"""
    missing = [i for i in alphabet if i not in templates]
    if missing:
        raise ConfigError(f"以下符号缺少模板: {missing}")
    units = {}
    for sid in alphabet:
        tpl = templates[sid]
        if tpl.duration < 2:
            raise ConfigError(f"符号 {sid} 的基础时长 {tpl.duration} 小于2帧")
        profile = np.asarray(tpl.profile, dtype=np.float64)
        if profile.shape != (n_bins,):
            raise ConfigError(f"符号 {sid} 的轮廓形状 {profile.shape} 与 n_bins={n_bins} 不符")
        norm = np.linalg.norm(profile)
        if norm == 0:
            raise ConfigError(f"符号 {sid} 的轮廓为全零")
        units[sid] = profile / norm
    ids = list(units)
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            dist = np.linalg.norm(units[ids[a]] - units[ids[b]])
            if dist <= MIN_PROFILE_DISTANCE:
                raise ConfigError(f"符号 {ids[a]} 与 {ids[b]} 的轮廓过于接近（距离 {dist:.4f}）")


def build_templates(spec: SyntheticCorpusSpec, rng: np.random.Generator) -> Dict[int, SymbolTemplate]:
    """为字母表中每个符号随机生成基础时长与频谱轮廓"""
    templates = {}
    for sid in spec.alphabet:
        duration = int(rng.integers(spec.min_duration, spec.max_duration + 1))
        profile = rng.standard_normal(spec.n_bins)
        templates[sid] = SymbolTemplate(duration=duration, profile=profile)
    validate_templates(templates, spec.alphabet, spec.n_bins)
    return templates


def realize_durations(char_ids: Sequence[int], templates: Dict[int, SymbolTemplate], jitter: float,
                      rng: np.random.Generator) -> List[int]:
    """基础时长乘以 (1 + 抖动) 后取整，至少1帧"""
    durations = []
    for sid in char_ids:
        base = templates[sid].duration
        scale = 1.0 + jitter * rng.uniform(-1.0, 1.0) if jitter > 0 else 1.0
        durations.append(max(1, int(round(base * scale))))
    return durations


def render_spectrogram(char_ids: Sequence[int], durations: Sequence[int], templates: Dict[int, SymbolTemplate],
                       noise_std: float, rng: np.random.Generator) -> np.ndarray:
    """按时长重复各符号轮廓并叠加噪声"""
    rows = [np.tile(np.asarray(templates[sid].profile, dtype=np.float64), (d, 1))
            for sid, d in zip(char_ids, durations)]
    frames = np.concatenate(rows, axis=0)
    if noise_std > 0:
        frames = frames + noise_std * rng.standard_normal(frames.shape)
    return frames


def generate_corpus(spec: SyntheticCorpusSpec, symbols: Optional[Sequence[str]] = None) -> List[Utterance]:
    """
    生成合成语料，同一种子得到逐位相同的语料

    Args:
        spec: 语料描述
        symbols: 符号表，用于生成文本

    Returns:
        语句列表
    """
    symbols = list(symbols) if symbols is not None else config.get_symbol_table()
    rng = np.random.default_rng(spec.seed)
    templates = spec.templates if spec.templates is not None else build_templates(spec, rng)

    utterances = []
    for index in range(spec.n_utterances):
        n_chars = int(rng.integers(spec.min_chars, spec.max_chars + 1))
        picks = rng.integers(0, len(spec.alphabet), size=n_chars)
        char_ids = tuple(spec.alphabet[k] for k in picks)
        durations = realize_durations(char_ids, templates, spec.duration_jitter, rng)
        frames = render_spectrogram(char_ids, durations, templates, spec.noise_std, rng)
        utterances.append(Utterance(
            utt_id=f"utt_{index:04d}",
            char_ids=char_ids,
            text=ids_to_text(char_ids, symbols),
            spectrogram=Spectrogram(frames),
            durations=tuple(durations),
        ))

    total = sum(u.n_frames for u in utterances)
    logger.info(f"【语料】生成 {len(utterances)} 条语句，共 {total} 帧")
    return utterances


def split_corpus(utterances: Sequence[Utterance], val_fraction: float = 0.1, test_fraction: float = 0.0,
                 seed: int = 0) -> CorpusSplit:
    """
    按种子划分训练/验证/测试集，训练集至少保留一条

    Args:
        utterances: 全部语句
        val_fraction: 验证集比例
        test_fraction: 测试集比例
        seed: 划分种子

    Returns:
        CorpusSplit（各子集保持原始顺序）
    """
    if not utterances:
        raise ConfigError("语料为空")
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1.0:
        raise ConfigError(f"划分比例非法: val={val_fraction}, test={test_fraction}")
    n = len(utterances)
    n_val = int(round(n * val_fraction))
    n_test = int(round(n * test_fraction))
    while n_val + n_test >= n and (n_val or n_test):
        if n_test:
            n_test -= 1
        else:
            n_val -= 1
    order = np.random.default_rng([seed, n]).permutation(n)
    val_idx = set(order[:n_val].tolist())
    test_idx = set(order[n_val:n_val + n_test].tolist())
    split = CorpusSplit(train=[], val=[], test=[])
    for i, utt in enumerate(utterances):
        if i in val_idx:
            split.val.append(utt)
        elif i in test_idx:
            split.test.append(utt)
        else:
            split.train.append(utt)
    return split


def mean_frames(utterances: Sequence[Utterance]) -> float:
    return float(np.mean([u.n_frames for u in utterances])) if utterances else 0.0
