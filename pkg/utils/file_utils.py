"""
文件操作工具模块
频谱文件(VSPG)、检查点文件(VNCK)、语料目录、指标日志和对齐CSV的读写
写入均先写临时文件再重命名
"""
import csv
import io
import logging
import math
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import FormatError
from models.data_types import Spectrogram
from training.corpus import Utterance, text_to_ids
from training.diagnostics import MetricsRow

logger = logging.getLogger(__name__)

_U32 = struct.Struct('<I')
_F64 = struct.Struct('<d')
_SPEC_HEADER = struct.Struct('<4sIII')


def atomic_write(path: str, data: bytes):
    """写入临时文件后原子替换目标文件"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp_', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_text_file(path: str, text: str) -> Tuple[bool, str]:
    try:
        atomic_write(path, text.encode('utf-8'))
        return True, ""
    except OSError as e:
        return False, f"写入文件失败 {path}: {e}"


# --- 频谱文件 ---
def encode_spectrogram(y: np.ndarray) -> bytes:
    """VSPG：魔数、版本、帧数、频带数，随后为 f32 小端行优先数据"""
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[0] < 1:
        raise FormatError(f"频谱必须为非空二维数组，实际形状 {y.shape}")
    header = _SPEC_HEADER.pack(config.SPECTROGRAM_MAGIC, config.SPECTROGRAM_VERSION, y.shape[0], y.shape[1])
    return header + np.ascontiguousarray(y, dtype='<f4').tobytes()


def decode_spectrogram(data: bytes) -> np.ndarray:
    if len(data) < _SPEC_HEADER.size:
        raise FormatError("频谱文件过短")
    magic, version, n_frames, n_bins = _SPEC_HEADER.unpack_from(data)
    if magic != config.SPECTROGRAM_MAGIC:
        raise FormatError(f"频谱文件魔数错误: {magic!r}")
    if version != config.SPECTROGRAM_VERSION:
        raise FormatError(f"不支持的频谱文件版本: {version}")
    if n_frames < 1:
        raise FormatError("频谱文件帧数为0")
    expected = _SPEC_HEADER.size + 4 * n_frames * n_bins
    if len(data) != expected:
        raise FormatError(f"频谱文件长度 {len(data)} 与头部声明的 {expected} 不符")
    body = np.frombuffer(data, dtype='<f4', offset=_SPEC_HEADER.size)
    return body.reshape(n_frames, n_bins).astype(np.float64)


def write_spectrogram(path: str, y: np.ndarray) -> Tuple[bool, str]:
    """
    写入频谱文件

    Returns:
        (是否成功, 错误信息)
    """
    try:
        atomic_write(path, encode_spectrogram(y))
        return True, ""
    except (OSError, FormatError) as e:
        return False, f"写入频谱文件失败 {path}: {e}"


def read_spectrogram(path: str) -> Spectrogram:
    with open(path, 'rb') as f:
        return Spectrogram(decode_spectrogram(f.read()))


def read_spectrogram_header(path: str) -> Tuple[int, int]:
    """只读取头部，返回 (帧数, 频带数)"""
    with open(path, 'rb') as f:
        head = f.read(_SPEC_HEADER.size)
    if len(head) < _SPEC_HEADER.size:
        raise FormatError(f"频谱文件过短: {path}")
    magic, _, n_frames, n_bins = _SPEC_HEADER.unpack(head)
    if magic != config.SPECTROGRAM_MAGIC:
        raise FormatError(f"频谱文件魔数错误: {path}")
    return n_frames, n_bins


# --- 检查点文件 ---
@dataclass
class CheckpointData:
    """检查点内容：参数与缓冲区、Adam状态、调度位置和嵌入的运行配置"""
    tensors: Dict[str, np.ndarray]
    learning_rate: float
    beta1: float
    beta2: float
    eps: float
    step: int
    first: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    second: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    initial_r: int = 5
    step_every: int = 20
    floor_r: int = 2
    epoch: int = 0
    best_val: float = math.inf
    config_text: str = ""


def _pack_records(out: io.BytesIO, tensors: Dict[str, np.ndarray]):
    out.write(_U32.pack(len(tensors)))
    for name, value in tensors.items():
        encoded = name.encode('utf-8')
        value = np.asarray(value, dtype='<f8')
        out.write(_U32.pack(len(encoded)))
        out.write(encoded)
        out.write(_U32.pack(value.ndim))
        for dim in value.shape:
            out.write(_U32.pack(dim))
        out.write(np.ascontiguousarray(value).tobytes())


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"检查点文件在偏移 {self.pos} 处被截断")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def f64(self) -> float:
        return _F64.unpack(self.take(8))[0]


def _unpack_records(cursor: _Cursor) -> "OrderedDict[str, np.ndarray]":
    tensors = OrderedDict()
    for _ in range(cursor.u32()):
        try:
            name = cursor.take(cursor.u32()).decode('utf-8')
        except UnicodeDecodeError as e:
            raise FormatError(f"检查点记录名不是合法UTF-8: {e}")
        rank = cursor.u32()
        shape = tuple(cursor.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(cursor.take(8 * count), dtype='<f8').reshape(shape).astype(np.float64)
        if name in tensors:
            raise FormatError(f"检查点记录名重复: {name}")
        tensors[name] = values
    return tensors


def encode_checkpoint(ckpt: CheckpointData) -> bytes:
    """
    VNCK：魔数、版本、记录数、参数记录
    随后是Adam状态（学习率、beta1、beta2、eps、步数、一阶矩记录、二阶矩记录）、
    调度位置（initial_r、step_every、floor_r、已完成轮数、最佳验证损失）和运行配置文本
    """
    out = io.BytesIO()
    out.write(config.CHECKPOINT_MAGIC)
    out.write(_U32.pack(config.CHECKPOINT_VERSION))
    _pack_records(out, ckpt.tensors)
    for value in (ckpt.learning_rate, ckpt.beta1, ckpt.beta2, ckpt.eps):
        out.write(_F64.pack(value))
    out.write(_U32.pack(ckpt.step))
    _pack_records(out, ckpt.first)
    _pack_records(out, ckpt.second)
    for value in (ckpt.initial_r, ckpt.step_every, ckpt.floor_r, ckpt.epoch):
        out.write(_U32.pack(value))
    out.write(_F64.pack(ckpt.best_val))
    text = ckpt.config_text.encode('utf-8')
    out.write(_U32.pack(len(text)))
    out.write(text)
    return out.getvalue()


def decode_checkpoint(data: bytes) -> CheckpointData:
    cursor = _Cursor(data)
    magic = cursor.take(4)
    if magic != config.CHECKPOINT_MAGIC:
        raise FormatError(f"检查点魔数错误: {magic!r}")
    version = cursor.u32()
    if version != config.CHECKPOINT_VERSION:
        raise FormatError(f"不支持的检查点版本: {version}")
    tensors = _unpack_records(cursor)
    lr, beta1, beta2, eps = (cursor.f64() for _ in range(4))
    step = cursor.u32()
    first = _unpack_records(cursor)
    second = _unpack_records(cursor)
    initial_r, step_every, floor_r, epoch = (cursor.u32() for _ in range(4))
    best_val = cursor.f64()
    try:
        config_text = cursor.take(cursor.u32()).decode('utf-8')
    except UnicodeDecodeError as e:
        raise FormatError(f"检查点配置文本不是合法UTF-8: {e}")
    if cursor.pos != len(data):
        raise FormatError(f"检查点末尾有 {len(data) - cursor.pos} 字节多余数据")
    return CheckpointData(tensors=tensors, learning_rate=lr, beta1=beta1, beta2=beta2, eps=eps, step=step,
                          first=first, second=second, initial_r=initial_r, step_every=step_every,
                          floor_r=floor_r, epoch=epoch, best_val=best_val, config_text=config_text)


def write_checkpoint(path: str, ckpt: CheckpointData) -> Tuple[bool, str]:
    try:
        atomic_write(path, encode_checkpoint(ckpt))
        logger.debug(f"【检查点】已写入 {path}")
        return True, ""
    except OSError as e:
        return False, f"写入检查点失败 {path}: {e}"


def read_checkpoint(path: str) -> CheckpointData:
    if not os.path.isfile(path):
        raise FormatError(f"检查点文件不存在: {path}")
    with open(path, 'rb') as f:
        return decode_checkpoint(f.read())


# --- 语料目录 ---
def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _format_number(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_corpus(out_dir: str, utterances: Sequence[Utterance]) -> Tuple[bool, str]:
    """
    写入语料目录：每条语句一个频谱文件，外加索引文件

    Args:
        out_dir: 输出目录
        utterances: 语句列表

    Returns:
        (是否成功, 错误信息)
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        return False, f"无法创建语料目录 {out_dir}: {e}"
    rows = []
    for utt in utterances:
        ok, message = write_spectrogram(os.path.join(out_dir, utt.utt_id + config.SPECTROGRAM_EXT), utt.spectrogram.y)
        if not ok:
            return False, message
        rows.append([utt.utt_id, utt.text, utt.n_frames, ' '.join(str(d) for d in utt.durations)])
    ok, message = write_text_file(os.path.join(out_dir, config.CORPUS_INDEX_FILE),
                                  _csv_text(config.CORPUS_INDEX_HEADER, rows))
    if ok:
        logger.info(f"【语料】已写入 {len(utterances)} 条语句到 {out_dir}")
    return ok, message


def read_corpus_index(corpus_dir: str) -> List[List[str]]:
    index_path = os.path.join(corpus_dir, config.CORPUS_INDEX_FILE)
    if not os.path.isfile(index_path):
        raise FormatError(f"语料索引不存在: {index_path}")
    with open(index_path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != config.CORPUS_INDEX_HEADER:
        raise FormatError(f"语料索引表头错误: {index_path}")
    return rows[1:]


def read_corpus(corpus_dir: str, symbols: Optional[Sequence[str]] = None) -> List[Utterance]:
    """读取语料目录，检查索引帧数与频谱文件一致"""
    utterances = []
    for row in read_corpus_index(corpus_dir):
        if len(row) != len(config.CORPUS_INDEX_HEADER):
            raise FormatError(f"语料索引行格式错误: {row}")
        utt_id, text, n_frames, durations = row
        spectrogram = read_spectrogram(os.path.join(corpus_dir, utt_id + config.SPECTROGRAM_EXT))
        if spectrogram.n_frames != int(n_frames):
            raise FormatError(f"{utt_id} 的索引帧数 {n_frames} 与文件 {spectrogram.n_frames} 不符")
        utterances.append(Utterance(
            utt_id=utt_id,
            char_ids=text_to_ids(text, symbols),
            text=text,
            spectrogram=spectrogram,
            durations=tuple(int(d) for d in durations.split()),
        ))
    if not utterances:
        raise FormatError(f"语料目录为空: {corpus_dir}")
    return utterances


# --- 指标日志 ---
def metrics_text(rows: Sequence[MetricsRow]) -> str:
    return _csv_text(config.METRICS_HEADER, [[_format_number(v) for v in row.as_list()] for row in rows])


def write_metrics(path: str, rows: Sequence[MetricsRow]) -> Tuple[bool, str]:
    return write_text_file(path, metrics_text(rows))


def read_metrics(path: str) -> List[MetricsRow]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != config.METRICS_HEADER:
        raise FormatError(f"指标日志表头错误: {path}")
    result = []
    for row in rows[1:]:
        epoch, r, *values = row
        result.append(MetricsRow(int(epoch), int(r), *(float(v) for v in values)))
    return result


# --- 对齐矩阵 ---
def write_alignment_csv(path: str, matrix: np.ndarray) -> Tuple[bool, str]:
    """行为解码帧，列为字符"""
    matrix = np.asarray(matrix, dtype=np.float64)
    header = [f"char_{j}" for j in range(matrix.shape[1])]
    rows = [[repr(float(v)) for v in line] for line in matrix]
    return write_text_file(path, _csv_text(header, rows))


def read_alignment_csv(path: str) -> np.ndarray:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise FormatError(f"对齐CSV为空: {path}")
    return np.array([[float(v) for v in line] for line in rows[1:]])
