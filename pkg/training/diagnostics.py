"""
对齐诊断
对角性：每个解码帧落在对角带内的注意力质量的平均值
单调性：相邻解码帧的注意力argmax不回退的比例
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

import config
from errors import DimensionError, InputError
from models.data_types import AttentionWeights


@dataclass
class AlignmentDiagnostics:
    """对齐诊断结果"""
    diagonality: float
    monotonicity: float
    epoch: int = -1


@dataclass
class MetricsRow:
    """指标日志的一行"""
    epoch: int
    r: int
    recon: float
    kl: float
    length: float
    total: float
    diagonality: float
    monotonicity: float

    def as_list(self) -> list:
        return [self.epoch, self.r, self.recon, self.kl, self.length, self.total,
                self.diagonality, self.monotonicity]


def _as_matrix(weights: Union[AttentionWeights, np.ndarray]) -> np.ndarray:
    if isinstance(weights, AttentionWeights):
        return weights.head_average()
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 3:
        return weights.mean(axis=0)
    if weights.ndim != 2:
        raise DimensionError(f"注意力权重应为 [T_q,T_k] 或 [h,T_q,T_k]，实际为 {weights.shape}")
    return weights


def band_half_width(n_chars: int) -> float:
    return max(1.0, config.DIAGONAL_BAND_FRACTION * n_chars)


def alignment_diagnostics(weights: Union[AttentionWeights, np.ndarray], n_chars: Optional[int] = None,
                          n_reduced: Optional[int] = None, epoch: int = -1) -> AlignmentDiagnostics:
    """
    计算单个注意力矩阵的对角性与单调性

    Args:
        weights: 解码帧对字符的注意力（可含多头，取平均）
        n_chars: 字符数 M，默认取矩阵列数
        n_reduced: 解码帧数 N_r，默认取矩阵行数
        epoch: 所属轮次

    Returns:
        AlignmentDiagnostics
    """
    a = _as_matrix(weights)
    n_reduced = n_reduced or a.shape[0]
    n_chars = n_chars or a.shape[1]
    if a.shape != (n_reduced, n_chars):
        raise DimensionError(f"注意力形状 {a.shape} 与 (N_r={n_reduced}, M={n_chars}) 不符")

    width = band_half_width(n_chars)
    centers = np.arange(n_reduced)[:, None] * n_chars / n_reduced
    keys = np.arange(n_chars)[None, :]
    band = np.abs(keys - centers) <= width
    diagonality = float(np.mean(np.sum(a * band, axis=1)))

    if n_reduced < 2:
        monotonicity = 1.0
    else:
        path = np.argmax(a, axis=1)
        monotonicity = float(np.mean(np.diff(path) >= 0))
    return AlignmentDiagnostics(diagonality=diagonality, monotonicity=monotonicity, epoch=epoch)


def average_diagnostics(items: Sequence[AlignmentDiagnostics], epoch: int = -1) -> AlignmentDiagnostics:
    if not items:
        raise InputError("没有可平均的对齐诊断")
    return AlignmentDiagnostics(
        diagonality=float(np.mean([d.diagonality for d in items])),
        monotonicity=float(np.mean([d.monotonicity for d in items])),
        epoch=epoch,
    )


def epochs_to_diagonality(rows: Sequence[MetricsRow], threshold: float = config.DIAGONALITY_TARGET) -> Optional[int]:
    """对角性首次达到阈值时已完成的轮数，从未达到时返回 None"""
    for row in rows:
        if row.diagonality >= threshold:
            return row.epoch + 1
    return None


def ordering_key(epochs: Optional[int]) -> float:
    """从未达到阈值的运行排在最后"""
    return float('inf') if epochs is None else float(epochs)
