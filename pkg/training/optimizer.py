"""
Adam 优化器与梯度裁剪
状态按参数限定名保存一阶/二阶矩，便于写入检查点后逐位恢复
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

import config
from engine import Tensor
from errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """Adam 状态"""
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"学习率必须为正，实际为 {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"beta 必须在 [0,1) 内: {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"eps 必须为正，实际为 {self.eps}")

    @classmethod
    def full_scale(cls) -> 'OptimizerState':
        preset = config.FULL_SCALE_PRESET
        return cls(preset['learning_rate'], preset['adam_beta1'], preset['adam_beta2'])


def collect_grads(params: Sequence[Tuple[str, Tensor]], scale: float = 1.0) -> Dict[str, np.ndarray]:
    """收集参数梯度，没有梯度的参数视为零梯度"""
    grads = {}
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        grads[name] = g * scale if scale != 1.0 else g.copy()
    return grads


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """
    按全局L2范数裁剪梯度

    Returns:
        (裁剪后的梯度, 裁剪前的全局范数)
    """
    if max_norm <= 0:
        raise ConfigError(f"裁剪范数必须为正，实际为 {max_norm}")
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if not np.isfinite(total) or total <= max_norm:
        return grads, total
    factor = max_norm / (total + 1e-12)
    logger.debug(f"【优化】梯度范数 {total:.3f} 超过 {max_norm}，已裁剪")
    return {name: g * factor for name, g in grads.items()}, total


def adam_step(params: Sequence[Tuple[str, Tensor]], grads: Dict[str, np.ndarray],
              state: OptimizerState) -> OptimizerState:
    """
    一步带偏差修正的 Adam 更新

    Args:
        params: (限定名, 参数) 列表
        grads: 限定名到梯度的映射
        state: 优化器状态（原地更新）

    Returns:
        更新后的状态
    """
    # 先整体检查，任一梯度非有限时不做任何更新
    for name, _ in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"参数 {name} 的梯度包含 NaN/Inf，已放弃本步更新")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, p in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.first.get(name)
        v = state.second.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first[name] = m
        state.second[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return state
