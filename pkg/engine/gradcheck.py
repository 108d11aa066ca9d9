"""
有限差分校验工具
中心差分梯度、雅可比矩阵，以及按参数张量的梯度比对报告
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import Tensor, no_grad

ScalarFn = Callable[[Tensor], Union[Tensor, float]]


def _as_float(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def finite_diff_grad(f: ScalarFn, x: Tensor, step: float = 1e-4,
                     indices: Optional[Sequence[Tuple[int, ...]]] = None) -> np.ndarray:
    """
    中心差分梯度 (f(x+he) - f(x-he)) / 2h

    Args:
        f: 标量函数，接收 x 本身（f 需在固定随机种子下确定）
        x: 被扰动的张量，求值之间原地扰动并复原
        step: 差分步长 h
        indices: 只估计这些元素，其余位置为0；默认全部元素

    Returns:
        与 x 同形状的梯度估计
    """
    if step <= 0:
        raise ValueError("差分步长必须为正")
    grad = np.zeros_like(x.data)
    if indices is None:
        indices = list(np.ndindex(*x.shape))
    with no_grad():
        for idx in indices:
            original = x.data[idx]
            x.data[idx] = original + step
            f_plus = _as_float(f(x))
            x.data[idx] = original - step
            f_minus = _as_float(f(x))
            x.data[idx] = original
            grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad


def finite_diff_jacobian(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """
    中心差分雅可比矩阵

    Returns:
        形状 [输出元素数, 输入元素数]
    """
    with no_grad():
        out_size = f(x).size
        jac = np.zeros((out_size, x.size))
        flat = x.data.reshape(-1)
        for j in range(x.size):
            original = flat[j]
            flat[j] = original + step
            plus = f(x).data.reshape(-1).copy()
            flat[j] = original - step
            minus = f(x).data.reshape(-1).copy()
            flat[j] = original
            jac[:, j] = (plus - minus) / (2.0 * step)
    return jac


def relative_error(a, b, floor: float = 1e-8) -> float:
    """逐元素最大相对误差 |a-b| / max(|a|+|b|, floor)"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def norm_relative_error(a, b, floor: float = 1e-8) -> float:
    """整体相对误差 ||a-b|| / max(||a||+||b||, floor)，用于按参数张量比对"""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if not a.size:
        return 0.0
    denom = max(float(np.linalg.norm(a) + np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / denom


@dataclass
class GradCheckReport:
    """梯度比对报告：每个参数张量的相对误差"""
    errors: Dict[str, float] = field(default_factory=dict)
    n_entries: int = 0

    def fraction_below(self, tol: float) -> float:
        if not self.errors:
            return 1.0
        return sum(1 for e in self.errors.values() if e < tol) / len(self.errors)

    def worst(self) -> Tuple[str, float]:
        if not self.errors:
            return "", 0.0
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def check_gradients(loss_fn: Callable[[], Tensor], params: List[Tuple[str, Tensor]],
                    step: float = 1e-4, max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None, floor: float = 1e-8) -> GradCheckReport:
    """
    比较反向传播梯度与中心差分，每个参数张量给出一个相对误差

    Args:
        loss_fn: 无参损失函数（闭包内使用 params）
        params: (名称, 张量) 列表
        step: 差分步长
        max_entries: 每个参数最多比对的元素数，None 表示全部元素
        rng: 抽样用随机数发生器
        floor: 相对误差分母下限

    Returns:
        GradCheckReport
    """
    rng = rng or np.random.default_rng(0)
    for _, p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params}

    report = GradCheckReport()
    for name, p in params:
        all_indices = list(np.ndindex(*p.shape))
        if max_entries is not None and len(all_indices) > max_entries:
            picks = rng.choice(len(all_indices), size=max_entries, replace=False)
            indices = [all_indices[i] for i in sorted(picks)]
        else:
            indices = all_indices
        numeric = finite_diff_grad(lambda _x: loss_fn(), p, step, indices)
        a = np.array([analytic[name][i] for i in indices])
        n = np.array([numeric[i] for i in indices])
        report.errors[name] = norm_relative_error(a, n, floor)
        report.n_entries += len(indices)
    return report
