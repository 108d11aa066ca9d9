"""
稠密张量与反向模式自动微分
所有数据以64位浮点、行优先存储，运算在计算带上登记反向规则
"""
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

import config
from errors import ConfigError, DimensionError, InputError, NumericalError, SingularityError

ArrayLike = Union['Tensor', np.ndarray, float, int]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """当前线程是否记录计算带"""
    return getattr(_grad_state, 'enabled', True)


@contextmanager
def no_grad():
    """在该上下文中的运算不登记计算带节点（推理、蒙特卡洛估计）"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass
class TapeNode:
    """计算带节点：运算名、输入张量、反向规则"""
    op: str
    inputs: Tuple['Tensor', ...]
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """稠密张量，参与计算带记录"""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, copy: bool = True):
        """
        初始化张量

        Args:
            data: 数组数据
            requires_grad: 是否为需要梯度的叶子
            name: 名称（用于诊断信息）
            copy: 是否复制输入数据
        """
        if copy:
            self.data = np.array(data, dtype=np.float64)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[TapeNode] = None

    # --- 基本属性 ---
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() 需要单元素张量，实际形状 {self.shape}")
        return float(self.data.reshape(()))

    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self):
        self.grad = None

    def detach(self) -> 'Tensor':
        """返回脱离计算带的副本"""
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    # --- 运算符 ---
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> 'Tensor':
        if axis is None:
            return sum_all(self)
        return sum_axis(self, axis, keepdims)

    def mean(self) -> 'Tensor':
        return mean_all(self)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return transpose(self, tuple(axes))

    def exp(self) -> 'Tensor': return exp(self)
    def log(self) -> 'Tensor': return log(self)
    def relu(self) -> 'Tensor': return relu(self)
    def tanh(self) -> 'Tensor': return tanh(self)


class GradTape:
    """按拓扑序排列的计算带，每个节点的输入都排在它前面"""

    def __init__(self, order: List[Tensor]):
        self.order = order

    @property
    def nodes(self) -> List[TapeNode]:
        return [t._node for t in self.order if t._node is not None]

    @classmethod
    def record(cls, output: Tensor) -> 'GradTape':
        """从输出张量出发收集需要梯度的子图（迭代式后序遍历，避免递归深度限制）"""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for parent in reversed(tensor._node.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def replay(self, seed: np.ndarray):
        """逆序回放，每个节点恰好访问一次，叶子梯度累加"""
        grads = {id(self.order[-1]): seed}
        for tensor in reversed(self.order):
            g = grads.pop(id(tensor), None)
            if g is None:
                continue
            if tensor._node is None:
                tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
                continue
            input_grads = tensor._node.backward_fn(g)
            for parent, pg in zip(tensor._node.inputs, input_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def backward(loss: Tensor):
    """
    从标量损失反向传播

    Args:
        loss: 标量损失张量
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward 需要标量损失，实际形状 {loss.shape}")
    if not loss.requires_grad:
        raise InputError("损失不在计算带上（没有需要梯度的输入）")
    tape = GradTape.record(loss)
    tape.replay(np.ones_like(loss.data))


# --- 内部工具 ---
def constant(data) -> Tensor:
    """不需要梯度的常量张量"""
    return data if isinstance(data, Tensor) else Tensor(data, copy=False)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"运算 {op} 产生了 NaN/Inf")
    out = Tensor(data, copy=False)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = TapeNode(op, tuple(parents), backward_fn)
    return out


def _is_scalar_shape(shape: Tuple[int, ...]) -> bool:
    return len(shape) <= 1 and int(np.prod(shape)) == 1


def _broadcast_shape(a_shape: Tuple[int, ...], b_shape: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    """只允许前导维广播：一方是标量，或一方形状是另一方的后缀"""
    if a_shape == b_shape:
        return a_shape
    if _is_scalar_shape(b_shape):
        return a_shape
    if _is_scalar_shape(a_shape):
        return b_shape
    if len(a_shape) > len(b_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape:
        return a_shape
    if len(b_shape) > len(a_shape) and b_shape[len(b_shape) - len(a_shape):] == a_shape:
        return b_shape
    raise DimensionError(f"运算 {op} 的形状不兼容: {a_shape} 与 {b_shape}")


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if _is_scalar_shape(shape):
        return np.asarray(g.sum()).reshape(shape)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


# --- 逐元素运算 ---
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a.shape, b.shape, 'add')
    return _make(a.data + b.data, (a, b), 'add',
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a.shape, b.shape, 'sub')
    return _make(a.data - b.data, (a, b), 'sub',
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a.shape, b.shape, 'mul')
    return _make(a.data * b.data, (a, b), 'mul',
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a.shape, b.shape, 'div')
    with np.errstate(all='ignore'):
        data = a.data / b.data

    def _backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _make(data, (a, b), 'div', _backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), 'neg', lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    with np.errstate(all='ignore'):
        data = a.data ** p
    return _make(data, (a,), 'power', lambda g: (g * p * a.data ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(all='ignore'):
        data = np.exp(a.data)
    return _make(data, (a,), 'exp', lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    with np.errstate(all='ignore'):
        data = np.log(a.data)
    return _make(data, (a,), 'log', lambda g: (g / a.data,))


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), 'abs', lambda g: (g * np.sign(a.data),))


def relu(a: Tensor) -> Tensor:
    return _make(np.maximum(a.data, 0.0), (a,), 'relu', lambda g: (g * (a.data > 0),))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _make(data, (a,), 'tanh', lambda g: (g * (1.0 - data * data),))


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """截断，区间内梯度直通"""
    inside = (a.data >= low) & (a.data <= high)
    return _make(np.clip(a.data, low, high), (a,), 'clip', lambda g: (g * inside,))


# --- 归约与形状变换 ---
def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), (a,), 'sum',
                 lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(data, (a,), 'sum_axis', _backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), 'mean',
                 lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,), 'reshape', lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse_axes = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), 'transpose',
                 lambda g: (g.transpose(inverse_axes),))


def swap_last(a: Tensor) -> Tensor:
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [constant(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tuple(tensors), 'concat', lambda g: tuple(np.split(g, bounds, axis=axis)))


def getitem(a: Tensor, index) -> Tensor:
    data = np.array(a.data[index])

    def _backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)
    return _make(data, (a,), 'getitem', _backward)


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """按行索引取表（嵌入查找）"""
    ids = np.asarray(ids, dtype=np.int64)

    def _backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)
    return _make(table.data[ids], (table,), 'take_rows', _backward)


# --- 线性代数 ---
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    矩阵乘法 a[..,m,k] @ b[..,k,n]，批维需相同或其中一方为二维

    Args:
        a: 左矩阵
        b: 右矩阵

    Returns:
        乘积张量
    """
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul 形状不匹配: {a.shape} 与 {b.shape}")
    batch_a, batch_b = a.shape[:-2], b.shape[:-2]
    if batch_a and batch_b and batch_a != batch_b:
        raise DimensionError(f"matmul 批维不匹配: {a.shape} 与 {b.shape}")

    def _backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        if ga.shape != a.shape:
            ga = ga.reshape((-1,) + a.shape).sum(axis=0)
        if gb.shape != b.shape:
            gb = gb.reshape((-1,) + b.shape).sum(axis=0)
        return ga, gb
    return _make(a.data @ b.data, (a, b), 'matmul', _backward)


def logabsdet(w: Tensor) -> Tensor:
    """log|det W|，|det W| 低于阈值时报奇异错误"""
    sign, value = np.linalg.slogdet(w.data)
    if sign == 0 or value < np.log(config.SINGULAR_DET_THRESHOLD):
        raise SingularityError(f"矩阵接近奇异: log|det|={value}")
    inv_t = np.linalg.inv(w.data).T
    return _make(np.asarray(value), (w,), 'logabsdet', lambda g: (g * inv_t,))


def inverse(w: Tensor) -> Tensor:
    sign, value = np.linalg.slogdet(w.data)
    if sign == 0 or value < np.log(config.SINGULAR_DET_THRESHOLD):
        raise SingularityError(f"矩阵接近奇异: log|det|={value}")
    inv = np.linalg.inv(w.data)
    return _make(inv, (w,), 'inverse', lambda g: (-inv.T @ g @ inv.T,))


# --- 神经网络基元 ---
def softmax_last(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    沿最后一维的softmax，减去最大值保证数值稳定

    Args:
        x: 输入张量
        mask: 可选布尔掩码（True 表示允许），可按前导维广播

    Returns:
        概率张量，被屏蔽位置严格为0
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        _broadcast_shape(x.shape, mask.shape, 'softmax_last')
        full = np.broadcast_to(mask, x.shape)
        if not full.any(axis=-1).all():
            raise NumericalError("注意力行被完全屏蔽")
        filled = np.where(full, x.data, -np.inf)
    else:
        filled = x.data
    shifted = filled - filled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return _make(y, (x,), 'softmax', lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def conv1d(x: Tensor, kernels: Tensor) -> Tensor:
    """
    长度保持的一维卷积（零填充）

    Args:
        x: 输入 [T, c_in]
        kernels: 卷积核 [k, c_in, c_out]，k 必须为奇数

    Returns:
        输出 [T, c_out]
    """
    k = kernels.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"卷积核尺寸必须为奇数，实际为 {k}")
    if x.ndim != 2 or kernels.ndim != 3 or x.shape[1] != kernels.shape[1]:
        raise DimensionError(f"conv1d 形状不匹配: {x.shape} 与 {kernels.shape}")
    length, c_in = x.shape
    c_out = kernels.shape[2]
    pad = k // 2
    padded = np.pad(x.data, ((pad, pad), (0, 0)))
    cols = np.stack([padded[i:i + length] for i in range(k)], axis=1).reshape(length, k * c_in)
    weight = kernels.data.reshape(k * c_in, c_out)

    def _backward(g):
        g_kernels = (cols.T @ g).reshape(kernels.shape)
        g_cols = (g @ weight.T).reshape(length, k, c_in)
        g_padded = np.zeros_like(padded)
        for i in range(k):
            g_padded[i:i + length] += g_cols[:, i, :]
        return g_padded[pad:pad + length], g_kernels
    return _make(cols @ weight, (x, kernels), 'conv1d', _backward)


def normalize(x: Tensor, axis: int, eps: float = 1e-5) -> Tensor:
    """沿指定轴做零均值、单位方差标准化（层归一化和批归一化的公共部分）"""
    n = x.shape[axis]
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=axis, keepdims=True) + eps)
    xhat = centered * inv_std

    def _backward(g):
        gx = (n * g - g.sum(axis=axis, keepdims=True)
              - xhat * (g * xhat).sum(axis=axis, keepdims=True)) * inv_std / n
        return (gx,)
    return _make(xhat, (x,), 'normalize', _backward)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """训练模式下的反向缩放伯努利丢弃"""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout 比例必须在 [0,1) 内，实际为 {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(keep))
