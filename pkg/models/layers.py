"""
网络基础层
模块基类、线性层、嵌入、一维卷积、批归一化、层归一化和丢弃
"""
from collections import OrderedDict
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from engine import Tensor, constant, conv1d, dropout, matmul, normalize, take_rows
from errors import ConfigError, DimensionError, FormatError


class RandomSource:
    """可重新播种的共享随机源，供丢弃层使用"""

    def __init__(self, seed=0):
        self.generator = np.random.default_rng(seed)

    def reseed(self, seed):
        self.generator = np.random.default_rng(seed)


class Module:
    """模块基类：按定义顺序收集参数、缓冲区和子模块"""

    def __init__(self):
        self.training = True
        self._buffer_names: List[str] = []

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith('_'):
                continue
            if isinstance(value, (Module, Tensor)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{key}", item

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        """
        获取全部参数

        Returns:
            (限定名, 张量) 列表，按定义顺序
        """
        result = []
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                result.extend(value.named_parameters(full + "."))
            elif value.requires_grad and name not in self._buffer_names:
                result.append((full, value))
        return result

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        result = []
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                result.extend(value.named_buffers(full + "."))
            elif name in self._buffer_names:
                result.append((full, value))
        return result

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, b in self.named_buffers():
            state[name] = b.data
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """按名称载入参数与缓冲区，名称或形状不一致时报格式错误"""
        own = dict(self.named_parameters())
        own.update(dict(self.named_buffers()))
        missing = [name for name in own if name not in state]
        unexpected = [name for name in state if name not in own]
        if missing or unexpected:
            raise FormatError(f"检查点参数不匹配，缺少: {missing[:5]}，多余: {unexpected[:5]}")
        for name, tensor in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise FormatError(f"参数 {name} 形状不匹配: {value.shape} 与 {tensor.shape}")
            tensor.data = value.copy()

    def modules(self) -> Iterator['Module']:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> 'Module':
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    @contextmanager
    def evaluating(self):
        """临时切换到推理模式"""
        previous = self.training
        self.train(False)
        try:
            yield self
        finally:
            self.train(previous)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def register_buffer(self, name: str, value: np.ndarray):
        setattr(self, name, Tensor(value))
        self._buffer_names.append(name)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Sequence[int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    """全连接层 y = xW + b"""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        if zero_init:
            weight = np.zeros((in_dim, out_dim))
        else:
            weight = _xavier(rng, in_dim, out_dim, (in_dim, out_dim))
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    """字符嵌入表"""

    def __init__(self, n_symbols: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.n_symbols = n_symbols
        self.weight = Tensor(rng.normal(0.0, np.sqrt(2.0 / (n_symbols + dim)), size=(n_symbols, dim)),
                             requires_grad=True)

    def __call__(self, ids: Sequence[int]) -> Tensor:
        return take_rows(self.weight, ids)


class Conv1d(Module):
    """长度保持的一维卷积层"""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError(f"卷积核尺寸必须为奇数，实际为 {kernel_size}")
        self.kernel = Tensor(_xavier(rng, kernel_size * c_in, kernel_size * c_out, (kernel_size, c_in, c_out)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.kernel) + self.bias


class BatchNorm1d(Module):
    """
    批归一化
    训练时在单条语句的时间轴上统计，推理时使用滑动统计量
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer('running_mean', np.zeros(channels))
        self.register_buffer('running_var', np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            mean = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            self.running_mean.data = (1 - self.momentum) * self.running_mean.data + self.momentum * mean
            self.running_var.data = (1 - self.momentum) * self.running_var.data + self.momentum * var
            xhat = normalize(x, axis=0, eps=self.eps)
        else:
            scale = 1.0 / np.sqrt(self.running_var.data + self.eps)
            xhat = (x - constant(self.running_mean.data)) * constant(scale)
        return xhat * self.gamma + self.beta


class LayerNorm(Module):
    """层归一化"""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"LayerNorm 期望宽度 {self.dim}，实际 {x.shape}")
        return normalize(x, axis=-1, eps=self.eps) * self.gamma + self.beta


class Dropout(Module):
    """丢弃层，随机数来自共享随机源"""

    def __init__(self, rate: float, source: RandomSource):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout 比例必须在 [0,1) 内，实际为 {rate}")
        self.rate = rate
        self._source = source

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self._source.generator, self.training)
