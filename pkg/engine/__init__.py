"""
张量引擎模块，包含稠密张量、反向模式自动微分和有限差分校验
"""
from .tensor import (
    Tensor, GradTape, TapeNode, no_grad, is_grad_enabled, backward, constant,
    add, sub, mul, div, neg, power, exp, log, absolute, relu, tanh,
    sum_all, sum_axis, mean_all, reshape, transpose, swap_last, concat, take_rows,
    matmul, softmax_last, conv1d, normalize, clip, logabsdet, inverse, dropout,
)
from .gradcheck import (
    finite_diff_grad, finite_diff_jacobian, relative_error, norm_relative_error, check_gradients, GradCheckReport,
)

__all__ = [
    'Tensor', 'GradTape', 'TapeNode', 'no_grad', 'is_grad_enabled', 'backward', 'constant',
    'add', 'sub', 'mul', 'div', 'neg', 'power', 'exp', 'log', 'absolute', 'relu', 'tanh',
    'sum_all', 'sum_axis', 'mean_all', 'reshape', 'transpose', 'swap_last', 'concat', 'take_rows',
    'matmul', 'softmax_last', 'conv1d', 'normalize', 'clip', 'logabsdet', 'inverse', 'dropout',
    'finite_diff_grad', 'finite_diff_jacobian', 'relative_error', 'norm_relative_error', 'check_gradients',
    'GradCheckReport',
]
