import numpy as np
import pytest

from engine import Tensor
from errors import ConfigError, NumericalError
from training.optimizer import OptimizerState, adam_step, clip_grad_norm, collect_grads


def test_adam_first_step_moves_by_learning_rate():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = OptimizerState(learning_rate=0.1)
    adam_step([('p', p)], {'p': np.array([0.5, -3.0])}, state)
    # 偏差修正后第一步的步长约为学习率
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)
    assert state.step == 1


def test_adam_matches_reference_over_steps(rng):
    p = Tensor(rng.standard_normal(3), requires_grad=True)
    state = OptimizerState(learning_rate=0.01, beta1=0.8, beta2=0.9)
    ref, m, v = p.data.copy(), np.zeros(3), np.zeros(3)
    for t in range(1, 4):
        g = rng.standard_normal(3)
        adam_step([('p', p)], {'p': g}, state)
        m = 0.8 * m + 0.2 * g
        v = 0.9 * v + 0.1 * g * g
        ref = ref - 0.01 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.9 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)
    np.testing.assert_allclose(state.first['p'], m, rtol=1e-12)


def test_non_finite_gradient_aborts_without_update():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    state = OptimizerState()
    with pytest.raises(NumericalError, match="b"):
        adam_step([('a', a), ('b', b)], {'a': np.ones(2), 'b': np.array([np.nan, 0.0])}, state)
    assert np.array_equal(a.data, np.ones(2))
    assert state.step == 0


def test_clip_grad_norm():
    grads = {'a': np.array([3.0, 0.0]), 'b': np.array([4.0])}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == 5.0
    total = np.sqrt(sum(np.sum(g * g) for g in clipped.values()))
    assert total == pytest.approx(1.0)
    same, _ = clip_grad_norm(grads, 10.0)
    assert same is grads
    with pytest.raises(ConfigError):
        clip_grad_norm(grads, 0.0)


def test_collect_grads_scales_and_fills_zeros():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    a.grad = np.array([2.0, 4.0])
    grads = collect_grads([('a', a), ('b', b)], scale=0.5)
    assert grads['a'].tolist() == [1.0, 2.0]
    assert grads['b'].tolist() == [0.0, 0.0, 0.0]


def test_state_validation():
    with pytest.raises(ConfigError):
        OptimizerState(learning_rate=0.0)
    with pytest.raises(ConfigError):
        OptimizerState(beta1=1.0)
    assert OptimizerState.full_scale().learning_rate == 1.25e-4
