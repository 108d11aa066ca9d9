import numpy as np
import pytest

import models.glow_prior as glow_prior
from cli.selfcheck import flow_logdet_errors, flow_round_trip_error, random_memory, tiny_prior
from engine import Tensor, finite_diff_grad, no_grad, relative_error
from errors import ConfigError, DimensionError, NumericalError, SingularityError
from models.attention import AttentionConfig
from models.layers import RandomSource


@pytest.mark.parametrize("d_z", [4, 32])
def test_reverse_inverts_forward(d_z):
    assert flow_round_trip_error(d_z, n_frames=3, seed=2) < 1e-8


def test_analytic_logdet_matches_brute_force_jacobian():
    assert max(flow_logdet_errors(seed=1)) < 1e-4


def test_forward_and_reverse_logdets_cancel():
    prior = tiny_prior(randomize=0.1, seed=4)
    memory = random_memory(3, seed=4)
    u = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
    with no_grad():
        z, forward_logdet = prior.forward_with_logdet(u, memory)
        _, reverse_logdet = prior.inverse_with_logdet(z, memory)
    assert abs(forward_logdet.item() + reverse_logdet.item()) < 1e-8


def test_identity_initialized_prior_is_standard_normal():
    prior = tiny_prior()
    memory = random_memory(2)
    z = np.random.default_rng(3).standard_normal((3, 4))
    with no_grad():
        value = prior.log_density(Tensor(z), memory).item()
    expected = -0.5 * np.sum(z * z) - 0.5 * z.size * np.log(2 * np.pi)
    assert abs(value - expected) < 1e-9


def test_log_density_gradient_matches_finite_difference():
    prior = tiny_prior(randomize=0.1, seed=6)
    memory = random_memory(3, seed=6)
    z = Tensor(np.random.default_rng(6).standard_normal((2, 4)), requires_grad=True)
    prior.log_density(z, memory).backward()
    numeric = finite_diff_grad(lambda t: prior.log_density(t, memory), z, step=1e-5)
    assert relative_error(z.grad, numeric, floor=1e-6) < 1e-4


def test_sample_with_zero_noise_is_deterministic():
    prior = tiny_prior(randomize=0.1, seed=7)
    memory = random_memory(3, seed=7)
    with no_grad():
        a = prior.sample(np.zeros((4, 4)), memory).z.data
        b = prior.sample(np.zeros((4, 4)), memory).z.data
    assert a.shape == (4, 4)
    assert np.array_equal(a, b)


def test_zero_actnorm_scale_is_rejected():
    prior = tiny_prior()
    prior.flows[0].actnorm.scale.data[1] = 0.0
    with pytest.raises(NumericalError):
        prior.forward_with_logdet(Tensor(np.zeros((2, 4))), random_memory(2))


def test_singular_invertible_conv_is_rejected():
    prior = tiny_prior()
    prior.flows[0].invconv.weight.data = np.zeros((4, 4))
    with pytest.raises(SingularityError):
        prior.log_density(Tensor(np.zeros((2, 4))), random_memory(2))


def test_shape_and_config_errors():
    prior = tiny_prior()
    with pytest.raises(DimensionError):
        prior.log_density(Tensor(np.zeros((2, 6))), random_memory(2))
    cfg = AttentionConfig(d_model=8, n_heads=2, d_ffn=16, dropout_rate=0.0)
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        glow_prior.GlowPrior(5, cfg, 1, 1, True, rng, RandomSource(0))
    with pytest.raises(ConfigError):
        glow_prior.GlowPrior(4, cfg, 0, 1, True, rng, RandomSource(0))
