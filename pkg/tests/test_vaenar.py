import numpy as np
import pytest

from cli.selfcheck import gradient_check_instance, length_predictor_params
from engine import Tensor, check_gradients, no_grad
from errors import ConfigError, DimensionError, InputError, VocabularyError
from models.data_types import PosteriorParams, Spectrogram
from models.vaenar import (
    VaenarConfig, VaenarTTS, assemble_loss, expand_spectrogram, gaussian_log_density, reduce_spectrogram,
    reparam_sample,
)


def test_reduce_spectrogram_pads_and_folds():
    y = np.arange(10.0).reshape(5, 2)
    folded = reduce_spectrogram(y, 2).data
    assert folded.shape == (3, 4)
    assert folded[0].tolist() == [0.0, 1.0, 2.0, 3.0]
    assert folded[2].tolist() == [8.0, 9.0, 0.0, 0.0]
    assert np.array_equal(reduce_spectrogram(y, 1).data, y)


@pytest.mark.parametrize("r", [1, 2, 3, 4, 5])
def test_expand_inverts_reduce(r):
    y = np.random.default_rng(r).standard_normal((7, 3))
    assert np.array_equal(expand_spectrogram(reduce_spectrogram(y, r), r, 7).data, y)


def test_reduce_expand_errors():
    with pytest.raises(ConfigError):
        reduce_spectrogram(np.zeros((3, 2)), 0)
    with pytest.raises(DimensionError):
        expand_spectrogram(np.zeros((2, 5)), 2)


def test_reparam_sample_and_gaussian_density():
    p = PosteriorParams(Tensor(np.array([[1.0, -1.0]])), Tensor(np.log(np.array([[4.0, 1.0]]))))
    z = reparam_sample(p, np.array([[0.5, 2.0]])).z.data
    assert np.allclose(z, [[2.0, 1.0]])
    with pytest.raises(DimensionError):
        reparam_sample(p, np.zeros((2, 2)))
    value = gaussian_log_density(Tensor(np.array([[1.0, -1.0]])), p).item()
    assert np.isclose(value, -0.5 * (np.log(4.0) + 2 * np.log(2 * np.pi)))


def test_assemble_loss_weights():
    total = assemble_loss(Tensor(2.0), Tensor(10.0), Tensor(3.0), alpha=0.5, beta=2.0)
    assert total.item() == 2.0 + 5.0 + 6.0


def test_config_validation():
    with pytest.raises(ConfigError):
        VaenarConfig(d_z=5)
    with pytest.raises(ConfigError):
        VaenarConfig(prenet_kernel=4)
    full = VaenarConfig.full_scale()
    assert (full.d_model, full.d_z, full.n_bins, full.prior_blocks) == (256, 128, 80, 6)
    assert full.final_r == 2


def test_encode_text_errors(tiny_model):
    with pytest.raises(InputError):
        tiny_model.encode_text(())
    with pytest.raises(VocabularyError):
        tiny_model.encode_text((17, 99))


def test_compute_loss_breakdown_is_consistent(tiny_model):
    y = Spectrogram(np.random.default_rng(0).standard_normal((5, 4)))
    noise = np.random.default_rng(1).standard_normal((3, 4))
    result = tiny_model.compute_loss(y, (17, 18, 19), noise, 2, alpha=0.1, beta=2.0)
    b = result.breakdown
    assert np.isclose(b.total, b.recon_mse + 0.1 * b.kl + 2.0 * b.length_loss)
    assert np.isclose(b.recon_mse, 0.5 * (b.recon_before + b.recon_after))
    assert result.decoded.after.shape == (5, 4)
    assert result.posterior.mean.shape == (3, 4)
    assert len(result.decoded.alignments) == tiny_model.cfg.decoder_blocks


def test_compute_loss_rejects_bad_inputs(tiny_model):
    y = Spectrogram(np.zeros((4, 4)))
    with pytest.raises(ConfigError):
        tiny_model.compute_loss(y, (17,), np.zeros((1, 4)), 5, 1.0, 1.0)
    with pytest.raises(ConfigError):
        tiny_model.compute_loss(y, (17,), np.zeros((2, 4)), 2, -1.0, 1.0)
    with pytest.raises(DimensionError):
        tiny_model.compute_loss(y, (17,), np.zeros((3, 4)), 2, 1.0, 1.0)


def test_length_predictor_does_not_train_text_encoder(tiny_model):
    memory = tiny_model.encode_text((17, 18))
    predicted, _ = tiny_model.predict_length(memory)
    tiny_model.zero_grad()
    predicted.backward()
    assert tiny_model.length_predictor.fc.weight.grad is not None
    assert all(p.grad is None for p in tiny_model.text_encoder.parameters())


def test_end_to_end_gradients_match_finite_differences():
    model, loss_fn = gradient_check_instance(seed=2)
    params = model.named_parameters()
    report = check_gradients(loss_fn, params, step=1e-5, floor=1e-6)
    assert report.n_entries == sum(p.size for _, p in params)
    assert report.fraction_below(1e-4) >= 0.99
    assert report.worst()[1] < 1e-3


@pytest.mark.parametrize("term", ["recon", "kl"])
def test_each_loss_term_gradient_in_isolation(term):
    model, loss_fn = gradient_check_instance(seed=4, term=term)
    report = check_gradients(loss_fn, model.named_parameters(), step=1e-5, max_entries=6,
                             rng=np.random.default_rng(0), floor=1e-6)
    assert report.fraction_below(1e-4) >= 0.99
    assert report.worst()[1] < 1e-3


def test_length_term_gradient_reaches_only_length_predictor():
    model, loss_fn = gradient_check_instance(seed=4, beta=1.0, term='length')
    report = check_gradients(loss_fn, length_predictor_params(model), step=1e-5, floor=1e-6)
    assert report.worst()[1] < 1e-4
    model.zero_grad()
    loss_fn().backward()
    assert all(p.grad is None or not np.any(p.grad) for p in model.text_encoder.parameters())


def test_gradient_check_instance_rejects_unknown_term():
    with pytest.raises(ValueError):
        gradient_check_instance(term='duration')


def test_synthesize_zero_noise_is_deterministic(tiny_model):
    a = tiny_model.synthesize((17, 18, 19))
    b = tiny_model.synthesize((17, 18, 19))
    assert np.array_equal(a.spectrogram, b.spectrogram)
    assert a.r == tiny_model.cfg.final_r == 1
    assert a.spectrogram.shape == (a.n_frames, 4)
    assert a.n_frames == max(1, int(np.floor(a.predicted_length + 0.5)))


def test_synthesize_length_bias_and_reduction(tiny_model):
    base = tiny_model.synthesize((17, 18), r=2)
    biased = tiny_model.synthesize((17, 18), length_bias_frames=6, r=2)
    assert base.n_frames % 2 == 0 and biased.n_frames % 2 == 0
    assert biased.n_frames == base.n_frames + 6
    assert len(base.alignments) == tiny_model.cfg.decoder_blocks


def test_synthesize_sample_mode_uses_rng(tiny_model):
    a = tiny_model.synthesize((17, 18), noise_mode='sample', rng=np.random.default_rng(3))
    b = tiny_model.synthesize((17, 18), noise_mode='sample', rng=np.random.default_rng(3))
    assert np.array_equal(a.spectrogram, b.spectrogram)
    with pytest.raises(ConfigError):
        tiny_model.synthesize((17,), noise_mode='loud')
    with pytest.raises(InputError):
        tiny_model.synthesize(())


def test_synthesize_keeps_training_mode(tiny_model):
    tiny_model.train()
    tiny_model.synthesize((17,))
    assert tiny_model.training


def test_state_dict_round_trip(tiny_cfg, tiny_model):
    other = VaenarTTS(tiny_cfg, seed=9)
    other.load_state_dict(tiny_model.state_dict())
    with no_grad():
        a = tiny_model.synthesize((17, 18)).spectrogram
        b = other.synthesize((17, 18)).spectrogram
    assert np.array_equal(a, b)
    names = [name for name, _ in tiny_model.named_parameters()]
    assert 'decoder.heads.1.weight' in names and 'decoder.heads.2.weight' in names
    assert 'posterior.prenet_in.2.weight' in names


def test_text_features_are_global(tiny_model):
    tiny_model.eval()
    with no_grad():
        a = tiny_model.encode_text((17, 18, 19, 20, 21)).x.data
        b = tiny_model.encode_text((24, 18, 19, 20, 21)).x.data
    # 卷积核宽3，位置4只能通过自注意力看到位置0
    assert not np.array_equal(a[4], b[4])
    assert not np.array_equal(a[1:], b[1:])


def test_posterior_log_var_is_clamped(tiny_model):
    tiny_model.posterior.log_var_head.weight.data = tiny_model.posterior.log_var_head.weight.data * 1e4
    y = np.random.default_rng(9).standard_normal((6, 4)) * 100.0
    with no_grad():
        memory = tiny_model.encode_text((17, 18))
        params, _ = tiny_model.posterior_encode(reduce_spectrogram(y, 2), memory, 2)
    log_var = params.log_var.data
    assert log_var.min() >= -10.0 and log_var.max() <= 10.0
    assert np.any(np.abs(log_var) == 10.0)


def test_reparam_sample_variance_matches_exp_log_var():
    n = 100_000
    log_var = np.array([[-1.0, 0.0, 1.5]])
    p = PosteriorParams(Tensor(np.tile([[0.3, -2.0, 1.0]], (n, 1))), Tensor(np.tile(log_var, (n, 1))))
    noise = np.random.default_rng(21).standard_normal((n, 3))
    with no_grad():
        z = reparam_sample(p, noise).z.data
    np.testing.assert_allclose(z.var(axis=0), np.exp(log_var[0]), rtol=0.05)
    np.testing.assert_allclose(z.mean(axis=0), [0.3, -2.0, 1.0], atol=0.05)
