import pytest

import config
from errors import ConfigError
from utils.run_config import RunConfig, RunConfigManager, parse_pairs


@pytest.fixture
def manager():
    return RunConfigManager()


def test_defaults_are_desk_scale():
    cfg = RunConfig()
    assert (cfg.d_model, cfg.d_z, cfg.n_bins, cfg.rf_initial, cfg.rf_floor) == (64, 32, 16, 5, 2)
    model = cfg.model_config()
    assert model.vocab_size == len(config.get_symbol_table())
    assert model.reduction_factors == (2, 3, 4, 5)


def test_parse_overlay_and_comments(manager):
    text = "# comment\nd_model = 32   # inline\ncausal_mask = false\nalpha = 1e-5\ncorpus_symbols = abc\n\n"
    cfg = manager.parse_text(text)
    assert cfg.d_model == 32 and cfg.causal_mask is False
    assert cfg.alpha == 1e-5 and cfg.corpus_symbols == "abc"
    assert cfg.d_z == RunConfig().d_z


@pytest.mark.parametrize("text, message", [
    ("unknown_key = 1", "未知配置项"),
    ("d_model = 8\nd_model = 16", "重复"),
    ("d_model = eight", "不是合法"),
    ("causal_mask = maybe", "不是合法"),
    ("d_model 8", "缺少"),
    ("epochs = 0", "epochs"),
])
def test_parse_errors(manager, text, message):
    with pytest.raises(ConfigError, match=message):
        manager.parse_text(text)


def test_preset_key_selects_base(manager):
    cfg = manager.parse_text("preset = tiny\nepochs = 7")
    tiny = manager.load_preset('tiny')
    assert cfg.d_model == tiny.d_model and cfg.epochs == 7


def test_presets_available_and_valid(manager):
    names = manager.get_available_presets()
    for name in ('desk', 'tiny', 'full_scale', 'rf5', 'rf4', 'rf3', 'no_causal_mask'):
        assert name in names
        manager.load_preset(name)
    assert manager.load_preset('desk') == RunConfig()
    assert manager.load_preset('rf4').schedule().is_fixed
    assert manager.load_preset('no_causal_mask').causal_mask is False
    with pytest.raises(ConfigError, match="未知预设"):
        manager.load_preset('nope')


def test_full_scale_preset_matches_constants(manager):
    cfg = manager.load_preset('full_scale')
    for key, value in config.FULL_SCALE_PRESET.items():
        assert getattr(cfg, key) == value, key


def test_preset_files_cannot_reference_presets(tmp_path):
    (tmp_path / "loop.cfg").write_text("preset = tiny\n", encoding='utf-8')
    with pytest.raises(ConfigError):
        RunConfigManager(str(tmp_path)).load_preset('loop')


def test_serialize_round_trip(manager):
    cfg = manager.load_preset('tiny').replace(alpha=0.1 + 0.2, corpus_seed=9)
    assert manager.parse_text(RunConfigManager.serialize(cfg)) == cfg


def test_load_returns_raw_text(manager, tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\n", encoding='utf-8')
    cfg, raw = manager.load(str(path))
    assert cfg.seed == 3 and raw == "seed = 3\n"
    assert manager.load(None) == (RunConfig(), "")
    with pytest.raises(ConfigError):
        manager.load(str(tmp_path / "missing.cfg"))


def test_load_overlays_file_on_base(manager, tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs = 7\n", encoding='utf-8')
    base = manager.load_preset('tiny')
    cfg, _ = manager.load(str(path), base)
    assert cfg == base.replace(epochs=7)
    assert manager.load(None, base) == (base, "")


def test_parse_pairs_line_numbers():
    assert parse_pairs("\na = 1\n# x\nb=2") == [(2, 'a', '1'), (4, 'b', '2')]
