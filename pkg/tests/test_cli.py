import os

import numpy as np
import pytest

import config
from cli.commands import build_parser, run
from main import main
from utils.file_utils import read_alignment_csv, read_corpus, read_metrics, read_spectrogram


@pytest.fixture
def trained(tmp_path_factory):
    """tiny 预设训练2轮后的运行目录"""
    root = tmp_path_factory.mktemp("run")
    corpus = str(root / "corpus")
    out = str(root / "out")
    assert run(['gen-corpus', '--preset', 'tiny', '--out', corpus]) == config.EXIT_OK
    cfg_path = root / "run.cfg"
    cfg_path.write_text("preset = tiny\nepochs = 2\n", encoding='utf-8')
    assert run(['train', '--config', str(cfg_path), '--corpus', corpus, '--out', out]) == config.EXIT_OK
    return root


def test_gen_corpus_and_train_outputs(trained, capsys):
    assert len(read_corpus(str(trained / "corpus"))) == 12
    out = trained / "out"
    with open(out / config.CONFIG_ECHO_FILE, encoding='utf-8') as f:
        assert f.read() == "preset = tiny\nepochs = 2\n"
    assert os.path.isfile(out / config.FINAL_CHECKPOINT_NAME)


def test_synthesize_writes_spectrogram(trained, tmp_path, capsys):
    target = str(tmp_path / "out.vspg")
    code = run(['synthesize', '--checkpoint', str(trained / "out" / config.FINAL_CHECKPOINT_NAME),
                '--text', 'abca', '--out', target, '--length-bias', '0', '--runs', '2'])
    assert code == config.EXIT_OK
    spec = read_spectrogram(target)
    assert spec.n_bins == 8
    printed = capsys.readouterr().out
    assert "预测长度" in printed and f"实际长度: {spec.n_frames}" in printed


def test_dump_alignment(trained, tmp_path, capsys):
    out = tmp_path / "align"
    code = run(['dump-alignment', '--checkpoint', str(trained / "out" / config.FINAL_CHECKPOINT_NAME),
                '--text', 'abc', '--out', str(out), '--png'])
    assert code == config.EXIT_OK
    matrix = read_alignment_csv(str(out / "block_0.csv"))
    assert matrix.shape[1] == 3
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-9)
    assert os.path.isfile(out / "block_0.png")
    assert "diagonality=" in (out / "diagnostics.txt").read_text(encoding='utf-8')
    assert "monotonicity=" in capsys.readouterr().out


def test_user_errors_exit_with_two(trained, tmp_path):
    ckpt = str(trained / "out" / config.FINAL_CHECKPOINT_NAME)
    assert run(['synthesize', '--checkpoint', ckpt, '--text', 'ABC', '--out', str(tmp_path / "x.vspg")]) == 2
    assert run(['synthesize', '--checkpoint', str(tmp_path / "none.vnck"), '--text', 'a',
                '--out', str(tmp_path / "x.vspg")]) == 2
    assert run(['gen-corpus', '--preset', 'missing', '--out', str(tmp_path / "c")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("d_model = big\n", encoding='utf-8')
    assert run(['gen-corpus', '--config', str(bad), '--out', str(tmp_path / "c")]) == 2
    assert run(['train', '--corpus', str(tmp_path / "nowhere"), '--out', str(tmp_path / "o")]) == 2
    assert run(['train', '--config', str(tmp_path / "missing.cfg"), '--corpus', str(tmp_path / "c"),
                '--out', str(tmp_path / "o")]) == 2
    assert run(['no-such-command']) == 2


def test_numerical_halt_exits_with_three(trained, tmp_path, capsys):
    cfg_path = tmp_path / "diverge.cfg"
    cfg_path.write_text("preset = tiny\nlearning_rate = 1000.0\nepochs = 5\n", encoding='utf-8')
    code = run(['train', '--config', str(cfg_path), '--corpus', str(trained / "corpus"),
                '--out', str(tmp_path / "out")])
    assert code == config.EXIT_NUMERICAL_HALT
    assert config.LAST_CHECKPOINT_NAME in capsys.readouterr().out


def test_selfcheck_subset(capsys):
    assert run(['selfcheck', '--only', 'reduce_expand_round_trip', '--only', 'schedule_full_scale']) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == [line for line in lines if line.startswith("[PASS]")] and len(lines) == 2


def test_selfcheck_failure_exits_with_one(monkeypatch):
    from cli import selfcheck
    monkeypatch.setitem(selfcheck.CHECKS, 'schedule_full_scale', lambda: (False, "forced"))
    assert run(['selfcheck', '--only', 'schedule_full_scale']) == config.EXIT_CHECK_FAILED


def test_parser_defaults():
    args = build_parser().parse_args(['synthesize', '--checkpoint', 'c', '--text', 't', '--out', 'o'])
    assert args.noise == 'zeros' and args.seed == 0 and args.runs == 1 and args.length_bias is None
    args = build_parser().parse_args(['-v', 'experiment', '--kind', 'mask', '--out', 'o'])
    assert args.verbose and args.kind == 'mask'


def test_main_entry(capsys):
    assert main(['selfcheck', '--only', 'schedule_full_scale']) == 0
    assert "[PASS] schedule_full_scale" in capsys.readouterr().out


def _read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def test_zero_noise_synthesis_is_byte_identical(trained, tmp_path):
    ckpt = str(trained / "out" / config.FINAL_CHECKPOINT_NAME)
    paths = [str(tmp_path / f"run{i}.vspg") for i in range(2)]
    for path in paths:
        assert run(['synthesize', '--checkpoint', ckpt, '--text', 'abcd', '--out', path]) == config.EXIT_OK
    assert _read_bytes(paths[0]) == _read_bytes(paths[1])


def test_length_bias_shifts_output_length(trained, tmp_path):
    ckpt = str(trained / "out" / config.FINAL_CHECKPOINT_NAME)
    lengths = {}
    for bias in (0, 20):
        path = str(tmp_path / f"bias{bias}.vspg")
        assert run(['synthesize', '--checkpoint', ckpt, '--text', 'abca', '--out', path,
                    '--length-bias', str(bias)]) == config.EXIT_OK
        lengths[bias] = read_spectrogram(path).n_frames
    assert lengths[20] == lengths[0] + 20


def test_train_resume_continues_from_checkpoint(trained):
    out = trained / "out"
    code = run(['train', '--preset', 'tiny', '--corpus', str(trained / "corpus"), '--out', str(out),
                '--resume', str(out / config.LAST_CHECKPOINT_NAME), '--epochs', '3'])
    assert code == config.EXIT_OK
    assert [row.epoch for row in read_metrics(str(out / config.METRICS_FILE))] == [0, 1, 2]


def test_gen_corpus_is_byte_identical(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert run(['gen-corpus', '--preset', 'tiny', '--out', str(d)]) == config.EXIT_OK
    names = sorted(os.listdir(dirs[0]))
    assert names == sorted(os.listdir(dirs[1]))
    assert all(_read_bytes(dirs[0] / n) == _read_bytes(dirs[1] / n) for n in names)
