import math
import os
import struct
from collections import OrderedDict

import numpy as np
import pytest

import config
from errors import FormatError
from training.corpus import generate_corpus
from training.diagnostics import MetricsRow
from utils.file_utils import (
    CheckpointData, decode_checkpoint, decode_spectrogram, encode_checkpoint, encode_spectrogram, read_alignment_csv,
    read_checkpoint, read_corpus, read_corpus_index, read_metrics, read_spectrogram, read_spectrogram_header,
    write_alignment_csv, write_checkpoint, write_corpus, write_metrics, write_spectrogram,
)


def _checkpoint():
    return CheckpointData(
        tensors=OrderedDict([('w', np.arange(6.0).reshape(2, 3) / 7), ('b', np.array([np.pi]))]),
        learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, step=12,
        first=OrderedDict([('w', np.full((2, 3), 0.1))]), second=OrderedDict([('w', np.full((2, 3), 0.2))]),
        initial_r=5, step_every=20, floor_r=2, epoch=30, best_val=math.inf,
        config_text="seed = 0\nd_model = 64\n",
    )


def test_spectrogram_layout():
    y = np.array([[1.0, 2.0], [3.0, 4.5], [-1.0, 0.25]])
    data = encode_spectrogram(y)
    assert data[:4] == b"VSPG"
    assert struct.unpack('<III', data[4:16]) == (1, 3, 2)
    assert len(data) == 16 + 4 * 6
    assert np.array_equal(decode_spectrogram(data), y)


def test_spectrogram_file_is_float32(tmp_path):
    y = np.random.default_rng(0).standard_normal((4, 3))
    path = str(tmp_path / "a.vspg")
    assert write_spectrogram(path, y) == (True, "")
    back = read_spectrogram(path).y
    np.testing.assert_allclose(back, y, rtol=1e-6)
    assert np.array_equal(back, y.astype(np.float32).astype(np.float64))
    assert read_spectrogram_header(path) == (4, 3)


@pytest.mark.parametrize("mutate", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:4] + struct.pack('<I', 2) + d[8:],
    lambda d: d[:-4],
    lambda d: d + b"\0\0\0\0",
])
def test_spectrogram_format_errors(mutate):
    data = encode_spectrogram(np.ones((2, 2)))
    with pytest.raises(FormatError):
        decode_spectrogram(mutate(data))


def test_checkpoint_round_trip_is_exact(tmp_path):
    ckpt = _checkpoint()
    path = str(tmp_path / "c.vnck")
    assert write_checkpoint(path, ckpt) == (True, "")
    back = read_checkpoint(path)
    assert list(back.tensors) == ['w', 'b']
    assert all(np.array_equal(back.tensors[k], ckpt.tensors[k]) for k in ckpt.tensors)
    assert np.array_equal(back.first['w'], ckpt.first['w'])
    assert np.array_equal(back.second['w'], ckpt.second['w'])
    assert (back.step, back.initial_r, back.step_every, back.floor_r, back.epoch) == (12, 5, 20, 2, 30)
    assert (back.learning_rate, back.beta1, back.beta2, back.eps) == (1e-3, 0.9, 0.999, 1e-8)
    assert back.best_val == math.inf
    assert back.config_text == ckpt.config_text


def test_checkpoint_header_layout():
    data = encode_checkpoint(_checkpoint())
    assert data[:4] == b"VNCK"
    assert struct.unpack('<II', data[4:12]) == (config.CHECKPOINT_VERSION, 2)
    name_len = struct.unpack('<I', data[12:16])[0]
    assert data[16:16 + name_len] == b"w"


def test_checkpoint_corruption_is_format_error(tmp_path):
    data = encode_checkpoint(_checkpoint())
    for bad in (b"ABCD" + data[4:], data[:-3], data + b"\0", data[:4] + struct.pack('<I', 9) + data[8:]):
        with pytest.raises(FormatError):
            decode_checkpoint(bad)
    with pytest.raises(FormatError):
        read_checkpoint(str(tmp_path / "missing.vnck"))


def test_corpus_directory_round_trip(tmp_path, tiny_run_cfg):
    utts = generate_corpus(tiny_run_cfg.corpus_spec())
    ok, message = write_corpus(str(tmp_path), utts)
    assert ok, message
    with open(tmp_path / config.CORPUS_INDEX_FILE, encoding='utf-8') as f:
        assert f.readline() == "utt_id,text,n_frames,durations\n"
    assert len(read_corpus_index(str(tmp_path))) == len(utts)
    back = read_corpus(str(tmp_path))
    assert [u.char_ids for u in back] == [u.char_ids for u in utts]
    assert [u.durations for u in back] == [u.durations for u in utts]
    np.testing.assert_allclose(back[0].spectrogram.y, utts[0].spectrogram.y, rtol=1e-6)


def test_corpus_frame_count_mismatch(tmp_path, tiny_run_cfg):
    utts = generate_corpus(tiny_run_cfg.corpus_spec())[:2]
    write_corpus(str(tmp_path), utts)
    write_spectrogram(str(tmp_path / f"{utts[0].utt_id}.vspg"), np.ones((1, tiny_run_cfg.n_bins)))
    with pytest.raises(FormatError):
        read_corpus(str(tmp_path))


def test_metrics_round_trip_is_exact(tmp_path):
    rows = [MetricsRow(0, 5, 0.1 + 0.2, 3.5, 1e-7, 0.30000000000000004, 1 / 3, 1.0),
            MetricsRow(1, 4, 0.25, -2.0, 0.0, 0.25, 0.5, 0.75)]
    path = str(tmp_path / "metrics.csv")
    assert write_metrics(path, rows) == (True, "")
    assert read_metrics(path) == rows
    with open(path, encoding='utf-8') as f:
        assert f.readline().strip() == ",".join(config.METRICS_HEADER)


def test_alignment_csv(tmp_path):
    matrix = np.random.default_rng(2).random((3, 4))
    path = str(tmp_path / "block_0.csv")
    assert write_alignment_csv(path, matrix) == (True, "")
    assert np.array_equal(read_alignment_csv(path), matrix)
    with open(path, encoding='utf-8') as f:
        assert f.readline().strip() == "char_0,char_1,char_2,char_3"


def test_write_failure_returns_message(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    ok, message = write_spectrogram(os.path.join(str(blocker), "y.vspg"), np.ones((1, 1)))
    assert not ok and message


def _file_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def test_files_rewrite_byte_identically(tmp_path, tiny_model):
    spec_a, spec_b = str(tmp_path / "a.vspg"), str(tmp_path / "b.vspg")
    write_spectrogram(spec_a, np.random.default_rng(3).standard_normal((5, 4)))
    write_spectrogram(spec_b, read_spectrogram(spec_a).y)
    assert _file_bytes(spec_a) == _file_bytes(spec_b)

    ckpt = _checkpoint()
    ckpt.tensors = OrderedDict(tiny_model.state_dict())
    ckpt_a, ckpt_b = str(tmp_path / "a.vnck"), str(tmp_path / "b.vnck")
    write_checkpoint(ckpt_a, ckpt)
    write_checkpoint(ckpt_b, read_checkpoint(ckpt_a))
    assert _file_bytes(ckpt_a) == _file_bytes(ckpt_b)
