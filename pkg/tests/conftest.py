"""
测试公共夹具：极小配置、固定种子的随机数发生器、极小模型和语料
"""
import numpy as np
import pytest

from cli.selfcheck import tiny_model_config
from models.vaenar import VaenarTTS
from training.corpus import generate_corpus
from utils.run_config import RunConfigManager


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """d_model=8、d_z=4、无丢弃、r ∈ {1,2}"""
    return tiny_model_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    return VaenarTTS(tiny_cfg, seed=0)


@pytest.fixture
def tiny_run_cfg():
    """tiny 预设：3轮、12条语句、不显示进度条"""
    return RunConfigManager().load_preset('tiny')


@pytest.fixture
def tiny_corpus(tiny_run_cfg):
    return generate_corpus(tiny_run_cfg.corpus_spec())
