"""
VAENAR桌面版的配置文件
包含全局设置、文件格式常量和预设值
"""
import os
import json
from typing import List

# 应用设置
APP_NAME = "vaenar-desk"
APP_VERSION = "0.3.0"

# 资源文件路径
RESOURCES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'resources')
symbols_path = os.path.join(RESOURCES_DIR, 'symbols.json')
PRESETS_DIR = os.path.join(RESOURCES_DIR, 'presets')
PRESET_EXT = '.cfg'


def get_symbol_table() -> List[str]:
    """获取符号表（43个小写字母和标点符号）"""
    with open(symbols_path, 'r', encoding='utf-8') as f:
        return json.load(f)


# 文件格式
SPECTROGRAM_MAGIC = b"VSPG"
SPECTROGRAM_VERSION = 1
SPECTROGRAM_EXT = '.vspg'

CHECKPOINT_MAGIC = b"VNCK"
CHECKPOINT_VERSION = 1
FINAL_CHECKPOINT_NAME = 'final.vnck'
BEST_CHECKPOINT_NAME = 'best.vnck'
LAST_CHECKPOINT_NAME = 'last.vnck'

CORPUS_INDEX_FILE = 'index.csv'
CORPUS_INDEX_HEADER = ['utt_id', 'text', 'n_frames', 'durations']
METRICS_FILE = 'metrics.csv'
METRICS_HEADER = ['epoch', 'r', 'recon', 'kl', 'length', 'total', 'diagonality', 'monotonicity']
CONFIG_ECHO_FILE = 'config.cfg'

# 退出码
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USER_ERROR = 2
EXIT_NUMERICAL_HALT = 3

# 帧时钟（22.05kHz采样率，256点帧移），用于实时率估算
SAMPLE_RATE = 22050
HOP_LENGTH = 256
FRAME_SECONDS = HOP_LENGTH / SAMPLE_RATE

# 数值设置
LOG_VAR_CLAMP = 10.0  # 后验对数方差截断范围 [-10, 10]
SINGULAR_DET_THRESHOLD = 1e-12
GRAD_CLIP_NORM = 5.0

# 对齐诊断设置
DIAGONAL_BAND_FRACTION = 0.1  # 对角带半宽为 max(1, 0.1*M)
DIAGONALITY_TARGET = 0.5

# 原始全尺寸超参数
FULL_SCALE_PRESET = {
    'embed_dim': 512,
    'prenet_layers': 5,
    'prenet_kernel': 5,
    'prenet_channels': 512,
    'd_model': 256,
    'n_heads': 4,
    'd_ffn': 1024,
    'encoder_blocks': 4,
    'posterior_prenet_dim': 256,
    'posterior_blocks': 2,
    'decoder_blocks': 2,
    'prior_blocks': 6,
    'prior_attention_blocks': 2,
    'd_z': 128,
    'n_bins': 80,
    'alpha': 1.0e-5,
    'beta': 1.0,
    'learning_rate': 1.25e-4,
    'adam_beta1': 0.9,
    'adam_beta2': 0.999,
    'rf_initial': 5,
    'rf_step_every': 200,
    'rf_floor': 2,
    'epochs': 2000,
    'batch_size': 32,
    'length_bias_frames': 80,
}
