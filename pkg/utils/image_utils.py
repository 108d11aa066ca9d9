"""
图像处理工具模块
把注意力对齐矩阵渲染为灰度热力图
"""
import logging
import os
from typing import Tuple

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)


def alignment_to_image(matrix: np.ndarray, scale: int = 8) -> Image.Image:
    """
    对齐矩阵转图像：横轴为解码帧，纵轴为字符（字符0在底部），权重越大越亮

    Args:
        matrix: [N_r, M] 对齐矩阵
        scale: 每个单元放大的像素数

    Returns:
        PIL 灰度图像
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError(f"对齐矩阵必须为非空二维数组，实际形状 {matrix.shape}")
    peak = matrix.max()
    normalized = matrix / peak if peak > 0 else matrix
    pixels = np.ascontiguousarray(np.flipud(normalized.T))
    image = Image.fromarray(np.round(pixels * 255).astype(np.uint8))
    width, height = image.size
    return image.resize((width * scale, height * scale), Image.Resampling.NEAREST)


def save_alignment_image(matrix: np.ndarray, path: str, scale: int = 8) -> Tuple[bool, str]:
    """
    保存对齐热力图

    Returns:
        (是否成功, 错误信息)
    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        alignment_to_image(matrix, scale).save(path, format='PNG')
        return True, ""
    except (OSError, ValueError) as e:
        logger.warning(f"【对齐】保存热力图失败: {e}")
        return False, f"保存热力图失败 {path}: {e}"
