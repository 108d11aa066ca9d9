import numpy as np
import pytest
from PIL import Image

from utils.image_utils import alignment_to_image, save_alignment_image


def test_alignment_image_orientation():
    matrix = np.zeros((3, 2))
    matrix[0, 0] = 1.0
    image = alignment_to_image(matrix, scale=1)
    assert image.size == (3, 2) and image.mode == 'L'
    pixels = np.asarray(image)
    # 字符0在底部，解码帧0在最左
    assert pixels[1, 0] == 255 and pixels.sum() == 255


def test_alignment_image_scaling_and_errors():
    assert alignment_to_image(np.eye(2), scale=4).size == (8, 8)
    with pytest.raises(ValueError):
        alignment_to_image(np.ones(3))


def test_save_alignment_image(tmp_path):
    path = str(tmp_path / "sub" / "block_0.png")
    assert save_alignment_image(np.eye(3), path) == (True, "")
    with Image.open(path) as image:
        assert image.size == (24, 24)
    ok, message = save_alignment_image(np.ones(2), str(tmp_path / "bad.png"))
    assert not ok and "bad.png" in message
