import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def image_dir(tmp_path):
    """Three identical 128x128 RGB PNGs."""
    d = tmp_path / "imgs"
    d.mkdir()
    arr = np.random.default_rng(0).integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
    for name in ("b.png", "a.png", "c.png"):
        Image.fromarray(arr).save(d / name)
    return d
