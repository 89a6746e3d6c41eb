"""Image file round trips and mask handling."""

import numpy as np
import pytest

from strollr.imgio import (ImageIOError, load_image, load_mask, quantize,
                           save_image, save_mask)


@pytest.mark.parametrize("ext", ["pgm", "png"])
def test_grayscale_round_trip(tmp_path, rng, ext):
    img = np.round(rng.uniform(0, 255, (9, 7)))
    path = str(tmp_path / f"g.{ext}")
    save_image(path, img)
    assert np.array_equal(load_image(path), img)


@pytest.mark.parametrize("ext", ["ppm", "png"])
def test_color_round_trip(tmp_path, rng, ext):
    img = np.round(rng.uniform(0, 255, (6, 5, 3)))
    path = str(tmp_path / f"c.{ext}")
    save_image(path, img)
    loaded = load_image(path)
    assert loaded.shape == (6, 5, 3)
    assert np.array_equal(loaded, img)


def test_pgm_is_binary_format(tmp_path):
    path = str(tmp_path / "b.pgm")
    save_image(path, np.zeros((4, 4)))
    assert open(path, "rb").read(2) == b"P5"


def test_quantize_rounds_and_clips():
    vals = np.array([-3.0, 0.4, 0.6, 254.5, 300.0])
    assert np.array_equal(quantize(vals), [0, 0, 1, 254, 255])


def test_force_gray_conversion(tmp_path, rng):
    img = np.round(rng.uniform(0, 255, (5, 5, 3)))
    path = str(tmp_path / "c.png")
    save_image(path, img)
    gray = load_image(path, force_gray=True)
    assert gray.shape == (5, 5)


def test_mask_round_trip(tmp_path, rng):
    mask = rng.random((8, 8)) > 0.5
    path = str(tmp_path / "m.png")
    save_mask(path, mask)
    assert np.array_equal(load_mask(path), mask)


def test_missing_file_raises(tmp_path):
    with pytest.raises(ImageIOError):
        load_image(str(tmp_path / "nope.png"))


def test_unsupported_extension(tmp_path):
    with pytest.raises(ImageIOError):
        save_image(str(tmp_path / "x.tiff"), np.zeros((4, 4)))
