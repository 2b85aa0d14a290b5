import math

import numpy as np
import pytest

from config import PreprocessConfig
from models import GrayImage, ImageFormatError
from services.preprocess_service import (
    align_rotation, cubic_weights, normalize_contrast, preprocess_sample, quantize_8bit,
    resample_bicubic, rotate_image,
)
from conftest import make_landmarks


def ramp(height, width, spacing=0.2):
    return GrayImage(pixels=np.tile(np.arange(width, dtype=np.float64) / width, (height, 1)),
                     spacing=spacing)


def test_normalize_ramp_against_sorted_percentiles():
    img = GrayImage(pixels=np.arange(100, dtype=np.float64).reshape(10, 10) / 99.0, spacing=0.2)
    ordered = np.sort(img.pixels.ravel())
    lo, hi = ordered[4], ordered[98]  # 5th and 99th smallest of 100

    out = normalize_contrast(img, PreprocessConfig())

    expected = (np.clip(img.pixels, lo, hi) - lo) / (hi - lo)
    np.testing.assert_allclose(out.pixels, expected, atol=1e-12)
    assert out.pixels.min() == 0.0
    assert out.pixels.max() == 1.0


def test_normalize_twice_changes_nothing(rng):
    cfg = PreprocessConfig()
    for pixels in (rng.uniform(size=(40, 30)), rng.normal(0.4, 0.2, size=(25, 25)),
                   rng.integers(0, 4096, size=(32, 32)) / 4095.0):
        once = normalize_contrast(GrayImage(pixels=pixels, spacing=0.2), cfg)
        twice = normalize_contrast(once, cfg)
        np.testing.assert_allclose(twice.pixels, once.pixels, rtol=0, atol=1e-9)
        assert twice.flags == once.flags


def test_normalize_constant_image_is_flagged():
    img = GrayImage(pixels=np.full((8, 8), 0.3), spacing=0.2)
    out = normalize_contrast(img, PreprocessConfig())
    assert not out.pixels.any()
    assert "constant_image" in out.flags


def test_quantize_rounds_half_up():
    img = GrayImage(pixels=np.array([[0.0, 0.5, 1.0]]), spacing=0.2)
    np.testing.assert_array_equal(quantize_8bit(img).pixels, [[0.0, 128 / 255, 1.0]])


def test_cubic_weights_partition_unity():
    t = np.linspace(0.0, 0.99, 25)
    np.testing.assert_allclose(cubic_weights(t).sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(cubic_weights(np.array([0.0]))[0], [0.0, 1.0, 0.0, 0.0])


def test_resample_identity(noise_image):
    out = resample_bicubic(noise_image, noise_image.spacing)
    assert out.pixels.shape == noise_image.pixels.shape
    np.testing.assert_allclose(out.pixels, noise_image.pixels, atol=1e-12)


def test_resample_keeps_constant():
    img = GrayImage(pixels=np.full((17, 23), 0.42), spacing=0.13)
    out = resample_bicubic(img, 0.2)
    assert out.spacing == 0.2
    assert out.pixels.shape == (round(17 * 0.13 / 0.2), round(23 * 0.13 / 0.2))
    np.testing.assert_allclose(out.pixels, 0.42, atol=1e-12)


def test_resample_reproduces_linear_ramp_inside():
    out = resample_bicubic(ramp(40, 40), 0.4)
    assert out.pixels.shape == (20, 20)
    cols = np.arange(20)
    expected = (2 * cols + 0.5) / 40  # output centre j sits at input index 2j + 0.5
    np.testing.assert_allclose(out.pixels[:, 2:-2], np.tile(expected[2:-2], (20, 1)), atol=1e-6)


def test_resample_rejects_bad_spacing(noise_image):
    with pytest.raises(ImageFormatError):
        resample_bicubic(noise_image, 0.0)


def test_rotate_quarter_turn_matches_rot90():
    pixels = np.arange(6, dtype=np.float64).reshape(3, 2) / 5.0
    out = rotate_image(GrayImage(pixels=pixels, spacing=0.2), math.pi / 2)
    assert out.pixels.shape == (2, 3)
    np.testing.assert_allclose(out.pixels, np.rot90(pixels, k=-1), atol=1e-9)


def test_rotate_zero_is_identity(noise_image):
    out = rotate_image(noise_image, 0.0)
    np.testing.assert_allclose(out.pixels, noise_image.pixels, atol=1e-12)


def test_align_levels_a_tilted_plateau(noise_image):
    tilt = 80.0 * math.tan(math.radians(10.0))
    lm = make_landmarks(plateau_y=40.0, tilt=tilt)

    rotated, moved = align_rotation(noise_image, lm)

    (_, ly), (_, ry) = moved.point("tibial_plateau_left"), moved.point("tibial_plateau_right")
    assert abs(ly - ry) < 1e-6
    assert rotated.width > noise_image.width
    assert rotated.height > noise_image.height
    moved.validate_bounds(rotated.width, rotated.height)


def test_preprocess_chain_rescales_landmarks():
    img = ramp(50, 60, spacing=0.1)
    lm = make_landmarks(60, 50)

    out, moved = preprocess_sample(img, lm, PreprocessConfig(target_spacing=0.2))

    assert out.spacing == 0.2
    assert out.pixels.shape == (25, 30)
    assert moved.point("medial_tibia_margin") == pytest.approx((3.0, 12.5))
    assert out.pixels.min() >= -0.1 and out.pixels.max() <= 1.1
