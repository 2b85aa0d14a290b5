"""Contrast normalization, quantization, bicubic resampling and plateau alignment"""
import math
from typing import Tuple

import numpy as np

from config import PreprocessConfig
from models import GeometryError, GrayImage, ImageFormatError, LandmarkSet
from utils.log_utils import get_logger

from .image_service import quantize_levels

logger = get_logger("preprocess")

# Catmull-Rom
BICUBIC_A = -0.5


def nearest_rank(sorted_values: np.ndarray, fraction: float) -> float:
    """Nearest-rank percentile: the ceil(fraction * N)-th smallest value (rank >= 1)."""
    n = sorted_values.size
    rank = min(max(int(math.ceil(fraction * n - 1e-12)), 1), n)
    return float(sorted_values[rank - 1])


def normalize_contrast(img: GrayImage, cfg: PreprocessConfig) -> GrayImage:
    """
    Histogram truncation between two whole-image percentiles, then an affine
    rescale so that the low percentile maps to 0 and the high one to 1.

    A constant image has no contrast to stretch: it becomes all zeros and
    carries the "constant_image" flag.
    """
    values = np.sort(img.pixels, axis=None)
    p_low = nearest_rank(values, cfg.low_percentile)
    p_high = nearest_rank(values, cfg.high_percentile)

    if p_high <= p_low:
        logger.warning("Constant image (p_low == p_high == %.6f), returning zeros", p_low)
        return img.replace(np.zeros_like(img.pixels), flags=img.flags + ("constant_image",))

    clipped = np.clip(img.pixels, p_low, p_high)
    return img.replace((clipped - p_low) / (p_high - p_low))


def quantize_8bit(img: GrayImage) -> GrayImage:
    """v -> round_half_up(v * 255) / 255."""
    return img.replace(quantize_levels(img.pixels, 255).astype(np.float64) / 255.0)


def cubic_weights(t: np.ndarray) -> np.ndarray:
    """
    Keys cubic convolution weights for taps at offsets -1, 0, 1, 2.

    Args:
        t: Fractional positions in [0, 1)

    Returns:
        Array of shape t.shape + (4,)
    """
    a = BICUBIC_A
    t = np.asarray(t, dtype=np.float64)
    t2, t3 = t * t, t * t * t
    w0 = a * t3 - 2 * a * t2 + a * t
    w1 = (a + 2) * t3 - (a + 3) * t2 + 1
    w2 = -(a + 2) * t3 + (2 * a + 3) * t2 - a * t
    w3 = -a * t3 + a * t2
    return np.stack([w0, w1, w2, w3], axis=-1)


def _resample_matrix(n_in: int, n_out: int, ratio: float) -> np.ndarray:
    """Dense (n_out x n_in) 1-D bicubic resampling operator with edge replication."""
    centres = (np.arange(n_out) + 0.5) * ratio - 0.5
    base = np.floor(centres).astype(np.int64)
    weights = cubic_weights(centres - base)
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for k in range(4):
        taps = np.clip(base + k - 1, 0, n_in - 1)
        np.add.at(matrix, (rows, taps), weights[:, k])
    return matrix


def resample_bicubic(img: GrayImage, target_spacing: float) -> GrayImage:
    """
    Resample to a new isotropic pixel spacing.

    Output size is round(dim * spacing / target_spacing); output pixel centres
    map back to input coordinates through the spacing ratio, so physical
    positions are preserved exactly.
    """
    if not (target_spacing > 0):
        raise ImageFormatError(f"Target spacing must be positive, got {target_spacing}")
    scale = img.spacing / target_spacing
    out_h = int(math.floor(img.height * scale + 0.5))
    out_w = int(math.floor(img.width * scale + 0.5))
    if out_h < 1 or out_w < 1:
        raise ImageFormatError(
            f"Resampling {img.width}x{img.height} to {target_spacing} mm gives an empty image"
        )
    ratio = target_spacing / img.spacing
    rows = _resample_matrix(img.height, out_h, ratio)
    cols = _resample_matrix(img.width, out_w, ratio)
    pixels = rows @ img.pixels @ cols.T
    return img.replace(pixels, spacing=target_spacing)


def transform_landmarks_scale(lm: LandmarkSet, factor: float) -> LandmarkSet:
    """Landmarks in the frame of an image resampled by resample_bicubic."""
    return lm.map_coordinates(lambda xs, ys: (xs * factor, ys * factor))


def sample_bicubic(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """
    Bicubic samples at continuous index coordinates (col, row); out-of-range
    taps replicate the nearest edge pixel.
    """
    height, width = pixels.shape
    bx = np.floor(xs).astype(np.int64)
    by = np.floor(ys).astype(np.int64)
    wx = cubic_weights(xs - bx)
    wy = cubic_weights(ys - by)
    out = np.zeros(xs.shape, dtype=np.float64)
    for j in range(4):
        r = np.clip(by + j - 1, 0, height - 1)
        row_acc = np.zeros(xs.shape, dtype=np.float64)
        for i in range(4):
            c = np.clip(bx + i - 1, 0, width - 1)
            row_acc += wx[..., i] * pixels[r, c]
        out += wy[..., j] * row_acc
    return out


def _rotation_frame(width: int, height: int, angle: float, expand: bool) -> Tuple[int, int]:
    if not expand:
        return width, height
    c, s = abs(math.cos(angle)), abs(math.sin(angle))
    out_w = int(math.ceil(width * c + height * s - 1e-9))
    out_h = int(math.ceil(width * s + height * c - 1e-9))
    return max(out_w, 1), max(out_h, 1)


def rotate_landmarks(lm: LandmarkSet, angle: float, in_size: Tuple[int, int],
                     out_size: Tuple[int, int]) -> LandmarkSet:
    """Apply p' = R(angle)(p - c_in) + c_out to every landmark."""
    cx, cy = in_size[0] / 2.0, in_size[1] / 2.0
    ox, oy = out_size[0] / 2.0, out_size[1] / 2.0
    c, s = math.cos(angle), math.sin(angle)

    def forward(xs, ys):
        dx, dy = xs - cx, ys - cy
        return c * dx - s * dy + ox, s * dx + c * dy + oy

    return lm.map_coordinates(forward)


def rotate_image(img: GrayImage, angle: float, expand: bool = True) -> GrayImage:
    """
    Rotate about the image centre by `angle` radians (image axes, y down).

    Each output pixel centre is mapped back through the inverse rotation and
    sampled bicubically; points outside the source frame get 0. With expand
    the canvas grows to contain the whole rotated frame.
    """
    out_w, out_h = _rotation_frame(img.width, img.height, angle, expand)
    cx, cy = img.width / 2.0, img.height / 2.0
    ox, oy = out_w / 2.0, out_h / 2.0
    c, s = math.cos(angle), math.sin(angle)

    gx, gy = np.meshgrid(np.arange(out_w) + 0.5 - ox, np.arange(out_h) + 0.5 - oy)
    src_x = c * gx + s * gy + cx
    src_y = -s * gx + c * gy + cy

    inside = (
        (src_x >= -1e-9) & (src_x <= img.width + 1e-9)
        & (src_y >= -1e-9) & (src_y <= img.height + 1e-9)
    )
    values = sample_bicubic(img.pixels, src_x - 0.5, src_y - 0.5)
    return img.replace(np.where(inside, values, 0.0))


def plateau_angle(lm: LandmarkSet) -> float:
    """Angle of the tibial plateau segment, atan2(dy, dx)."""
    lx, ly = lm.point("tibial_plateau_left")
    rx, ry = lm.point("tibial_plateau_right")
    if math.hypot(rx - lx, ry - ly) < 1e-9:
        raise GeometryError("Tibial plateau points coincide")
    return math.atan2(ry - ly, rx - lx)


def align_rotation(img: GrayImage, lm: LandmarkSet) -> Tuple[GrayImage, LandmarkSet]:
    """Rotate image and landmarks so the tibial plateau becomes horizontal."""
    theta = plateau_angle(lm)
    rotated = rotate_image(img, -theta, expand=True)
    moved = rotate_landmarks(lm, -theta, (img.width, img.height), (rotated.width, rotated.height))
    logger.debug("Aligned plateau: rotated by %.3f deg", -math.degrees(theta))
    return rotated, moved


def preprocess_sample(img: GrayImage, lm: LandmarkSet,
                      cfg: PreprocessConfig) -> Tuple[GrayImage, LandmarkSet]:
    """
    Full chain in fixed order: normalize -> quantize -> resample -> rotate.
    Landmarks follow every geometric step.
    """
    out = quantize_8bit(normalize_contrast(img, cfg))
    factor = out.spacing / cfg.target_spacing
    resampled = resample_bicubic(out, cfg.target_spacing)
    return align_rotation(resampled, transform_landmarks_scale(lm, factor))
