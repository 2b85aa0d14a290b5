"""Raster I/O, landmark files and mask primitives"""
import json
import os
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from config import ALLOWED_RASTER_EXTENSIONS
from models import GeometryError, GrayImage, ImageFormatError, LandmarkSet, RoiMask, RoiOrigin

_SIXTEEN_BIT_MODES = {"I;16", "I;16B", "I;16L", "I;16N", "I"}


def _extension(path: str) -> str:
    return path.rsplit('.', 1)[-1].lower() if '.' in path else ''


def load_raster(path: str, spacing: float) -> GrayImage:
    """
    Read an 8- or 16-bit single-channel PNG/PGM into [0, 1] intensities.

    Args:
        path: Raster file
        spacing: Pixel spacing in mm, recorded verbatim

    Returns:
        GrayImage with 8-bit data divided by 255 and 16-bit data by 65535

    Raises:
        ImageFormatError: Unreadable file, multi-channel data, bad spacing
    """
    if not (spacing > 0):
        raise ImageFormatError(f"Pixel spacing must be positive, got {spacing}")
    if _extension(path) not in ALLOWED_RASTER_EXTENSIONS:
        raise ImageFormatError(f"Unsupported raster type: {path}")

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            data = np.asarray(im)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ImageFormatError(f"Cannot read raster {path}: {e}") from e

    if mode == "L":
        pixels = data.astype(np.float64) / 255.0
    elif mode in _SIXTEEN_BIT_MODES:
        data = data.astype(np.int64)
        if data.min() < 0 or data.max() > 65535:
            raise ImageFormatError(f"{path}: values outside the 16-bit range")
        pixels = data.astype(np.float64) / 65535.0
    else:
        raise ImageFormatError(f"{path}: expected single-channel gray data, got mode {mode}")

    return GrayImage(pixels=pixels, spacing=spacing)


def quantize_levels(pixels: np.ndarray, max_level: int) -> np.ndarray:
    """Round half-up to integer levels 0..max_level."""
    return np.clip(np.floor(np.asarray(pixels) * max_level + 0.5), 0, max_level).astype(np.int64)


def export_raster(img: GrayImage, path: str, bits: int = 8) -> None:
    """Write an image as 8- or 16-bit gray PNG/PGM (inverse of load_raster)."""
    ext = _extension(path)
    if ext not in ALLOWED_RASTER_EXTENSIONS:
        raise ImageFormatError(f"Unsupported raster type: {path}")
    if bits == 8:
        out = Image.fromarray(quantize_levels(img.pixels, 255).astype(np.uint8), mode="L")
    elif bits == 16:
        levels = quantize_levels(img.pixels, 65535)
        if ext == 'pgm':
            out = Image.fromarray(levels.astype(np.int32), mode="I")
        else:
            out = Image.fromarray(levels.astype(np.uint16))
    else:
        raise ImageFormatError(f"Unsupported bit depth {bits}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    out.save(path, format="PNG" if ext == 'png' else "PPM")


def export_mask(mask: RoiMask, path: str) -> None:
    """8-bit PNG, true pixels as 255."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def load_mask(path: str, origin: RoiOrigin) -> RoiMask:
    try:
        with Image.open(path) as im:
            data = np.asarray(im.convert("L"))
    except (OSError, UnidentifiedImageError) as e:
        raise ImageFormatError(f"Cannot read mask {path}: {e}") from e
    return RoiMask(bits=data > 127, origin=origin)


def crop_bbox(img: GrayImage, mask: RoiMask) -> Tuple[GrayImage, RoiMask]:
    """Tight bounding-box crop of an image and its mask; spacing preserved."""
    if (mask.height, mask.width) != (img.height, img.width):
        raise GeometryError(
            f"Mask frame {mask.width}x{mask.height} differs from image {img.width}x{img.height}"
        )
    r0, r1, c0, c1 = mask.bbox()
    return (
        img.replace(img.pixels[r0:r1, c0:c1]),
        RoiMask(bits=mask.bits[r0:r1, c0:c1], origin=mask.origin),
    )


def polygon_area(contour: Sequence[Tuple[float, float]]) -> float:
    pts = np.asarray(contour, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_fill(contour: Sequence[Tuple[float, float]], width: int, height: int,
                 origin: RoiOrigin = RoiOrigin.BONE) -> RoiMask:
    """
    Even-odd rasterization of a closed polygon.

    A pixel is set when its centre (col+0.5, row+0.5) lies inside. Rows are
    scanned one at a time; crossings use the half-open rule on edge ends.

    Raises:
        GeometryError: Fewer than 3 points, zero area, or no pixel inside
    """
    pts = np.asarray(contour, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise GeometryError("Polygon needs at least 3 points")
    if abs(polygon_area(pts)) < 1e-12:
        raise GeometryError("Degenerate (zero-area) polygon")

    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    xs = np.arange(width, dtype=np.float64) + 0.5
    bits = np.zeros((height, width), dtype=bool)

    for row in range(height):
        y = row + 0.5
        crossing = (y0 > y) != (y1 > y)
        if not crossing.any():
            continue
        ex0, ey0, ex1, ey1 = x0[crossing], y0[crossing], x1[crossing], y1[crossing]
        x_cross = (ex1 - ex0) * (y - ey0) / (ey1 - ey0) + ex0
        counts = (xs[None, :] < x_cross[:, None]).sum(axis=0)
        bits[row] = (counts % 2) == 1

    if not bits.any():
        raise GeometryError("Polygon covers no pixel centre")
    return RoiMask(bits=bits, origin=origin)


def bone_mask(lm: LandmarkSet, bone: str, width: int, height: int) -> RoiMask:
    """Segment a bone from the background by filling its contour."""
    return polygon_fill(lm.contour(bone), width, height, origin=RoiOrigin.BONE)


def load_landmarks(path: str, width: Optional[int] = None, height: Optional[int] = None) -> LandmarkSet:
    """
    Read the landmark JSON contract:
    {"points": [{"name", "x", "y"}], "contours": {"tibia": [[x, y], ...], "femur": [...]}}
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise GeometryError(f"Cannot read landmarks {path}: {e}") from e

    points = {}
    for entry in data.get('points', []):
        name = entry.get('name')
        if name in points:
            raise GeometryError(f"{path}: landmark '{name}' appears more than once")
        points[name] = (float(entry['x']), float(entry['y']))

    contours = {
        name: [(float(p[0]), float(p[1])) for p in pts]
        for name, pts in data.get('contours', {}).items()
    }
    lm = LandmarkSet(points=points, contours=contours)
    if width is not None and height is not None:
        lm.validate_bounds(width, height)
    return lm


def save_landmarks(lm: LandmarkSet, path: str) -> None:
    payload = {
        'points': [
            {'name': name, 'x': x, 'y': y}
            for name, (x, y) in sorted(lm.points.items())
        ],
        'contours': {
            name: [[x, y] for x, y in pts]
            for name, pts in sorted(lm.contours.items())
        },
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def mirror_horizontal(img: GrayImage, lm: LandmarkSet) -> Tuple[GrayImage, LandmarkSet]:
    """Flip columns and landmarks (x -> W - x); applying it twice is the identity."""
    width = img.width
    flipped = img.replace(img.pixels[:, ::-1])
    return flipped, lm.map_coordinates(lambda xs, ys: (width - xs, ys))


def roi_from_bits(bits: np.ndarray, origin: RoiOrigin) -> RoiMask:
    """Validated RoiMask from any boolean-like array."""
    return RoiMask(bits=np.asarray(bits, dtype=bool), origin=origin)
