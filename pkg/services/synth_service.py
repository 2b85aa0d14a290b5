"""
Synthetic knee corpus.

Each subject gets a tibia and femur silhouette filled with band-pass noise
texture. For class-1 subjects the texture inside one lattice cell of the
tibia becomes coarser and anisotropic, blended in by `delta`; everything
else carries no class signal. Both knees are written, left knees stored
mirrored, so ingestion has to flip them back.
"""
import math
import os
from typing import Dict, List, Tuple

import numpy as np

from config import GridLayout
from models import ConfigError, GeometryError, GrayImage, LandmarkSet, ManifestRow, RoiMask
from utils.file_utils import safe_name, write_manifest
from utils.log_utils import get_logger

from .image_service import export_raster, mirror_horizontal, polygon_fill, save_landmarks
from .preprocess_service import rotate_image, rotate_landmarks
from .segmentation_service import grid_points

logger = get_logger("synth")

# square raster side; gives a tibial width of about 420 px at 0.2 mm/px
SYNTH_SIZE = 600
SYNTH_SPACING = 0.2
BACKGROUND = 0.1
BONE_LEVEL = 0.5
TEXTURE_AMPLITUDE = 0.12
MAX_TILT_DEG = 3.0

Polygon = List[Tuple[float, float]]


def band_pass_noise(rng: np.random.Generator, shape: Tuple[int, int], f_lo: float, f_hi: float,
                    stretch: float = 1.0) -> np.ndarray:
    """
    Zero-mean, unit-variance noise keeping radial frequencies in [f_lo, f_hi]
    cycles/px. stretch > 1 compresses the vertical frequency axis, which
    elongates structures vertically.
    """
    noise = rng.standard_normal(shape)
    fy = np.fft.fftfreq(shape[0])[:, None] * stretch
    fx = np.fft.fftfreq(shape[1])[None, :]
    radius = np.sqrt(fx * fx + fy * fy)
    band = (radius >= f_lo) & (radius <= f_hi)
    filtered = np.real(np.fft.ifft2(np.fft.fft2(noise) * band))
    std = filtered.std()
    return (filtered - filtered.mean()) / std if std > 0 else filtered


def knee_geometry(rng: np.random.Generator, size: int = SYNTH_SIZE,
                  ) -> Tuple[Polygon, Polygon, Dict[str, Tuple[float, float]]]:
    """Tibia and femur outlines with the medial side on the left, plus landmarks."""
    def jitter() -> float:
        return float(rng.uniform(-3.0, 3.0))

    y_plateau = 0.45 * size + jitter()
    x_med = 0.15 * size + jitter()
    x_lat = 0.85 * size + jitter()
    width = x_lat - x_med
    bottom = size - 2.0

    tibia = [
        (x_med, y_plateau), (x_lat, y_plateau),
        (x_lat - 2.0, y_plateau + 0.12 * size),
        (0.65 * size, y_plateau + 0.25 * size), (0.62 * size, bottom),
        (0.38 * size, bottom), (0.35 * size, y_plateau + 0.25 * size),
        (x_med + 2.0, y_plateau + 0.12 * size),
    ]
    femur_base = y_plateau - 6.0
    femur = [
        (x_med + 4.0, femur_base), (x_med + 0.45 * width, femur_base + 3.0),
        (x_lat - 0.45 * width, femur_base + 3.0), (x_lat - 4.0, femur_base),
        (x_lat - 8.0, femur_base - 0.15 * size),
        (0.62 * size, 2.0), (0.38 * size, 2.0),
        (x_med + 8.0, femur_base - 0.15 * size),
    ]
    points = {
        'medial_tibia_margin': (x_med, y_plateau),
        'lateral_tibia_margin': (x_lat, y_plateau),
        'tibial_plateau_left': (x_med, y_plateau),
        'tibial_plateau_right': (x_lat, y_plateau),
        'medial_condyle_center': (x_med + 0.3 * width, y_plateau - 4.0),
        'lateral_condyle_center': (x_lat - 0.3 * width, y_plateau - 4.0),
    }
    return tibia, femur, points


def effect_region(tibia: RoiMask, layout: GridLayout, cell: int) -> np.ndarray:
    """Disk around a lattice point, sized to stay inside its lattice cell."""
    grid = grid_points(tibia, layout)
    point = next((p for p in grid.points if p.index == cell), None)
    if point is None:
        raise GeometryError(f"Grid index {cell} falls outside the synthetic tibia")
    r0, r1, c0, c1 = tibia.bbox()
    radius = 0.45 * min((r1 - r0) / (layout.rows + 1), (c1 - c0) / (layout.cols + 1))
    rows, cols = np.mgrid[0:tibia.height, 0:tibia.width]
    inside = (cols + 0.5 - point.x) ** 2 + (rows + 0.5 - point.y) ** 2 <= radius * radius
    return inside & tibia.bits


def synth_knee(rng: np.random.Generator, label: int, delta: float, layout: GridLayout,
               effect_cell: int, size: int = SYNTH_SIZE) -> Tuple[GrayImage, LandmarkSet]:
    """One knee in canonical orientation, tilted and with random exposure."""
    tibia_poly, femur_poly, points = knee_geometry(rng, size)
    tibia = polygon_fill(tibia_poly, size, size)
    femur = polygon_fill(femur_poly, size, size)

    base = band_pass_noise(rng, (size, size), 0.08, 0.25)
    altered = band_pass_noise(rng, (size, size), 0.03, 0.10, stretch=3.0)
    texture = base
    if label == 1 and delta > 0:
        region = effect_region(tibia, layout, effect_cell)
        texture = np.where(region, (1.0 - delta) * base + delta * altered, base)

    pixels = np.full((size, size), BACKGROUND)
    bone = tibia.bits | femur.bits
    pixels[bone] = BONE_LEVEL + TEXTURE_AMPLITUDE * texture[bone]
    img = GrayImage(pixels=np.clip(pixels, 0.0, 1.0), spacing=SYNTH_SPACING)
    lm = LandmarkSet(points=points, contours={'tibia': tibia_poly, 'femur': femur_poly})

    tilt = math.radians(float(rng.uniform(-MAX_TILT_DEG, MAX_TILT_DEG)))
    tilted = rotate_image(img, tilt, expand=False)
    lm = rotate_landmarks(lm, tilt, (size, size), (size, size))

    gain = float(rng.uniform(0.8, 1.2))
    offset = float(rng.uniform(-0.05, 0.05))
    exposed = np.clip(gain * tilted.pixels + offset, 0.0, 1.0)
    return tilted.replace(exposed), lm


def synth_corpus(out_dir: str, n_subjects: int, effect_cell: int = 0, delta: float = 1.0,
                 seed: int = 0, layout: GridLayout = GridLayout(),
                 size: int = SYNTH_SIZE) -> List[ManifestRow]:
    """
    Write `n_subjects` subjects (two knees each) as 16-bit PNGs, landmark
    JSONs and a manifest under out_dir. Output depends only on the arguments.
    """
    if n_subjects < 1:
        raise ConfigError("n_subjects must be >= 1")
    if size < 64:
        raise ConfigError("size must be >= 64 pixels")
    if not 0.0 <= delta <= 1.0:
        raise ConfigError("delta must lie in [0, 1]")

    master = np.random.default_rng(seed)
    classes = master.permutation(np.arange(n_subjects) % 2)

    rows: List[ManifestRow] = []
    for subject in range(n_subjects):
        subject_id = f"S{subject:04d}"
        label = int(classes[subject])
        rng = np.random.default_rng([seed, subject])
        for side in ('L', 'R'):
            img, lm = synth_knee(rng, label, delta, layout, effect_cell, size)
            if side == 'L':
                img, lm = mirror_horizontal(img, lm)
            kl_grade = int(rng.integers(2, 5)) if label else int(rng.integers(0, 2))

            sample_id = f"{subject_id}_{side}"
            image_path = os.path.join(out_dir, 'images', f"{safe_name(sample_id)}.png")
            landmark_path = os.path.join(out_dir, 'landmarks', f"{safe_name(sample_id)}.json")
            export_raster(img, image_path, bits=16)
            save_landmarks(lm, landmark_path)
            rows.append(ManifestRow(
                sample_id=sample_id, subject_id=subject_id,
                image_path=image_path, landmark_path=landmark_path,
                spacing_mm=SYNTH_SPACING, knee_side=side, kl_grade=kl_grade,
            ))

    write_manifest(rows, os.path.join(out_dir, 'manifest.csv'))
    logger.info("Wrote %d knees of %d subjects (effect cell %d, delta %.2f) to %s",
                len(rows), n_subjects, effect_cell, delta, out_dir)
    return rows
