"""Dataset ingestion: manifest rows to oriented, preprocessed knees"""
import os
from dataclasses import replace
from typing import Optional, Tuple

from config import PreprocessConfig, config_hash
from models import GrayImage, KneeSample, LandmarkSet, ManifestRow
from utils.file_utils import content_hash, safe_name

from .image_service import export_raster, load_landmarks, load_raster, mirror_horizontal, save_landmarks
from .preprocess_service import preprocess_sample


def load_oriented(row: ManifestRow) -> Tuple[GrayImage, LandmarkSet]:
    """
    Raster and landmarks of one knee with the medial side on the left.

    Left knees not yet flipped are mirrored here, exactly once.
    """
    img = load_raster(row.image_path, row.spacing_mm)
    lm = load_landmarks(row.landmark_path, img.width, img.height)
    if row.knee_side == 'L' and not row.mirrored:
        img, lm = mirror_horizontal(img, lm)
    return img, lm


def load_knee_sample(row: ManifestRow) -> KneeSample:
    img, lm = load_oriented(row)
    return KneeSample(
        sample_id=row.sample_id, subject_id=row.subject_id, label=row.label,
        image=img, landmarks=lm,
    )


def row_hash(row: ManifestRow, cfg: PreprocessConfig) -> str:
    """Content hash deciding whether a stored preprocessed knee is current."""
    extra = "|".join([config_hash(cfg), row.knee_side, str(row.mirrored), repr(row.spacing_mm)])
    return content_hash([row.image_path, row.landmark_path], extra)


def preprocessed_row(row: ManifestRow, store_dir: str, cfg: PreprocessConfig) -> ManifestRow:
    """Manifest row describing the stored preprocessed version of `row`."""
    name = safe_name(row.sample_id)
    return replace(
        row,
        image_path=os.path.join(store_dir, 'images', f"{name}.png"),
        landmark_path=os.path.join(store_dir, 'landmarks', f"{name}.json"),
        spacing_mm=cfg.target_spacing,
        mirrored=row.knee_side == 'L' or row.mirrored,
    )


def preprocess_row(row: ManifestRow, store_dir: str, cfg: PreprocessConfig,
                   known_hash: Optional[str] = None) -> Tuple[ManifestRow, str, bool]:
    """
    Run the preprocessing chain on one knee and store the result.

    Returns:
        (stored row, content hash, True when the stored copy was already current)
    """
    digest = row_hash(row, cfg)
    out = preprocessed_row(row, store_dir, cfg)
    if known_hash == digest and os.path.exists(out.image_path) and os.path.exists(out.landmark_path):
        return out, digest, True

    img, lm = load_oriented(row)
    img, lm = preprocess_sample(img, lm, cfg)
    export_raster(img, out.image_path, bits=8)
    save_landmarks(lm, out.landmark_path)
    return out, digest, False
