"""
Most-informative-region search.

Every knee is oversegmented once; the superpixel enclosing each grid point
becomes that point's candidate region. An LBP classifier is cross-validated
per grid index and the indices are ranked by held-out ROC AUC.
"""
import os
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import PipelineConfig
from models import (
    AverageMask, DescriptorError, GeometryError, GridPoint, GridSpec, KneeSample, LandmarkSet,
    LearningError, RankedRegion, RoiMask, SegmentationError, SegmentedSample,
)
from utils.file_utils import read_json, safe_name, write_json
from utils.log_utils import get_logger
from utils.run_utils import run_batch
from utils.scoring_utils import bootstrap_ci, roc_auc

from .descriptor_service import histogram_from_codes, lbp_codes
from .image_service import bone_mask
from .learning_service import assign_folds, cross_validated_scores
from .segmentation_service import (
    ANCHOR_NAMES, accumulate_masks, anchor_roi, export_label_map, grid_points, load_label_map,
    reference_frame, region_of_point, slic_segment, to_reference_frame,
)

logger = get_logger("rank")

# AUC reported for a region whose samples cannot be cross-validated
CHANCE_AUC = 0.5


def segment_sample(sample: KneeSample, cfg: PipelineConfig, bone: str = "tibia") -> SegmentedSample:
    """Bone mask, SLIC label map and grid lattice of one preprocessed knee."""
    img = sample.image
    mask = bone_mask(sample.landmarks, bone, img.width, img.height)
    labels = slic_segment(img, mask, cfg.slic)
    grid = grid_points(mask, cfg.grid)
    return SegmentedSample(
        sample_id=sample.sample_id,
        subject_id=sample.subject_id,
        label=sample.label,
        bone=mask,
        labels=labels,
        grid=grid,
        spacing=img.spacing,
    )


def _region_histograms(sample: KneeSample, cfg: PipelineConfig,
                       bone: str) -> Tuple[SegmentedSample, Dict[int, np.ndarray]]:
    segmented = segment_sample(sample, cfg, bone)
    codes, valid = lbp_codes(sample.image, cfg.lbp)
    histograms: Dict[int, np.ndarray] = {}
    for point in segmented.grid.points:
        region = region_of_point(segmented.labels, (point.x, point.y))
        try:
            histograms[point.index] = histogram_from_codes(codes, valid, region, cfg.lbp).values
        except DescriptorError as e:
            logger.debug("%s grid %d: %s", sample.sample_id, point.index, e)
    return segmented, histograms


def _score_region(index: int, rows: List[Tuple[KneeSample, np.ndarray]],
                  folds: Dict[str, int], cfg: PipelineConfig) -> Tuple[float, float, float, int]:
    X = np.stack([hist for _, hist in rows])
    y = np.array([s.label for s, _ in rows], dtype=np.int64)
    fold_ids = np.array([folds[s.sample_id] for s, _ in rows], dtype=np.int64)

    if np.unique(y).size < 2 or np.unique(fold_ids).size < 2:
        logger.warning("Grid %d: cannot cross-validate %d samples, AUC set to 0.5", index, y.size)
        return CHANCE_AUC, CHANCE_AUC, CHANCE_AUC, y.size

    scores, per_fold, warnings = cross_validated_scores(X, y, fold_ids, cfg.lam)
    if warnings:
        logger.warning("Grid %d: %d fold(s) with a single class, AUC set to 0.5", index, len(warnings))
        return CHANCE_AUC, CHANCE_AUC, CHANCE_AUC, y.size

    auc = roc_auc(scores, y)
    lo, hi = bootstrap_ci(scores, y, roc_auc, n_boot=cfg.n_boot, seed=cfg.seed)
    return auc, lo, hi, y.size


def rank_regions(samples: Sequence[KneeSample], cfg: PipelineConfig, bone: str = "tibia",
                 jobs: int = 1, failures: Optional[Dict[str, str]] = None,
                 ) -> Tuple[List[RankedRegion], List[SegmentedSample]]:
    """
    Rank grid indices by cross-validated LBP ROC AUC.

    Folds are assigned once, subject-wise, over the whole corpus and shared
    by every grid index; a sample lacking a grid point (outside its bone) or
    a usable region simply drops out of that index. An index is scored by the
    ROC AUC of its held-out predictions pooled over all folds, not by a mean
    of per-fold AUCs; the interval bootstraps the same pooled predictions.

    Args:
        samples: Preprocessed knees
        cfg: Pipeline configuration (SLIC, grid, LBP, CV, lambda, bootstrap)
        bone: "tibia" or "femur"
        jobs: Worker threads for the per-knee segmentation
        failures: When given, knees that cannot be segmented are recorded
            here (sample_id -> message) and left out instead of raising

    Returns:
        (regions sorted by AUC descending then grid index, per-sample segmentations)

    Raises:
        LearningError: Fewer than two classes among the usable knees
    """
    ordered = sorted(samples, key=lambda s: s.sample_id)
    by_id = {s.sample_id: s for s in ordered}
    outcomes, batch = run_batch(
        [(s.sample_id, s) for s in ordered],
        lambda sample: _region_histograms(sample, cfg, bone),
        jobs,
        strict=failures is None,
    )
    if failures is not None:
        failures.update(batch.failed)
    usable = [(by_id[key], outcomes[key]) for key in sorted(outcomes)]

    if len({sample.label for sample, _ in usable}) < 2:
        raise LearningError("Region ranking needs both classes in the corpus")
    folds = assign_folds([(s.sample_id, s.subject_id, s.label) for s, _ in usable], cfg.cv)

    per_index: Dict[int, List[Tuple[KneeSample, np.ndarray]]] = {}
    layout: Dict[int, Tuple[int, int]] = {}
    for sample, (segmented, histograms) in usable:
        for point in segmented.grid.points:
            layout[point.index] = (point.row, point.col)
            if point.index in histograms:
                per_index.setdefault(point.index, []).append((sample, histograms[point.index]))

    ranked = []
    for index in sorted(per_index):
        auc, lo, hi, n = _score_region(index, per_index[index], folds, cfg)
        row, col = layout[index]
        ranked.append(RankedRegion(grid_index=index, row=row, col=col,
                                   auc=auc, auc_lo=lo, auc_hi=hi, n_samples=n))
        logger.debug("Grid %d: AUC %.4f [%.4f, %.4f] over %d knees", index, auc, lo, hi, n)

    ranked.sort(key=lambda r: (-r.auc, r.grid_index))
    if ranked:
        logger.info("Best %s region: grid %d, AUC %.4f", bone, ranked[0].grid_index, ranked[0].auc)
    return ranked, [segmented for _, (segmented, _) in usable]


def sample_region(segmented: SegmentedSample, region: Union[int, str],
                  landmarks: Optional[LandmarkSet] = None,
                  offset_mm: Tuple[float, float] = (2.0, 2.0)) -> Optional[RoiMask]:
    """
    The adaptive region of one knee for a grid index or a margin anchor name;
    None when the knee has no such region.
    """
    try:
        if isinstance(region, str) and region in ANCHOR_NAMES:
            if landmarks is None:
                raise GeometryError("Anchor regions need landmarks")
            return anchor_roi(segmented.labels, landmarks, region, offset_mm, segmented.spacing)
        point = segmented.point(int(region))
        if point is None:
            return None
        return region_of_point(segmented.labels, (point.x, point.y))
    except GeometryError as e:
        logger.warning("%s: no region %s (%s)", segmented.sample_id, region, e)
        return None


def average_region_mask(segmented: Sequence[SegmentedSample], region: Union[int, str],
                        landmarks: Optional[Dict[str, LandmarkSet]] = None,
                        offset_mm: Tuple[float, float] = (2.0, 2.0)) -> AverageMask:
    """
    Average of one region over all knees in the median bone-box frame.

    Raises:
        SegmentationError: No knee carries the requested region
    """
    frame = reference_frame([s.bone for s in segmented])
    masks = []
    for s in sorted(segmented, key=lambda item: item.sample_id):
        lm = landmarks.get(s.sample_id) if landmarks else None
        roi = sample_region(s, region, lm, offset_mm)
        if roi is not None:
            masks.append(to_reference_frame(roi, s.bone, frame))
    if not masks:
        raise SegmentationError(f"No knee carries region {region}")
    logger.info("Region %s averaged over %d knees in a %dx%d frame", region, len(masks), frame[1], frame[0])
    return accumulate_masks(masks)


# ---------------------------------------------------------------------------
# Stored segmentations
# ---------------------------------------------------------------------------

def save_segmentation(segmented: SegmentedSample, directory: str) -> Tuple[str, str]:
    """Label map PNG plus grid JSON of one knee; returns both paths."""
    name = safe_name(segmented.sample_id)
    label_path = os.path.join(directory, f"{name}.png")
    grid_path = os.path.join(directory, f"{name}_grid.json")
    export_label_map(segmented.labels, label_path)
    write_json(grid_path, {
        'rows': segmented.grid.rows,
        'cols': segmented.grid.cols,
        'points': [[p.index, p.row, p.col, p.x, p.y] for p in segmented.grid.points],
    })
    return label_path, grid_path


def load_segmentation(sample: KneeSample, directory: str, bone: str = "tibia") -> SegmentedSample:
    """
    Rebuild a SegmentedSample from the files written by save_segmentation.

    Raises:
        SegmentationError: Files missing or not matching the knee's frame
    """
    name = safe_name(sample.sample_id)
    label_path = os.path.join(directory, f"{name}.png")
    grid = read_json(os.path.join(directory, f"{name}_grid.json"))
    if grid is None or not os.path.exists(label_path):
        raise SegmentationError(f"No stored segmentation for {sample.sample_id} in {directory}")

    img = sample.image
    labels = load_label_map(label_path)
    if (labels.height, labels.width) != (img.height, img.width):
        raise SegmentationError(f"Stored label map of {sample.sample_id} does not match its image")
    points = tuple(
        GridPoint(index=int(i), row=int(r), col=int(c), x=float(x), y=float(y))
        for i, r, c, x, y in grid['points']
    )
    return SegmentedSample(
        sample_id=sample.sample_id,
        subject_id=sample.subject_id,
        label=sample.label,
        bone=bone_mask(sample.landmarks, bone, img.width, img.height),
        labels=labels,
        grid=GridSpec(rows=int(grid['rows']), cols=int(grid['cols']), points=points),
        spacing=img.spacing,
    )
