"""make-mask: average one region over all knees and threshold it with Otsu"""
from typing import Dict, List, Sequence, Union

from config import FAILURE_BUDGET, PipelineConfig
from models import LandmarkSet, SegmentedSample
from services.image_service import export_mask
from services.ranking_service import average_region_mask, load_segmentation
from services.segmentation_service import export_average_mask, otsu_threshold
from utils.file_utils import write_json
from utils.log_utils import get_logger
from utils.run_utils import over_budget, run_batch

from .common import (
    BONE_CHOICES, labels_dir, load_samples, mark_failed, mask_paths, parse_region, result,
)
from .router import CommandRouter, argument

router = CommandRouter()
logger = get_logger("mask")


def build_region_masks(segmented: Sequence[SegmentedSample], region: Union[int, str],
                       landmarks: Dict[str, LandmarkSet], cfg: PipelineConfig,
                       bone: str) -> List[str]:
    """
    Write the average mask, its Otsu threshold and a small metadata record.

    Returns:
        Paths written
    """
    avg = average_region_mask(segmented, region, landmarks, cfg.anchor_offset_mm)
    adaptive = otsu_threshold(avg)
    avg_path, otsu_path, meta_path = mask_paths(cfg, bone, str(region))
    export_average_mask(avg, avg_path)
    export_mask(adaptive, otsu_path)
    write_json(meta_path, {
        'bone': bone,
        'region': region,
        'n_subjects': avg.n_subjects,
        'frame': [avg.height, avg.width],
        'mask_area': adaptive.area,
    })
    logger.info("%s region %s: adaptive mask of %d px from %d knees",
                bone, region, adaptive.area, avg.n_subjects)
    return [avg_path, otsu_path, meta_path]


@router.command(
    "make-mask",
    help="Average one ranked region across knees and threshold it",
    arguments=(
        argument("--region", required=True, help="Grid index or margin anchor name"),
        argument("--bone", choices=BONE_CHOICES, default="tibia"),
        argument("--manifest", default=None, help="Preprocessed manifest (default: preprocess store)"),
    ),
)
def make_mask_command(args, cfg: PipelineConfig):
    samples, _, report = load_samples(args.manifest, cfg)
    directory = labels_dir(cfg, args.bone)

    def work(sample):
        return load_segmentation(sample, directory, args.bone)

    stored, seg_report = run_batch([(s.sample_id, s) for s in samples], work, cfg.jobs)
    mark_failed(report, seg_report.failed)
    segmented = [stored[key] for key in sorted(stored)]

    landmarks = {s.sample_id: s.landmarks for s in samples}
    outputs = build_region_masks(segmented, parse_region(args.region), landmarks, cfg, args.bone)
    return result(outputs, report, exit_code=1 if over_budget(report, FAILURE_BUDGET) else 0)
