"""extract: place an ROI on every knee and write texture descriptor tables"""
import os
from typing import Callable, Dict, List

from config import FAILURE_BUDGET, PipelineConfig
from models import Descriptor, GeometryError, KneeSample, RoiMask, RoiOrigin
from services.descriptor_service import compute_descriptor
from services.image_service import bone_mask, load_mask
from services.ranking_service import load_segmentation, sample_region
from services.segmentation_service import ANCHOR_NAMES, register_mask, standard_roi
from utils.file_utils import write_feature_csv
from utils.log_utils import get_logger
from utils.run_utils import over_budget, run_batch

from .common import BONE_CHOICES, labels_dir, load_samples, mark_failed, mask_paths, result
from .router import CommandRouter, argument

router = CommandRouter()
logger = get_logger("extract")

ROI_MODES = ("standard", "adaptive_mask", "anchor")
DESCRIPTOR_CHOICES = tuple(d.value for d in Descriptor if d is not Descriptor.COMPOSITE)


def roi_placer(args, cfg: PipelineConfig) -> Callable[[KneeSample], RoiMask]:
    """ROI placement for the selected mode, as a function of one knee."""
    if args.roi == "standard":
        def place(sample):
            return standard_roi(sample.image, sample.landmarks, cfg.standard_side_fraction, args.side)
        return place

    if args.roi == "adaptive_mask":
        if args.mask is None and args.region is None:
            raise GeometryError("adaptive_mask needs --mask or --region")
        path = args.mask or mask_paths(cfg, args.bone, str(args.region))[1]
        mask = load_mask(path, RoiOrigin.ADAPTIVE_AVERAGE)

        def place(sample):
            img = sample.image
            return register_mask(mask, bone_mask(sample.landmarks, args.bone, img.width, img.height))
        return place

    directory = labels_dir(cfg, args.bone)

    def place(sample):
        segmented = load_segmentation(sample, directory, args.bone)
        roi = sample_region(segmented, args.anchor, sample.landmarks, cfg.anchor_offset_mm)
        if roi is None:
            raise GeometryError(f"No region at {args.anchor}")
        return roi
    return place


def roi_name(args) -> str:
    if args.roi == "standard":
        return f"standard_{args.side}"
    if args.roi == "anchor":
        return f"anchor_{args.bone}_{args.anchor}"
    if args.mask is not None:
        return f"mask_{os.path.splitext(os.path.basename(args.mask))[0]}"
    return f"mask_{args.bone}_{args.region}"


@router.command(
    "extract",
    help="Compute texture descriptors inside an ROI of every knee",
    arguments=(
        argument("--roi", choices=ROI_MODES, default="standard"),
        argument("--descriptors", nargs="+", choices=DESCRIPTOR_CHOICES, default=["LBP"]),
        argument("--mask", default=None, help="Adaptive mask PNG in the reference frame"),
        argument("--region", default=None, help="Ranked region whose stored mask to use"),
        argument("--anchor", choices=ANCHOR_NAMES, default=ANCHOR_NAMES[0]),
        argument("--side", choices=("medial", "lateral"), default="medial"),
        argument("--bone", choices=BONE_CHOICES, default="tibia"),
        argument("--manifest", default=None, help="Preprocessed manifest (default: preprocess store)"),
    ),
)
def extract_command(args, cfg: PipelineConfig):
    samples, _, report = load_samples(args.manifest, cfg)
    place = roi_placer(args, cfg)
    descriptors = [Descriptor(name) for name in args.descriptors]

    def work(sample):
        roi = place(sample)
        return [compute_descriptor(d, sample.image, roi, cfg) for d in descriptors]

    vectors, batch = run_batch([(s.sample_id, s) for s in samples], work, cfg.jobs)
    mark_failed(report, batch.failed)

    by_id: Dict[str, KneeSample] = {s.sample_id: s for s in samples}
    name = roi_name(args)
    outputs: List[str] = []
    for i, descriptor in enumerate(descriptors):
        rows = [
            (sid, by_id[sid].subject_id, by_id[sid].label, vectors[sid][i])
            for sid in sorted(vectors)
        ]
        path = os.path.join(cfg.output_dir, 'features', f"{name}_{descriptor.value}.csv")
        write_feature_csv(path, rows)
        outputs.append(path)
        logger.info("%s: %d knees x %d values -> %s", descriptor.value, len(rows),
                    len(rows[0][3]) if rows else 0, path)

    return result(outputs, report, exit_code=1 if over_budget(report, FAILURE_BUDGET) else 0)
