"""rank-regions: find the most informative superpixel regions of each bone"""
import os

from config import FAILURE_BUDGET, PipelineConfig
from models import TexRoiError
from services.ranking_service import rank_regions, save_segmentation
from utils.file_utils import write_ranking_csv
from utils.log_utils import get_logger
from utils.run_utils import over_budget

from .common import BONE_CHOICES, bones_for, labels_dir, load_samples, mark_failed, result
from .mask_commands import build_region_masks
from .router import CommandRouter, argument

router = CommandRouter()
logger = get_logger("rank")


def ranking_path(cfg: PipelineConfig, bone: str) -> str:
    return os.path.join(cfg.output_dir, 'ranking', f"{bone}.csv")


@router.command(
    "rank-regions",
    help="Rank grid regions by cross-validated LBP ROC AUC",
    arguments=(
        argument("--bone", choices=BONE_CHOICES + ("both",), default="tibia"),
        argument("--top-n", type=int, default=None, help="Average masks for the N best regions"),
        argument("--manifest", default=None, help="Preprocessed manifest (default: preprocess store)"),
    ),
)
def rank_regions_command(args, cfg: PipelineConfig):
    samples, _, report = load_samples(args.manifest, cfg)
    top_n = args.top_n if args.top_n is not None else cfg.top_n
    landmarks = {s.sample_id: s.landmarks for s in samples}
    outputs = []
    best = {}

    for bone in bones_for(args.bone):
        failures = {}
        ranked, segmented = rank_regions(samples, cfg, bone, cfg.jobs, failures)
        mark_failed(report, {key: f"{bone}: {message}" for key, message in failures.items()})

        path = ranking_path(cfg, bone)
        write_ranking_csv(path, ranked)
        outputs.append(path)

        directory = labels_dir(cfg, bone)
        for s in segmented:
            outputs.extend(save_segmentation(s, directory))

        for region in ranked[:top_n]:
            try:
                outputs.extend(build_region_masks(segmented, region.grid_index, landmarks, cfg, bone))
            except TexRoiError as e:
                logger.warning("%s region %d: no adaptive mask (%s)", bone, region.grid_index, e)
        if ranked:
            best[bone] = {'grid_index': ranked[0].grid_index, 'auc': ranked[0].auc}

    return result(outputs, report, exit_code=1 if over_budget(report, FAILURE_BUDGET) else 0,
                  best=best)
