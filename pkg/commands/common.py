"""Pieces shared by every command: common flags, config overrides, output layout"""
import argparse
import os
from typing import Dict, List, Optional, Sequence, Tuple

from config import PipelineConfig, load_pipeline_config
from models import BatchReport, KneeSample, ManifestRow
from services.dataset_service import load_knee_sample
from utils.file_utils import load_manifest
from utils.run_utils import report_dict, run_batch

from .router import argument

COMMON_ARGUMENTS = (
    argument("--config", default=None, help="Pipeline configuration (.toml or .json)"),
    argument("--jobs", type=int, default=None, help="Worker threads for per-sample work"),
    argument("--seed", type=int, default=None, help="Seed for folds, bootstrap and synthesis"),
    argument("--out", default=None, help="Output directory"),
)

BONE_CHOICES = ("tibia", "femur")


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    for arg in COMMON_ARGUMENTS:
        parser.add_argument(*arg.flags, **arg.options)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file plus --jobs/--seed/--out; --seed also seeds the fold assignment."""
    cfg = load_pipeline_config(args.config, jobs=args.jobs, seed=args.seed, output_dir=args.out)
    if args.seed is not None:
        cfg = cfg.model_copy(update={'cv': cfg.cv.model_copy(update={'seed': args.seed})})
    return cfg


def store_dir(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.output_dir, 'preprocessed')


def store_manifest(cfg: PipelineConfig) -> str:
    return os.path.join(store_dir(cfg), 'manifest.csv')


def labels_dir(cfg: PipelineConfig, bone: str) -> str:
    return os.path.join(cfg.output_dir, 'labels', bone)


def masks_dir(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.output_dir, 'masks')


def mask_paths(cfg: PipelineConfig, bone: str, region: str) -> Tuple[str, str, str]:
    """(average mask PNG, Otsu mask PNG, metadata JSON) for one region."""
    stem = os.path.join(masks_dir(cfg), f"{bone}_{region}")
    return f"{stem}_average.png", f"{stem}_otsu.png", f"{stem}.json"


def bones_for(choice: str) -> List[str]:
    return list(BONE_CHOICES) if choice == "both" else [choice]


def parse_region(value: str):
    """Grid index as int, anything else (an anchor name) as str."""
    try:
        return int(value)
    except ValueError:
        return value


def load_samples(manifest: Optional[str], cfg: PipelineConfig):
    """
    Preprocessed knees of a manifest (default: the store of `preprocess`).

    Returns:
        (samples sorted by id, manifest rows, BatchReport of unreadable knees)
    """
    rows: Sequence[ManifestRow] = load_manifest(manifest or store_manifest(cfg))
    loaded, report = run_batch([(row.sample_id, row) for row in rows], load_knee_sample, cfg.jobs)
    samples: List[KneeSample] = [loaded[key] for key in sorted(loaded)]
    return samples, rows, report


def result(outputs: Sequence[str], report, exit_code: int = 0, **extra) -> Dict:
    payload = {'outputs': sorted(outputs), 'report': report_dict(report), 'exit_code': exit_code}
    payload.update(extra)
    return payload


def mark_failed(report: BatchReport, failures: Dict[str, str]) -> None:
    """Move samples that failed a later stage from processed to failed."""
    for key, message in failures.items():
        if key in report.processed:
            report.processed.remove(key)
        report.failed[key] = message
