"""preprocess: contrast, 8-bit quantization, spacing and rotation for every knee"""
import os

from config import FAILURE_BUDGET, PipelineConfig
from models import BatchReport
from services.dataset_service import preprocess_row
from utils.file_utils import load_manifest, read_json, write_json, write_manifest
from utils.log_utils import get_logger
from utils.run_utils import over_budget, run_batch

from .common import result, store_dir, store_manifest
from .router import CommandRouter, argument

router = CommandRouter()
logger = get_logger("preprocess")


@router.command(
    "preprocess",
    help="Normalize, resample and align every knee of a manifest",
    arguments=(argument("--manifest", required=True, help="Dataset manifest CSV"),),
)
def preprocess_command(args, cfg: PipelineConfig):
    rows = load_manifest(args.manifest)
    if not rows:
        logger.info("Empty manifest, nothing to do")
        return result([], BatchReport())

    store = store_dir(cfg)
    hash_path = os.path.join(store, 'hashes.json')
    known = read_json(hash_path, default={})

    def work(row):
        return preprocess_row(row, store, cfg.preprocess, known.get(row.sample_id))

    done, report = run_batch([(row.sample_id, row) for row in rows], work, cfg.jobs)

    stored, hashes = [], {}
    for sample_id in sorted(done):
        out_row, digest, skipped = done[sample_id]
        stored.append(out_row)
        hashes[sample_id] = digest
        if skipped:
            report.processed.remove(sample_id)
            report.skipped.append(sample_id)

    write_manifest(stored, store_manifest(cfg), with_mirrored=True)
    write_json(hash_path, hashes)
    logger.info("%d knees preprocessed, %d already current, %d failed",
                len(report.processed), len(report.skipped), len(report.failed))

    outputs = [store_manifest(cfg), hash_path] + [r.image_path for r in stored]
    return result(outputs, report, exit_code=1 if over_budget(report, FAILURE_BUDGET) else 0)
