"""Command plumbing: timing, per-sample batch execution and run provenance"""
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from functools import wraps
from typing import Any, Callable, Dict, List, Sequence, Tuple

from config import FAILURE_BUDGET, PipelineConfig, config_hash
from models import BatchReport, TexRoiError

from .file_utils import package_versions, write_json
from .log_utils import get_logger

logger = get_logger("run")


def monitor_performance(func):
    """Decorator adding elapsed wall time to a command's result dict"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        result = func(*args, **kwargs)
        elapsed_time = time.time() - start_time
        if isinstance(result, dict):
            result['performance'] = {'elapsed_time_seconds': round(elapsed_time, 3)}
        return result
    return wrapper


def run_batch(items: Sequence[Tuple[str, Any]], func: Callable[[Any], Any],
              jobs: int = 1, strict: bool = False) -> Tuple[Dict[str, Any], BatchReport]:
    """
    Apply func to every (id, item) pair, optionally on a thread pool.

    A TexRoiError (or an unreadable file) excludes that item and is recorded
    in the report; results come back keyed by id, so the reduction order does
    not depend on scheduling. With strict=True the first error propagates.
    """
    def guarded(entry):
        key, item = entry
        try:
            return key, func(item), None
        except (TexRoiError, OSError) as e:
            if strict:
                raise
            return key, None, f"{type(e).__name__}: {e}"

    entries = sorted(items, key=lambda entry: entry[0])
    if jobs > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(guarded, entries))
    else:
        outcomes = [guarded(entry) for entry in entries]

    results: Dict[str, Any] = {}
    report = BatchReport()
    for key, value, error in outcomes:
        if error is None:
            results[key] = value
            report.processed.append(key)
        else:
            logger.warning("%s excluded: %s", key, error)
            report.failed[key] = error
    return results, report


def over_budget(report: BatchReport, budget: float = FAILURE_BUDGET) -> bool:
    return report.failure_fraction > budget


def report_dict(report: BatchReport) -> Dict[str, Any]:
    return {
        'processed': sorted(report.processed),
        'skipped': sorted(report.skipped),
        'failed': dict(sorted(report.failed.items())),
        'failure_fraction': report.failure_fraction,
    }


def write_run_record(path: str, command: str, argv: List[str], cfg: PipelineConfig,
                     result: Dict[str, Any]) -> None:
    """run.json: what ran, with which configuration, and how it went."""
    record = {
        'command': command,
        'argv': list(argv),
        'config_hash': config_hash(cfg),
        'config': cfg.model_dump(mode="json", by_alias=True),
        'seed': cfg.seed,
        'python': sys.version.split()[0],
        'versions': package_versions(),
        'elapsed_seconds': result.get('performance', {}).get('elapsed_time_seconds'),
        'failures': result.get('report', {}).get('failed', {}),
        'outputs': result.get('outputs', []),
        'exit_code': result.get('exit_code', 0),
    }
    write_json(path, record)
