"""evaluate: cross-validated or external logistic-regression evaluation of feature tables"""
import csv
import os
from dataclasses import asdict
from typing import Sequence

import numpy as np

from config import PipelineConfig
from models import BatchReport, EvalReport, FeatureTable, LearningError
from services.descriptor_service import concat_features
from services.learning_service import assign_folds, evaluate, save_model_json, test_external, train_full
from utils.file_utils import read_feature_csv, table_vectors, write_folds_csv, write_json
from utils.log_utils import get_logger
from utils.plot_utils import plot_pr, plot_roc

from .common import result
from .router import CommandRouter, argument

router = CommandRouter()
logger = get_logger("evaluate")


def merge_tables(tables: Sequence[FeatureTable]) -> FeatureTable:
    """
    Join feature tables on sample_id, concatenating the vectors per knee.

    Knees missing from any table are dropped with a warning.

    Raises:
        LearningError: A knee whose subject or label differs between tables
    """
    if len(tables) == 1:
        return tables[0]

    shared = set(tables[0].sample_ids)
    for table in tables[1:]:
        shared &= set(table.sample_ids)
    dropped = set().union(*(set(t.sample_ids) for t in tables)) - shared
    if dropped:
        logger.warning("%d knees missing from some feature tables, left out", len(dropped))

    keys = {}
    for table in tables:
        for sid, subj, label in table.keys():
            if sid in shared and keys.setdefault(sid, (subj, label)) != (subj, label):
                raise LearningError(f"Sample {sid} has inconsistent subject or label across tables")

    vectors = [table_vectors(t) for t in tables]
    ordered = sorted(shared)
    merged = [concat_features([v[sid] for v in vectors]) for sid in ordered]
    return FeatureTable(
        sample_ids=tuple(ordered),
        subject_ids=tuple(keys[sid][0] for sid in ordered),
        labels=tuple(keys[sid][1] for sid in ordered),
        roi_tags=tuple(vec.roi_tag for vec in merged),
        descriptors=tuple(vec.descriptor.value for vec in merged),
        X=np.stack([vec.values for vec in merged]) if merged else np.zeros((0, 0)),
    )


def read_tables(paths: Sequence[str]) -> FeatureTable:
    return merge_tables([read_feature_csv(p) for p in paths])


def report_payload(report: EvalReport) -> dict:
    return {
        'mode': report.mode,
        'n_samples': report.n_samples,
        'auc': report.auc,
        'auc_ci': list(report.auc_ci),
        'ap': report.ap,
        'ap_ci': list(report.ap_ci),
        'per_fold': [asdict(f) for f in report.per_fold],
        'warnings': list(report.warnings),
        'roc_curve': [list(p) for p in report.roc_curve],
        'pr_curve': [list(p) for p in report.pr_curve],
    }


def write_report_csv(path: str, report: EvalReport) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['fold', 'n_train', 'n_test', 'auc', 'ap', 'skipped'])
        for fm in report.per_fold:
            writer.writerow([fm.fold, fm.n_train, fm.n_test,
                             '' if fm.auc is None else repr(fm.auc),
                             '' if fm.ap is None else repr(fm.ap), int(fm.skipped)])
        writer.writerow([report.mode, '', report.n_samples, repr(report.auc), repr(report.ap), 0])


def _tag(table: FeatureTable):
    return (table.descriptors[0], table.roi_tags[0]) if table.sample_ids else ('', '')


@router.command(
    "evaluate",
    help="Evaluate feature tables with regularized logistic regression",
    arguments=(
        argument("--features", nargs="+", required=True, help="Training feature CSVs, joined per knee"),
        argument("--test-features", nargs="+", default=None, help="External test feature CSVs"),
        argument("--name", default=None, help="Subdirectory of <out>/evaluation"),
    ),
)
def evaluate_command(args, cfg: PipelineConfig):
    train = read_tables(args.features)
    if not train.sample_ids:
        raise LearningError("No knees in the training features")
    name = args.name or "+".join(os.path.splitext(os.path.basename(p))[0] for p in args.features)
    out_dir = os.path.join(cfg.output_dir, 'evaluation', name)
    descriptor, roi_tag = _tag(train)
    y = np.asarray(train.labels, dtype=np.int64)
    outputs = []

    if args.test_features:
        test = read_tables(args.test_features)
        if test.width != train.width:
            raise LearningError(f"Test width {test.width} differs from training width {train.width}")
        report, std, model = test_external(
            train.X, y, test.X, np.asarray(test.labels, dtype=np.int64),
            cfg.lam, cfg.n_boot, cfg.seed,
        )
    else:
        folds = assign_folds(train.keys(), cfg.cv)
        report = evaluate(train.X, y, [folds[sid] for sid in train.sample_ids],
                          cfg.lam, cfg.n_boot, cfg.seed)
        std, model = train_full(train.X, y, cfg.lam)
        folds_path = os.path.join(out_dir, 'folds.csv')
        write_folds_csv(folds_path, train, folds)
        outputs.append(folds_path)

    paths = {
        'json': os.path.join(out_dir, 'report.json'),
        'csv': os.path.join(out_dir, 'report.csv'),
        'roc': os.path.join(out_dir, 'roc.svg'),
        'pr': os.path.join(out_dir, 'pr.svg'),
        'model': os.path.join(out_dir, 'model.json'),
    }
    write_json(paths['json'], report_payload(report))
    write_report_csv(paths['csv'], report)
    title = f"{descriptor} / {roi_tag}"
    plot_roc(report.roc_curve, report.auc, report.auc_ci, paths['roc'], title)
    plot_pr(report.pr_curve, report.ap, report.ap_ci, float(np.mean(report.labels)), paths['pr'], title)
    save_model_json(paths['model'], std, model, descriptor, roi_tag)
    outputs.extend(paths.values())

    logger.info("%s AUC %.3f [%.3f, %.3f], AP %.3f over %d knees", report.mode,
                report.auc, report.auc_ci[0], report.auc_ci[1], report.ap, report.n_samples)
    return result(outputs, BatchReport(processed=list(train.sample_ids)),
                  auc=report.auc, ap=report.ap)
