"""Utility functions for the texroi pipeline"""

from .log_utils import get_logger, configure_logging
from .scoring_utils import roc_auc, average_precision, roc_curve, pr_curve, bootstrap_ci
from .file_utils import (
    load_manifest,
    write_manifest,
    read_feature_csv,
    write_feature_csv
)

__all__ = [
    'get_logger',
    'configure_logging',
    'roc_auc',
    'average_precision',
    'roc_curve',
    'pr_curve',
    'bootstrap_ci',
    'load_manifest',
    'write_manifest',
    'read_feature_csv',
    'write_feature_csv'
]
