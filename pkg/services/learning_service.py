"""
Learning service: per-fold standardization, L2-regularized logistic
regression, subject-wise cross-validation and evaluation reports.
"""
import json
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import expit

from config import SOLVER_GRAD_TOL, SOLVER_MAX_ITERS, CvConfig
from models import EvalReport, FoldMetrics, LearningError, LogRegModel, Standardizer
from utils.log_utils import get_logger
from utils.scoring_utils import average_precision, bootstrap_ci, pr_curve, roc_auc, roc_curve

logger = get_logger("learn")

# Armijo sufficient-decrease constant and maximum step halvings
ARMIJO_C = 1e-4
MAX_HALVINGS = 60

SampleKey = Tuple[str, str, int]  # (sample_id, subject_id, label)


def _check_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise LearningError(f"Expected a non-empty 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise LearningError("Feature matrix contains non-finite values")
    return X


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def fit_standardizer(X: np.ndarray) -> Standardizer:
    """
    Column means and population standard deviations of training data.

    Zero-variance columns get std 1 and are marked constant; they standardize
    to 0 on any data.
    """
    X = _check_matrix(X)
    if X.shape[0] < 2:
        raise LearningError("Standardizer needs at least 2 samples")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    constant = stds <= 1e-12 * np.maximum(1.0, np.abs(means))
    if constant.any():
        logger.warning("%d constant feature column(s)", int(constant.sum()))
    stds = np.where(constant, 1.0, stds)
    return Standardizer(means=means, stds=stds, constant=constant)


def apply_standardizer(std: Standardizer, X: np.ndarray) -> np.ndarray:
    X = _check_matrix(X)
    if X.shape[1] != std.means.size:
        raise LearningError(f"Feature width {X.shape[1]} differs from fitted width {std.means.size}")
    Z = (X - std.means) / std.stds
    Z[:, std.constant] = 0.0
    return Z


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

def logreg_loss_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                         lam: float) -> Tuple[float, np.ndarray]:
    """
    Mean logistic loss plus (lam / 2n) * ||w||^2 and its gradient.

    theta stacks the weights and, last, the unpenalized bias.
    """
    n = X.shape[0]
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + lam / (2.0 * n) * (w @ w))
    residual = expit(z) - y
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ residual / n + lam / n * w
    grad[-1] = residual.mean()
    return loss, grad


def _hessian(theta: np.ndarray, X: np.ndarray, lam: float) -> np.ndarray:
    n, d = X.shape
    p = expit(X @ theta[:-1] + theta[-1])
    r = p * (1.0 - p)
    Xb = np.hstack([X, np.ones((n, 1))])
    H = (Xb * r[:, None]).T @ Xb / n
    H[np.arange(d), np.arange(d)] += lam / n
    return H


def logreg_fit(X: np.ndarray, y: Sequence[int], lam: float = 1.0,
               tol: float = SOLVER_GRAD_TOL, max_iters: int = SOLVER_MAX_ITERS) -> LogRegModel:
    """
    Damped Newton iteration from w = 0, b = 0 with Armijo backtracking.

    Args:
        X: Standardized features (n x d)
        y: 0/1 labels
        lam: L2 strength on the weights
        tol: Stop when the gradient max-norm falls to this value

    Returns:
        LogRegModel with the loss recorded before every iteration and at the end

    Raises:
        LearningError: Non-finite features or a single class
    """
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != X.shape[0]:
        raise LearningError(f"{X.shape[0]} samples but {y.size} labels")
    if np.unique(y).size < 2:
        raise LearningError("Logistic regression needs both classes")

    theta = np.zeros(X.shape[1] + 1)
    loss, grad = logreg_loss_and_grad(theta, X, y, lam)
    history = [loss]
    converged = False
    n_iters = 0

    while n_iters < max_iters:
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        H = _hessian(theta, X, lam)
        try:
            direction = linalg.solve(H, grad, assume_a='pos')
        except (linalg.LinAlgError, ValueError):
            direction = linalg.lstsq(H, grad)[0]

        slope = float(grad @ direction)
        if slope <= 0:
            direction, slope = grad, float(grad @ grad)

        step = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = theta - step * direction
            cand_loss, cand_grad = logreg_loss_and_grad(candidate, X, y, lam)
            if cand_loss <= loss - ARMIJO_C * step * slope:
                break
            step *= 0.5
        else:
            logger.warning("Line search stalled at iteration %d (loss %.12g)", n_iters, loss)
            break

        theta, loss, grad = candidate, cand_loss, cand_grad
        history.append(loss)
        n_iters += 1
    else:
        converged = bool(np.max(np.abs(grad)) <= tol)

    if not converged:
        logger.warning("Solver stopped after %d iterations, |grad|max = %.3g",
                       n_iters, float(np.max(np.abs(grad))))
    logger.debug("Fitted in %d iterations, loss %.8f", n_iters, loss)
    return LogRegModel(
        weights=theta[:-1], bias=theta[-1], lam=lam,
        converged=converged, n_iters=n_iters, loss_history=tuple(history),
    )


def logreg_predict(model: LogRegModel, X: np.ndarray) -> np.ndarray:
    """sigmoid(X w + b) for every row."""
    X = _check_matrix(X)
    if X.shape[1] != model.weights.size:
        raise LearningError(f"Feature width {X.shape[1]} differs from model width {model.weights.size}")
    return expit(X @ model.weights + model.bias)


def fold_standardizer_into_model(model: LogRegModel, std: Standardizer) -> LogRegModel:
    """Equivalent model acting on raw (unstandardized) features."""
    weights = np.where(std.constant, 0.0, model.weights / std.stds)
    bias = model.bias - float(weights @ std.means)
    return LogRegModel(
        weights=weights, bias=bias, lam=model.lam, converged=model.converged,
        n_iters=model.n_iters, loss_history=model.loss_history,
    )


# ---------------------------------------------------------------------------
# Fold assignment
# ---------------------------------------------------------------------------

def _deal(groups: Dict[str, int], cfg: CvConfig) -> Dict[str, int]:
    """Seeded shuffle per label stratum, then round-robin into K folds."""
    if len(groups) < cfg.k_folds:
        raise LearningError(f"{len(groups)} groups cannot fill {cfg.k_folds} folds")
    keys = sorted(groups)
    if cfg.stratify:
        strata = [[k for k in keys if groups[k] == label] for label in sorted(set(groups.values()))]
    else:
        strata = [keys]

    rng = np.random.default_rng(cfg.seed)
    fold_of: Dict[str, int] = {}
    offset = 0
    for stratum in strata:
        for i, pos in enumerate(rng.permutation(len(stratum))):
            fold_of[stratum[pos]] = (offset + i) % cfg.k_folds
        offset += len(stratum)
    return fold_of


def subjectwise_kfold(samples: Sequence[SampleKey], cfg: CvConfig) -> Dict[str, int]:
    """
    Fold index per sample id; all knees of a subject share a fold.

    Subjects are stratified by their subject-level label (positive when any
    knee is positive).
    """
    subject_label: Dict[str, int] = {}
    for _, subject_id, label in samples:
        subject_label[subject_id] = max(subject_label.get(subject_id, 0), int(label))
    fold_of_subject = _deal(subject_label, cfg)
    return {sample_id: fold_of_subject[subject_id] for sample_id, subject_id, _ in samples}


def recordwise_kfold(samples: Sequence[SampleKey], cfg: CvConfig) -> Dict[str, int]:
    """Knee-level folds ignoring subjects; leaks between knees of one subject."""
    return _deal({sample_id: int(label) for sample_id, _, label in samples}, cfg)


def assign_folds(samples: Sequence[SampleKey], cfg: CvConfig) -> Dict[str, int]:
    if cfg.split_level == "record":
        logger.warning("Record-wise folds requested; knees of one subject may be split")
        return recordwise_kfold(samples, cfg)
    return subjectwise_kfold(samples, cfg)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def train_full(X: np.ndarray, y: Sequence[int], lam: float = 1.0) -> Tuple[Standardizer, LogRegModel]:
    std = fit_standardizer(X)
    return std, logreg_fit(apply_standardizer(std, X), y, lam)


def _fold_metric(scores: np.ndarray, labels: np.ndarray, metric) -> Optional[float]:
    if np.unique(labels).size < 2:
        return None
    return metric(scores, labels)


def _report(scores: np.ndarray, labels: np.ndarray, n_boot: int, seed: int, mode: str,
            per_fold: Sequence[FoldMetrics] = (), warnings: Sequence[str] = ()) -> EvalReport:
    if np.unique(labels).size < 2:
        raise LearningError("Scored samples contain a single class")
    return EvalReport(
        auc=roc_auc(scores, labels),
        ap=average_precision(scores, labels),
        auc_ci=bootstrap_ci(scores, labels, roc_auc, n_boot=n_boot, seed=seed),
        ap_ci=bootstrap_ci(scores, labels, average_precision, n_boot=n_boot, seed=seed),
        roc_curve=tuple(roc_curve(scores, labels)),
        pr_curve=tuple(pr_curve(scores, labels)),
        per_fold=tuple(per_fold),
        mode=mode,
        n_samples=int(labels.size),
        scores=tuple(scores.tolist()),
        labels=tuple(int(v) for v in labels),
        warnings=tuple(warnings),
    )


def cross_validated_scores(X: np.ndarray, y: Sequence[int], folds: Sequence[int],
                           lam: float = 1.0) -> Tuple[np.ndarray, List[FoldMetrics], List[str]]:
    """
    Held-out probability for every sample; NaN where the fold was skipped.
    """
    X = _check_matrix(X)
    y = np.asarray(y).astype(np.int64).ravel()
    folds = np.asarray(folds).astype(np.int64).ravel()
    if not (X.shape[0] == y.size == folds.size):
        raise LearningError("Features, labels and folds must have the same length")

    scores = np.full(y.size, np.nan)
    per_fold: List[FoldMetrics] = []
    warnings: List[str] = []
    for k in np.unique(folds):
        test = folds == k
        train = ~test
        if np.unique(y[train]).size < 2:
            message = f"fold {k}: training split has a single class, skipped"
            logger.warning(message)
            warnings.append(message)
            per_fold.append(FoldMetrics(int(k), int(train.sum()), int(test.sum()), None, None, True))
            continue
        std, model = train_full(X[train], y[train], lam)
        fold_scores = logreg_predict(model, apply_standardizer(std, X[test]))
        scores[test] = fold_scores
        per_fold.append(FoldMetrics(
            fold=int(k), n_train=int(train.sum()), n_test=int(test.sum()),
            auc=_fold_metric(fold_scores, y[test], roc_auc),
            ap=_fold_metric(fold_scores, y[test], average_precision),
        ))
    return scores, per_fold, warnings


def evaluate(X: np.ndarray, y: Sequence[int], folds: Sequence[int], lam: float = 1.0,
             n_boot: int = 1000, seed: int = 0) -> EvalReport:
    """
    K-fold evaluation: each fold gets its own standardizer and model, and the
    pooled held-out scores give the headline AUC/AP with bootstrap intervals.
    """
    y = np.asarray(y).astype(np.int64).ravel()
    scores, per_fold, warnings = cross_validated_scores(X, y, folds, lam)
    scored = np.isfinite(scores)
    if not scored.any():
        raise LearningError("Every fold was skipped")
    logger.info("Cross-validated %d samples over %d folds", int(scored.sum()), len(per_fold))
    return _report(scores[scored], y[scored], n_boot, seed, "cv", per_fold, warnings)


def test_external(X_train: np.ndarray, y_train: Sequence[int], X_test: np.ndarray,
                  y_test: Sequence[int], lam: float = 1.0, n_boot: int = 1000,
                  seed: int = 0) -> Tuple[EvalReport, Standardizer, LogRegModel]:
    """Fit once on the whole training corpus and score an external corpus."""
    std, model = train_full(X_train, y_train, lam)
    scores = logreg_predict(model, apply_standardizer(std, X_test))
    y_test = np.asarray(y_test).astype(np.int64).ravel()
    if scores.size != y_test.size:
        raise LearningError(f"{scores.size} test samples but {y_test.size} labels")
    return _report(scores, y_test, n_boot, seed, "external"), std, model


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_model_json(path: str, std: Standardizer, model: LogRegModel,
                    descriptor: str, roi_tag: str) -> None:
    payload = {
        'weights': model.weights.tolist(),
        'bias': model.bias,
        'lambda': model.lam,
        'means': std.means.tolist(),
        'stds': std.stds.tolist(),
        'constant': std.constant.tolist(),
        'converged': model.converged,
        'n_iters': model.n_iters,
        'descriptor': descriptor,
        'roi_tag': roi_tag,
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def load_model_json(path: str) -> Tuple[Standardizer, LogRegModel, str, str]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise LearningError(f"Cannot read model {path}: {e}") from e
    means = np.asarray(data['means'], dtype=np.float64)
    std = Standardizer(
        means=means,
        stds=np.asarray(data['stds'], dtype=np.float64),
        constant=np.asarray(data.get('constant', [False] * means.size), dtype=bool),
    )
    model = LogRegModel(
        weights=np.asarray(data['weights'], dtype=np.float64),
        bias=data['bias'],
        lam=data['lambda'],
        converged=data.get('converged', False),
        n_iters=data.get('n_iters', 0),
    )
    return std, model, data.get('descriptor', ''), data.get('roi_tag', '')


# not a pytest test despite the name
test_external.__test__ = False
