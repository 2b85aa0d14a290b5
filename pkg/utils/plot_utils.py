"""ROC and precision-recall curves as standalone SVG files"""
import os
from typing import Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed hash salt keeps the SVG bytes identical across runs
matplotlib.rcParams['svg.hashsalt'] = 'texroi'
matplotlib.rcParams['svg.fonttype'] = 'none'

Curve = Sequence[Tuple[float, float]]


def _save(fig, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata={'Date': None})
    plt.close(fig)


def plot_roc(curve: Curve, auc: float, ci: Tuple[float, float], path: str, title: str = "") -> None:
    fpr, tpr = zip(*curve)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(fpr, tpr, lw=2, label=f"AUC {auc:.3f} [{ci[0]:.3f}, {ci[1]:.3f}]")
    ax.plot([0, 1], [0, 1], ls="--", color="grey", lw=1)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title or "ROC curve")
    ax.legend(loc="lower right")
    _save(fig, path)


def plot_pr(curve: Curve, ap: float, ci: Tuple[float, float], prevalence: float,
            path: str, title: str = "") -> None:
    recall, precision = zip(*curve)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.step(recall, precision, where="post", lw=2, label=f"AP {ap:.3f} [{ci[0]:.3f}, {ci[1]:.3f}]")
    ax.axhline(prevalence, ls="--", color="grey", lw=1)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_title(title or "Precision-recall curve")
    ax.legend(loc="lower left")
    _save(fig, path)
