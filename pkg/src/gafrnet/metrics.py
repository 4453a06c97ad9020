"""AUC-ROC, balanced accuracy, F1, Cohen's kappa, sensitivity and specificity.

Binary tasks treat class 1 as positive.  Multiclass AUC, sensitivity and
specificity are macro one-vs-rest averages; multiclass F1 is macro over the
classes seen in labels or predictions.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


def confusion_matrix(pred, labels, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    ranks = rankdata(scores)  # average ranks: ties count half
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_roc(scores, labels, num_classes: int) -> float:
    """Mann-Whitney AUC; macro one-vs-rest when there are more than two classes.

    ``scores`` is either a 1-D positive-class score (binary) or an N x C
    matrix of class scores.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if num_classes == 2:
        s = scores[:, 1] if scores.ndim == 2 else scores
        pos = labels == 1
        if pos.all() or not pos.any():
            raise ValueError("binary AUC needs at least one sample of each class")
        return _binary_auc(s, pos)
    if scores.ndim != 2 or scores.shape[1] != num_classes:
        raise ValueError("multiclass AUC needs an N x num_classes score matrix")
    aucs = []
    for c in range(num_classes):
        pos = labels == c
        if pos.all() or not pos.any():
            warnings.warn(f"class {c} skipped in AUC: no positives or no negatives", stacklevel=2)
            continue
        aucs.append(_binary_auc(scores[:, c], pos))
    if not aucs:
        raise ValueError("no class has both positives and negatives")
    return float(np.mean(aucs))


def balanced_accuracy(pred, labels, num_classes: int) -> float:
    cm = confusion_matrix(pred, labels, num_classes)
    support = cm.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(cm)[present] / support[present]))


def _f1_per_class(cm: np.ndarray, c: int) -> float:
    tp = cm[c, c]
    fp = cm[:, c].sum() - tp
    fn = cm[c, :].sum() - tp
    den = 2 * tp + fp + fn
    return 2.0 * tp / den if den else 0.0


def f1(pred, labels, num_classes: int) -> float:
    cm = confusion_matrix(pred, labels, num_classes)
    if num_classes == 2:
        return float(_f1_per_class(cm, 1))
    seen = (cm.sum(axis=0) + cm.sum(axis=1)) > 0
    return float(np.mean([_f1_per_class(cm, c) for c in np.flatnonzero(seen)]))


def kappa(pred, labels, num_classes: int | None = None) -> float:
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    k = num_classes if num_classes is not None else int(max(pred.max(), labels.max())) + 1
    cm = confusion_matrix(pred, labels, k)
    # (p_o - p_e) / (1 - p_e) scaled by n^2 and kept in exact integers, so
    # the only rounding is the final division
    n = int(cm.sum())
    chance = sum(int(r) * int(c) for r, c in zip(cm.sum(axis=1), cm.sum(axis=0)))
    num = n * int(np.trace(cm)) - chance
    den = n * n - chance
    if den == 0:  # p_e = 1: both sides constant on the same class
        return 1.0 if num == 0 else 0.0
    return num / den


def sens_spec(pred, labels, num_classes: int) -> tuple[float, float]:
    cm = confusion_matrix(pred, labels, num_classes)
    n = cm.sum()

    def rates(c):
        tp = cm[c, c]
        fn = cm[c, :].sum() - tp
        fp = cm[:, c].sum() - tp
        tn = n - tp - fn - fp
        sens = tp / (tp + fn) if tp + fn else np.nan
        spec = tn / (tn + fp) if tn + fp else np.nan
        return sens, spec

    if num_classes == 2:
        sens, spec = rates(1)
        return float(np.nan_to_num(sens)), float(np.nan_to_num(spec))
    present = np.flatnonzero(cm.sum(axis=1) > 0)
    pairs = np.array([rates(c) for c in present], dtype=np.float64)
    return float(np.nanmean(pairs[:, 0])), float(np.nanmean(pairs[:, 1]))


@dataclass
class EvalReport:
    auc_roc: float
    balanced_accuracy: float
    f1: float
    kappa: float
    sensitivity: float
    specificity: float
    confusion_matrix: list[list[int]]
    per_class_recall: list[float | None]

    SCALARS = ("auc_roc", "balanced_accuracy", "f1", "kappa", "sensitivity", "specificity")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(probs, pred, labels, num_classes: int) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    cm = confusion_matrix(pred, labels, num_classes)
    support = cm.sum(axis=1)
    recall = [float(cm[c, c] / support[c]) if support[c] else None for c in range(num_classes)]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            auc = auc_roc(probs, labels, num_classes)
    except ValueError:
        auc = float("nan")
    sens, spec = sens_spec(pred, labels, num_classes)
    return EvalReport(
        auc_roc=auc,
        balanced_accuracy=balanced_accuracy(pred, labels, num_classes),
        f1=f1(pred, labels, num_classes),
        kappa=kappa(pred, labels, num_classes),
        sensitivity=sens,
        specificity=spec,
        confusion_matrix=cm.tolist(),
        per_class_recall=recall,
    )


def aggregate(reports: list[EvalReport]) -> dict[str, tuple[float, float]]:
    """Mean and population std of every scalar metric across runs."""
    out = {}
    for name in EvalReport.SCALARS:
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        out[name] = (float(vals.mean()), float(vals.std()))
    return out
