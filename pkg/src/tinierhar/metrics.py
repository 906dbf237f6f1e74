"""Classification metrics: confusion matrix, macro F1, relative variation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import UsageError

F1_CONVENTION = (
    "macro F1 = unweighted mean over all n_classes; a class with P+R=0 "
    "(including classes absent from both predictions and labels) scores 0"
)


def _check(preds, labels, n_classes: int):
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise UsageError(f"preds has {preds.size} entries but labels has {labels.size}")
    if n_classes < 1:
        raise UsageError(f"n_classes must be positive, got {n_classes}")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise UsageError(f"{name} contain values outside [0, {n_classes})")
    return preds, labels


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """Counts with rows indexed by true label and columns by prediction."""
    preds, labels = _check(preds, labels, n_classes)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def per_class_scores(cm: np.ndarray):
    """Precision, recall and F1 per class; 0 wherever a denominator is 0."""
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_pos > 0, tp / pred_pos, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return precision, recall, f1


def macro_f1(preds, labels, n_classes: int) -> float:
    _, _, f1 = per_class_scores(confusion_matrix(preds, labels, n_classes))
    return float(f1.mean())


@dataclass
class MetricsReport:
    macro_f1: float
    precision: List[float]
    recall: List[float]
    f1: List[float]
    support: List[int]
    confusion: List[List[int]]

    @property
    def n_classes(self) -> int:
        return len(self.f1)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["convention"] = F1_CONVENTION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d[k] for k in ("macro_f1", "precision", "recall", "f1", "support", "confusion")})


def evaluate_predictions(preds, labels, n_classes: int) -> MetricsReport:
    cm = confusion_matrix(preds, labels, n_classes)
    p, r, f1 = per_class_scores(cm)
    return MetricsReport(
        float(f1.mean()),
        p.tolist(),
        r.tolist(),
        f1.tolist(),
        cm.sum(axis=1).tolist(),
        cm.tolist(),
    )


def relative_variation(f1_other: float, f1_reference: float) -> Optional[float]:
    """``(f1_other - f1_reference) / f1_reference``; ``None`` marks an undefined cell."""
    if f1_reference == 0 or not np.isfinite(f1_reference) or not np.isfinite(f1_other):
        return None
    return (f1_other - f1_reference) / f1_reference


def mean_std(values: Sequence[float]):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
