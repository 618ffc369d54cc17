from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class: list  # recall per class, None where the class is absent from truth

    def to_dict(self):
        return {"oa": self.oa, "aa": self.aa, "kappa": self.kappa, "per_class": self.per_class}


def confusion_matrix(y_true, y_pred, K: int) -> np.ndarray:
    """K x K counts, rows = true class, cols = predicted, labels in 1..K."""
    y_true, y_pred = np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("true and predicted labels differ in length")
    if y_true.size == 0:
        raise ValueError("cannot score an empty prediction set")
    for v in (y_true, y_pred):
        if v.min() < 1 or v.max() > K:
            raise ValueError(f"labels must lie in 1..{K}")
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (y_true - 1, y_pred - 1), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    rows, cols = cm.sum(axis=1), cm.sum(axis=0)
    oa = np.trace(cm) / total
    present = rows > 0
    if not present.all():
        warnings.warn(f"classes {list(np.flatnonzero(~present) + 1)} absent from truth; excluded from AA")
    recall = np.where(present, np.diag(cm) / np.where(present, rows, 1), np.nan)
    aa = float(np.nanmean(recall))
    # (p_o - p_e) / (1 - p_e) with both scaled by n^2: integer counts, one rounding
    chance = int((rows * cols).sum())
    n2 = int(total) ** 2
    if chance < n2:
        kappa = (int(total) * int(np.trace(cm)) - chance) / (n2 - chance)
    else:
        kappa = 1.0 if oa == 1 else 0.0
    per_class = [None if np.isnan(r) else float(r) for r in recall]
    return MetricsReport(float(oa), aa, float(kappa), per_class)


def confusion_and_metrics(y_true, y_pred, K: int):
    cm = confusion_matrix(y_true, y_pred, K)
    return cm, metrics_from_confusion(cm)
