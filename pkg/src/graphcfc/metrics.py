"""Confusion-matrix metrics: accuracy, per-class precision/recall/F1, weighted F1."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def confusion_matrix(y_true, y_pred, num_classes) -> np.ndarray:
    """Counts with rows = truth, columns = prediction."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label/prediction length mismatch {y_true.shape} vs {y_pred.shape}")
    for name, y in (("truth", y_true), ("prediction", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise ValueError(f"{name} outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass(frozen=True)
class Metrics:
    confusion: np.ndarray
    labels: Sequence[str]

    def __post_init__(self):
        cm = np.asarray(self.confusion)
        if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or np.any(cm < 0):
            raise ValueError("confusion matrix must be square with non-negative counts")
        if len(self.labels) != cm.shape[0]:
            raise ValueError("one label name per class is required")

    @classmethod
    def from_predictions(cls, y_true, y_pred, labels):
        return cls(confusion_matrix(y_true, y_pred, len(labels)), tuple(labels))

    @property
    def total(self):
        return int(self.confusion.sum())

    @property
    def support(self):
        return self.confusion.sum(axis=1)

    @property
    def accuracy(self):
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def precision(self):
        return _safe_div(np.diag(self.confusion), self.confusion.sum(axis=0))

    @property
    def recall(self):
        return _safe_div(np.diag(self.confusion), self.support)

    @property
    def f1(self):
        tp = np.diag(self.confusion)
        fp = self.confusion.sum(axis=0) - tp
        fn = self.support - tp
        return _safe_div(2 * tp, 2 * tp + fp + fn)

    @property
    def weighted_f1(self):
        support = self.support
        return float((support * self.f1).sum() / support.sum()) if support.sum() else 0.0

    @property
    def macro_f1(self):
        return float(self.f1.mean())

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "per_class": [
                {"label": name, "precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
                for name, p, r, f, s in zip(self.labels, self.precision, self.recall, self.f1, self.support)
            ],
        }

    def table(self) -> str:
        """Per-class F1 followed by accuracy and weighted F1, in percent."""
        head = list(self.labels) + ["Accuracy", "wa-F1"]
        vals = [f"{100 * f:.2f}" for f in self.f1] + [f"{100 * self.accuracy:.2f}", f"{100 * self.weighted_f1:.2f}"]
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        line = lambda cells: " | ".join(c.rjust(w) for c, w in zip(cells, widths))
        return line(head) + "\n" + line(vals)
