"""Confusion-matrix metrics for closed-set and out-of-scope evaluation.

Conventions, pinned for reproducibility: rows are true classes, columns are
predictions; a class with zero support (or zero predictions) contributes 0 to
the macro averages and is still counted in the denominator; per-class F1 is
the harmonic mean of precision and recall, 0 when both are 0; argmax ties
break toward the lowest class index.

When an OOS class index is given: oid_acc is accuracy over all samples with
OOS as the extra class, f1_oos is that class's F1, f1_is is the macro F1 over
in-scope classes (computed from the full confusion matrix), and oid_f1 is the
macro F1 over all classes including OOS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError, LabelOutOfRangeError


@dataclass
class MetricsReport:
    confusion: np.ndarray
    acc: float
    macro_f1: float
    macro_precision: float
    macro_recall: float
    weighted_f1: float
    weighted_precision: float
    oid_acc: float | None = None
    f1_is: float | None = None
    f1_oos: float | None = None
    oid_f1: float | None = None

    def as_dict(self) -> dict:
        out = {
            "acc": self.acc,
            "wf": self.weighted_f1,
            "wp": self.weighted_precision,
            "f1": self.macro_f1,
            "prec": self.macro_precision,
            "rec": self.macro_recall,
        }
        for key in ("oid_acc", "f1_is", "f1_oos", "oid_f1"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


def predictions_from_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax per row; numpy argmax already breaks ties at the lowest index."""
    return np.argmax(logits, axis=-1)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have equal length")
    if y_true.size == 0:
        raise EmptyDatasetError("no samples to score")
    for arr, what in ((y_true, "label"), (y_pred, "prediction")):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise LabelOutOfRangeError(f"{what} outside [0, {n_classes})")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


def _per_class_prf(conf: np.ndarray):
    diag = np.diag(conf).astype(np.float64)
    col = conf.sum(axis=0).astype(np.float64)
    row = conf.sum(axis=1).astype(np.float64)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0)
    return precision, recall, f1


def report_from_confusion(conf: np.ndarray,
                          oos_index: int | None = None) -> MetricsReport:
    conf = np.asarray(conf, dtype=np.int64)
    total = int(conf.sum())
    if total == 0:
        raise EmptyDatasetError("empty confusion matrix")
    precision, recall, f1 = _per_class_prf(conf)
    support = conf.sum(axis=1) / total
    acc = float(np.trace(conf) / total)
    report = MetricsReport(
        confusion=conf,
        acc=acc,
        macro_f1=float(f1.mean()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        weighted_f1=float((support * f1).sum()),
        weighted_precision=float((support * precision).sum()),
    )
    if oos_index is not None:
        if not 0 <= oos_index < conf.shape[0]:
            raise LabelOutOfRangeError(f"oos_index {oos_index} outside confusion")
        in_scope = [c for c in range(conf.shape[0]) if c != oos_index]
        report.oid_acc = acc
        report.f1_is = float(f1[in_scope].mean())
        report.f1_oos = float(f1[oos_index])
        report.oid_f1 = float(f1.mean())
    return report


def evaluate_predictions(y_true, y_pred, n_classes: int,
                         oos_index: int | None = None) -> MetricsReport:
    return report_from_confusion(confusion_matrix(y_true, y_pred, n_classes),
                                 oos_index)
