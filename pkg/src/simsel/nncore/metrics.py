"""Classification metrics computed from integer label arrays."""

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes):
    """Counts with true labels on rows and predictions on columns."""
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


def accuracy_from_confusion(m):
    m = np.asarray(m)
    total = m.sum()
    if total == 0:
        return 0.0
    return float(np.trace(m) / total)


def macro_f1_from_confusion(m):
    """Unweighted mean of per-class F1; empty classes contribute 0."""
    m = np.asarray(m, dtype=np.float64)
    tp = np.diag(m)
    fp = m.sum(axis=0) - tp
    fn = m.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1.0), 0.0)
    return float(f1.mean())


def accuracy(y_true, y_pred):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        return 0.0
    return float((y_true == y_pred).mean())


def macro_f1(y_true, y_pred, n_classes):
    return macro_f1_from_confusion(confusion_matrix(y_true, y_pred, n_classes))
