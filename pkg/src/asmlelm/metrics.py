"""Confusion matrices and the OA / AA / kappa accuracy summary."""

import csv
import io

import numpy as np


def confusion(truth, pred, n_classes: int) -> np.ndarray:
    """Counts with rows indexed by true class and columns by predicted class."""
    t = np.asarray(truth, dtype=np.int64).ravel()
    p = np.asarray(pred, dtype=np.int64).ravel()
    if t.size != p.size:
        raise ValueError(f"truth has {t.size} entries, prediction {p.size}")
    for name, v in (("truth", t), ("prediction", p)):
        if v.size and (v.min() < 1 or v.max() > n_classes):
            raise ValueError(f"{name} labels must lie in 1..{n_classes}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t - 1, p - 1), 1)
    return cm


def _total(cm):
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    return total


def oa(cm) -> float:
    cm = np.asarray(cm)
    return float(np.trace(cm) / _total(cm))


def per_class_accuracy(cm) -> np.ndarray:
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    empty = np.flatnonzero(rows == 0)
    if empty.size:
        raise ValueError(f"class {empty[0] + 1} has no reference samples")
    return np.diag(cm) / rows


def aa(cm) -> float:
    return float(per_class_accuracy(cm).mean())


def kappa(cm) -> float:
    """Cohen's kappa ``(p_o - p_e) / (1 - p_e)``."""
    cm = np.asarray(cm, dtype=np.float64)
    total = _total(cm)
    p_o = np.trace(cm) / total
    p_e = float(cm.sum(axis=1) @ cm.sum(axis=0)) / total ** 2
    if np.isclose(p_e, 1.0, rtol=0.0, atol=1e-15):
        if np.isclose(p_o, 1.0, rtol=0.0, atol=1e-15):
            return 1.0
        raise ValueError("kappa undefined: chance agreement is 1")
    return float((p_o - p_e) / (1.0 - p_e))


def report_csv(cm) -> str:
    """Per-class accuracy rows, then OA, AA and k, all in percent."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "accuracy"])
    for k, acc in enumerate(per_class_accuracy(cm), start=1):
        w.writerow([k, f"{100 * acc:.2f}"])
    w.writerow(["OA", f"{100 * oa(cm):.2f}"])
    w.writerow(["AA", f"{100 * aa(cm):.2f}"])
    w.writerow(["k", f"{100 * kappa(cm):.2f}"])
    return buf.getvalue()


def confusion_csv(cm) -> str:
    cm = np.asarray(cm)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + [str(k) for k in range(1, cm.shape[1] + 1)])
    for k, row in enumerate(cm, start=1):
        w.writerow([k] + [int(c) for c in row])
    return buf.getvalue()
