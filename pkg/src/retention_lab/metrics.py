"""Binary classification metrics: confusion-based rates, ROC AUC and log loss."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from retention_lab.errors import DataError

PROBA_CLAMP = 1e-15


def _pair(labels, values) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=np.int64).ravel()
    v = np.asarray(values, dtype=np.float64).ravel()
    if y.shape != v.shape:
        raise DataError(f"length mismatch: {y.size} labels vs {v.size} predictions")
    return y, v


def confusion(labels, probas, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) with a positive prediction iff ``proba >= threshold``."""
    y, p = _pair(labels, probas)
    pred = p >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return tp, fp, fn, tn


def accuracy(cm) -> float:
    tp, fp, fn, tn = cm
    n = tp + fp + fn + tn
    if n == 0:
        raise DataError("accuracy of an empty sample")
    return (tp + tn) / n


def precision(cm) -> float:
    tp, fp, _, _ = cm
    return tp / (tp + fp) if tp + fp else 0.0


def recall(cm) -> float:
    tp, _, fn, _ = cm
    return tp / (tp + fn) if tp + fn else 0.0


def f1(cm) -> float:
    p, r = precision(cm), recall(cm)
    return 2 * p * r / (p + r) if p + r else 0.0


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC from tie-averaged ranks.

    Ranks are kept doubled so the U statistic is an exact integer and ties
    count one half.
    """
    y, s = _pair(labels, scores)
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC AUC needs both classes present")
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    ends = np.r_[starts[1:], s.size]
    # doubled average 1-based rank of a tie group spanning [start, end)
    doubled = np.repeat(starts + ends + 1, ends - starts)
    ranks2 = np.empty(s.size, dtype=np.int64)
    ranks2[order] = doubled
    u2 = int(ranks2[y == 1].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def log_loss(labels, probas) -> float:
    y, p = _pair(labels, probas)
    if y.size == 0:
        raise DataError("log loss of an empty sample")
    p = np.clip(p, PROBA_CLAMP, 1.0 - PROBA_CLAMP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float | None
    log_loss: float
    confusion: tuple[int, int, int, int]
    threshold: float = 0.5

    def to_dict(self) -> dict:
        tp, fp, fn, tn = self.confusion
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "roc_auc": self.roc_auc,
            "log_loss": self.log_loss,
            "threshold": self.threshold,
            "confusion": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def render(self) -> str:
        auc = "n/a (single class)" if self.roc_auc is None else f"{self.roc_auc:.4f}"
        tp, fp, fn, tn = self.confusion
        return "\n".join([
            f"Accuracy:  {self.accuracy:.4f}",
            f"Precision: {self.precision:.4f}",
            f"Recall:    {self.recall:.4f}",
            f"F1 Score:  {self.f1:.4f}",
            f"ROC AUC:   {auc}",
            f"Log Loss:  {self.log_loss:.4f}",
            f"threshold {self.threshold}  tp={tp} fp={fp} fn={fn} tn={tn}",
        ])


def evaluate(labels, probas, threshold: float = 0.5) -> EvalReport:
    """All six metrics. ROC AUC is ``None`` when only one class is present."""
    y, p = _pair(labels, probas)
    cm = confusion(y, p, threshold)
    try:
        auc = roc_auc(y, p)
    except DataError:
        auc = None
    return EvalReport(
        accuracy=accuracy(cm),
        precision=precision(cm),
        recall=recall(cm),
        f1=f1(cm),
        roc_auc=auc,
        log_loss=log_loss(y, p),
        confusion=cm,
        threshold=threshold,
    )
