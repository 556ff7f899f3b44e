"""Classification metrics: accuracy, per-class precision/recall/F1,
confusion matrix and Mann-Whitney ROC-AUC."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeMismatch, SingleClass


@dataclass
class MetricsReport:
    classes: list[str]
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    roc_auc: float | None
    class_roc_auc: list[float | None]
    confusion: list[list[int]]
    zero_division: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(sum(self.support))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def _check(labels, preds) -> tuple[np.ndarray, np.ndarray]:
    labels, preds = np.asarray(labels), np.asarray(preds)
    if labels.shape != preds.shape or labels.ndim != 1:
        raise ShapeMismatch(f"labels {labels.shape} vs predictions {preds.shape}")
    return labels.astype(int), preds.astype(int)


def metric_accuracy(labels, preds) -> float:
    labels, preds = _check(labels, preds)
    return float(np.mean(labels == preds)) if len(labels) else 0.0


def metric_confusion(labels, preds, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    labels, preds = _check(labels, preds)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    return conf


def metric_prf1(labels, preds, n_classes: int):
    """One-vs-rest precision, recall, F1 and support per class.

    A zero denominator yields 0 and a flag such as ``"precision:2"``.
    """
    conf = metric_confusion(labels, preds, n_classes)
    tp = np.diag(conf).astype(np.float64)
    predicted = conf.sum(axis=0)
    actual = conf.sum(axis=1)
    flags: list[str] = []
    precision, recall, f1 = np.zeros(n_classes), np.zeros(n_classes), np.zeros(n_classes)
    for k in range(n_classes):
        if predicted[k]:
            precision[k] = tp[k] / predicted[k]
        else:
            flags.append(f"precision:{k}")
        if actual[k]:
            recall[k] = tp[k] / actual[k]
        else:
            flags.append(f"recall:{k}")
        if precision[k] + recall[k] > 0:
            f1[k] = 2 * precision[k] * recall[k] / (precision[k] + recall[k])
        else:
            flags.append(f"f1:{k}")
    return precision, recall, f1, actual, flags


def metric_roc_auc(labels, scores) -> float:
    """P(random positive outscores random negative), ties counting one half.

    Uses average ranks; twice the Mann-Whitney U is an integer, so the result
    is a single exact division.
    """
    labels = np.asarray(labels).astype(int)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ShapeMismatch(f"labels {labels.shape} vs scores {scores.shape}")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both positive and negative samples")
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    last = np.cumsum(counts)
    first = last - counts + 1
    twice_rank = (first + last)[inverse.ravel()]
    twice_u = int(twice_rank[pos].sum()) - n_pos * (n_pos + 1)
    return twice_u / (2 * n_pos * n_neg)


def macro_roc_auc(labels, probs) -> tuple[float, list[float | None]]:
    """Unweighted mean of one-vs-rest AUCs over classes that have both
    positives and negatives."""
    labels = np.asarray(labels).astype(int)
    probs = np.asarray(probs, dtype=np.float64)
    per: list[float | None] = []
    for k in range(probs.shape[1]):
        try:
            per.append(metric_roc_auc((labels == k).astype(int), probs[:, k]))
        except SingleClass:
            per.append(None)
    valid = [a for a in per if a is not None]
    if not valid:
        raise SingleClass("no class has both positives and negatives")
    return float(np.mean(valid)), per


def build_report(labels, probs, classes: Sequence[str]) -> MetricsReport:
    labels = np.asarray(labels).astype(int)
    probs = np.asarray(probs, dtype=np.float64)
    preds = probs.argmax(axis=1)
    k = len(classes)
    precision, recall, f1, support, flags = metric_prf1(labels, preds, k)
    try:
        if k == 2:
            auc = metric_roc_auc(labels, probs[:, 1])
            per = [auc, auc]
        else:
            auc, per = macro_roc_auc(labels, probs)
    except SingleClass:
        auc, per = None, [None] * k
    return MetricsReport(
        classes=list(classes), accuracy=metric_accuracy(labels, preds),
        precision=precision.tolist(), recall=recall.tolist(), f1=f1.tolist(),
        support=[int(s) for s in support], roc_auc=auc, class_roc_auc=per,
        confusion=metric_confusion(labels, preds, k).tolist(), zero_division=flags)


def _fmt(v) -> str:
    return "--" if v is None else f"{v:.4f}"


def report_table(report: MetricsReport, title: str = "Class") -> str:
    """Plain-text table with the columns Precision, Recall, F1-Score, ROC AUC, n."""
    header = f"{title:<12} {'Precision':>10} {'Recall':>10} {'F1-Score':>10} {'ROC AUC':>10} {'n':>7}"
    lines = [header, "-" * len(header)]
    for i, name in enumerate(report.classes):
        lines.append(f"{name:<12} {_fmt(report.precision[i]):>10} {_fmt(report.recall[i]):>10} "
                     f"{_fmt(report.f1[i]):>10} {_fmt(report.class_roc_auc[i]):>10} "
                     f"{report.support[i]:>7}")
    lines.append("-" * len(header))
    lines.append(f"{'Overall':<12} {'--':>10} {'--':>10} {'--':>10} {_fmt(report.roc_auc):>10} "
                 f"{report.n:>7}")
    lines.append(f"{'Accuracy':<12} {_fmt(report.accuracy):>10}")
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict[str, dict[str, float | int | None]]:
    """Inverse of :func:`report_table` for the per-class rows."""
    rows = {}
    for line in text.splitlines()[2:]:
        parts = line.split()
        if len(parts) != 6 or parts[0] in ("Overall",):
            continue
        def num(s):
            return None if s == "--" else float(s)
        rows[parts[0]] = {"precision": num(parts[1]), "recall": num(parts[2]),
                          "f1": num(parts[3]), "roc_auc": num(parts[4]), "n": int(parts[5])}
    return rows
