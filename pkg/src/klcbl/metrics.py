"""Confusion-matrix metrics with support-weighted multi-class averaging.

Weighted recall is computed from the pooled counts (sum of true positives
over total), which makes it equal to accuracy exactly, not merely within
rounding; that equality is a contract other code asserts. Any metric whose
denominator is zero reports 0 and the affected class is flagged in the
report. Emitted tables carry 7 decimal places.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import no_grad


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. empty matrix)."""


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64; rows = true class, columns = predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise MetricError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise MetricError("confusion matrix entries must be nonnegative")

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, c: int) -> int:
        return int(self.counts[c].sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(preds, labels, num_classes: int = 3) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(preds, labels):
        if not (0 <= t < num_classes) or not (0 <= p < num_classes):
            raise MetricError(f"class out of range: pred={p}, label={t}, classes={num_classes}")
        counts[t, p] += 1
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("accuracy is undefined on an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def per_class_prf(cm: ConfusionMatrix, c: int):
    """One-vs-rest precision/recall/F1 for class c; zero denominators give 0."""
    tp = int(cm.counts[c, c])
    fp = int(cm.counts[:, c].sum()) - tp
    fn = int(cm.counts[c].sum()) - tp
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def weighted_prf(cm: ConfusionMatrix):
    """Support-weighted mean of per-class metrics.

    Recall is folded to sum(TP)/total, which is algebraically the same
    weighted mean but exactly equal to accuracy in float arithmetic.
    """
    total = cm.total
    if total == 0:
        raise MetricError("weighted metrics are undefined on an empty confusion matrix")
    precision_sum = 0.0
    f1_sum = 0.0
    for c in range(cm.num_classes):
        p, _, f1 = per_class_prf(cm, c)
        support = cm.support(c)
        precision_sum += support * p
        f1_sum += support * f1
    recall = float(np.trace(cm.counts)) / total
    return precision_sum / total, recall, f1_sum / total


def macro_prf(cm: ConfusionMatrix):
    """Unweighted mean over classes; not part of the reporting contract."""
    per = [per_class_prf(cm, c) for c in range(cm.num_classes)]
    return tuple(float(np.mean([m[i] for m in per])) for i in range(3))


@dataclass
class MetricsReport:
    confusion_matrix: ConfusionMatrix
    accuracy: float
    per_class: list  # (precision, recall, f1) per class
    support: list
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    average_loss: float
    zero_division_classes: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "acc": self.accuracy,
            "p": self.weighted_precision,
            "r": self.weighted_recall,
            "f1": self.weighted_f1,
            "avg_loss": self.average_loss,
            "per_class": [
                {
                    "class": c,
                    "precision": self.per_class[c][0],
                    "recall": self.per_class[c][1],
                    "f1": self.per_class[c][2],
                    "support": self.support[c],
                }
                for c in range(len(self.per_class))
            ],
            "confusion": self.counts_as_lists(),
        }

    def counts_as_lists(self):
        return [[int(v) for v in line] for line in self.confusion_matrix.counts]

    def summary_row(self):
        return (self.accuracy, self.weighted_precision, self.weighted_recall, self.weighted_f1)


def build_report(cm: ConfusionMatrix, average_loss_value: float) -> MetricsReport:
    per_class = []
    support = []
    degenerate = []
    for c in range(cm.num_classes):
        tp = int(cm.counts[c, c])
        fp = int(cm.counts[:, c].sum()) - tp
        fn = int(cm.counts[c].sum()) - tp
        if tp + fp == 0 or tp + fn == 0:
            degenerate.append(c)
        per_class.append(per_class_prf(cm, c))
        support.append(cm.support(c))
    wp, wr, wf1 = weighted_prf(cm)
    return MetricsReport(
        confusion_matrix=cm,
        accuracy=accuracy(cm),
        per_class=per_class,
        support=support,
        weighted_precision=wp,
        weighted_recall=wr,
        weighted_f1=wf1,
        average_loss=average_loss_value,
        zero_division_classes=degenerate,
    )


def _loss_from_logits(logits: np.ndarray, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64)
    zmax = z.max()
    return float(np.log(np.exp(z - zmax).sum()) - (z[label] - zmax))


def average_loss(model, dataset) -> float:
    """Mean categorical cross-entropy over the dataset, no gradients."""
    if not dataset:
        raise MetricError("average_loss is undefined on an empty dataset")
    with no_grad():
        total = 0.0
        for ex in dataset:
            total += _loss_from_logits(model.logits(ex), ex.label)
    return total / len(dataset)


def evaluate_model(model, dataset, num_classes: int = 3) -> MetricsReport:
    """Predictions, confusion matrix, weighted metrics, and average loss in
    one pass over the dataset."""
    if not dataset:
        raise MetricError("cannot evaluate on an empty dataset")
    preds = []
    labels = []
    total_loss = 0.0
    with no_grad():
        for ex in dataset:
            z = np.asarray(model.logits(ex), dtype=np.float64)
            preds.append(int(np.argmax(z)))
            labels.append(ex.label)
            total_loss += _loss_from_logits(z, ex.label)
    cm = confusion(preds, labels, num_classes)
    return build_report(cm, total_loss / len(dataset))


def format_metrics_table(rows: list, headers=("Model", "Acc", "P", "R", "F1")) -> str:
    """Aligned UTF-8 table; metric cells carry 7 decimals."""
    rendered = [tuple(headers)]
    for name, values in rows:
        rendered.append((name,) + tuple(f"{v:.7f}" for v in values))
    widths = [max(len(r[i]) for r in rendered) for i in range(len(headers))]
    lines = []
    for r in rendered:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(lines)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


__all__ = [
    "ConfusionMatrix",
    "MetricError",
    "MetricsReport",
    "accuracy",
    "average_loss",
    "build_report",
    "confusion",
    "evaluate_model",
    "format_metrics_table",
    "macro_prf",
    "per_class_prf",
    "softmax_probs",
    "weighted_prf",
]
