"""Confusion-matrix metrics and prediction-confidence statistics."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError

SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # K x K ints, rows = true class, columns = predicted class

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class Confidence:
    """Max-softmax statistics split by correctness (NaN when a group is empty)."""

    mean_correct: float
    median_correct: float
    mean_wrong: float
    median_wrong: float
    n_correct: int
    n_wrong: int


@dataclass
class MetricsReport:
    accuracy: float
    average_accuracy: float
    macro_f1: float
    per_class: list[ClassMetrics]
    confidence: Confidence | None
    confusion: ConfusionMatrix
    empty_classes: list[int] = field(default_factory=list)

    def scalars(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "average_accuracy": self.average_accuracy, "macro_f1": self.macro_f1}


def _rows(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be B x K, got {arr.shape}")
    if np.any(arr < -SIMPLEX_TOL) or np.any(np.abs(arr.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise ArgumentError(f"{name}: rows must lie on the probability simplex")
    return arr


def build_confusion(preds, labels) -> ConfusionMatrix:
    """Argmax both sides (ties go to the lowest index) and count."""
    p = _rows("preds", preds)
    y = _rows("labels", labels)
    if p.shape != y.shape:
        raise DimensionError(f"preds {p.shape} vs labels {y.shape}")
    k = p.shape[1]
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (y.argmax(axis=1), p.argmax(axis=1)), 1)
    return ConfusionMatrix(counts)


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def confidence_stats(probs, labels) -> Confidence:
    p = np.asarray(probs, dtype=np.float64)
    correct = p.argmax(axis=1) == np.asarray(labels).argmax(axis=1)
    conf = p.max(axis=1)

    def stats(v):
        return (float(v.mean()), float(np.median(v))) if v.size else (float("nan"), float("nan"))

    mc, medc = stats(conf[correct])
    mw, medw = stats(conf[~correct])
    return Confidence(mc, medc, mw, medw, int(correct.sum()), int((~correct).sum()))


def compute_report(cm: ConfusionMatrix, probs=None, labels=None) -> MetricsReport:
    counts = np.asarray(cm.counts, dtype=np.int64)
    if counts.sum() == 0:
        raise ArgumentError("confusion matrix is empty")
    tp = np.diag(counts).astype(np.float64)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    recall = _safe_div(tp, support.astype(np.float64))
    precision = _safe_div(tp, predicted.astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    empty = [int(i) for i in np.flatnonzero(support == 0)]
    if empty:
        warnings.warn(f"classes {empty} have no samples; counted with recall 0", RuntimeWarning, stacklevel=2)
    per_class = [ClassMetrics(float(p), float(r), float(f), int(s))
                 for p, r, f, s in zip(precision, recall, f1, support)]
    conf = confidence_stats(probs, labels) if probs is not None and labels is not None else None
    return MetricsReport(
        accuracy=float(tp.sum() / counts.sum()),
        average_accuracy=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class=per_class,
        confidence=conf,
        confusion=cm,
        empty_classes=empty,
    )


def evaluate(probs, labels) -> MetricsReport:
    return compute_report(build_confusion(probs, labels), probs, labels)


# ---- serialization --------------------------------------------------------

def report_rows(report: MetricsReport, class_names=None) -> list[list[str]]:
    names = class_names or [str(i) for i in range(len(report.per_class))]
    rows = [["class", "precision", "recall", "f1", "support"]]
    for name, c in zip(names, report.per_class):
        rows.append([name, f"{100 * c.precision:.2f}", f"{100 * c.recall:.2f}", f"{100 * c.f1:.2f}", str(c.support)])
    return rows


def report_csv(report: MetricsReport, class_names=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in report.scalars().items():
        w.writerow([k, repr(v)])
    if report.confidence is not None:
        c = report.confidence
        for k in ("mean_correct", "median_correct", "mean_wrong", "median_wrong", "n_correct", "n_wrong"):
            w.writerow([f"confidence_{k}", repr(getattr(c, k))])
    w.writerow([])
    w.writerows(report_rows(report, class_names))
    return buf.getvalue()


def format_table(rows: list[list[str]]) -> str:
    """Left-aligned first column, right-aligned rest, widths fitted to content."""
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(len(rows[0]))]
    lines = []
    for n, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if n == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)


def format_report(report: MetricsReport, class_names=None) -> str:
    out = [
        format_table([["Accuracy", "F1-score", "Aver. Acc."],
                      [f"{100 * report.accuracy:.2f}", f"{100 * report.macro_f1:.2f}",
                       f"{100 * report.average_accuracy:.2f}"]]),
        "",
        format_table(report_rows(report, class_names)),
    ]
    if report.confidence is not None:
        c = report.confidence
        out += ["", format_table([
            ["Confidence", "mean correct", "mean wrong", "median correct", "median wrong"],
            ["max-softmax", f"{100 * c.mean_correct:.2f}", f"{100 * c.mean_wrong:.2f}",
             f"{100 * c.median_correct:.2f}", f"{100 * c.median_wrong:.2f}"],
        ])]
    if report.empty_classes:
        out += ["", f"warning: no eval samples for classes {report.empty_classes}"]
    return "\n".join(out) + "\n"
