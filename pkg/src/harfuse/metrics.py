"""Frame accuracy and segmental F1 for frame-wise action labels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_THRESHOLDS = (0.1, 0.25, 0.5)


class Segment(NamedTuple):
    label: int
    start: int
    end: int  # inclusive

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def f1(self) -> float:
        return f1_from_counts(self.tp, self.fp, self.fn)

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn}


def _check_lengths(pred, true):
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(f"label streams differ in length: {pred.shape} vs {true.shape}")
    return pred, true


def frame_accuracy(pred_labels, true_labels) -> float:
    pred, true = _check_lengths(pred_labels, true_labels)
    if pred.size == 0:
        raise ValueError("frame_accuracy of empty streams is undefined")
    return float(np.count_nonzero(pred == true)) / pred.size


def labels_to_segments(labels: Sequence[int]) -> list[Segment]:
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts - 1, [labels.size - 1]))
    return [Segment(labels[s].item(), int(s), int(e)) for s, e in zip(starts, ends)]


def iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    return inter / (max(a.end, b.end) - min(a.start, b.start) + 1)


def match_segments(
    pred: Sequence[Segment], true: Sequence[Segment], threshold: float
) -> ConfusionCounts:
    """Greedy matching in prediction order.

    Each predicted segment takes the unmatched same-label ground-truth
    segment with the highest IoU (earliest start on ties) if that IoU
    reaches ``threshold``; otherwise it is a false positive.
    """
    # ``true`` is in start order, so a strict ">" keeps the earliest start on ties
    free: dict = {}
    for label, s, e in true:
        free.setdefault(label, []).append((s, e))
    tp = fp = 0
    for label, ps, pe in pred:
        cands = free.get(label)
        best, best_iou = -1, -1.0
        if cands:
            for j, (s, e) in enumerate(cands):
                inter = (pe if pe < e else e) - (ps if ps > s else s) + 1
                v = inter / ((pe if pe > e else e) - (ps if ps < s else s) + 1) if inter > 0 else 0.0
                if v > best_iou:
                    best, best_iou = j, v
        if best >= 0 and best_iou >= threshold:
            del cands[best]
            tp += 1
        else:
            fp += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=len(true) - tp)


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = tp + 0.5 * (fn + fp)
    return 1.0 if denom == 0 else tp / denom


def segmental_f1(pred_labels, true_labels, threshold: float = 0.5) -> tuple[ConfusionCounts, float]:
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    pred, true = _check_lengths(pred_labels, true_labels)
    counts = match_segments(labels_to_segments(pred), labels_to_segments(true), threshold)
    return counts, counts.f1()


def threshold_key(t: float) -> str:
    return f"{t:.2f}"


@dataclass
class MetricsReport:
    """Corpus metrics; F1 is computed once from counts summed over sequences."""

    correct: int = 0
    total: int = 0
    counts: dict[float, ConfusionCounts] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def f1_at(self) -> dict[float, float]:
        return {t: c.f1() for t, c in self.counts.items()}

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": {threshold_key(t): c.f1() for t, c in sorted(self.counts.items())},
            "counts": {
                "frames": {"correct": self.correct, "total": self.total},
                "segments": {threshold_key(t): c.to_json() for t, c in sorted(self.counts.items())},
            },
        }


def evaluate_streams(
    pairs: Iterable[tuple[np.ndarray, np.ndarray]],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> MetricsReport:
    """Aggregate (pred, true) label streams into one report."""
    report = MetricsReport(counts={t: ConfusionCounts() for t in thresholds})
    for pred, true in pairs:
        pred, true = _check_lengths(pred, true)
        report.correct += int(np.count_nonzero(pred == true))
        report.total += int(pred.size)
        ps, ts = labels_to_segments(pred), labels_to_segments(true)
        for t in thresholds:
            report.counts[t] = report.counts[t] + match_segments(ps, ts, t)
    return report
