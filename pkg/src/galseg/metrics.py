"""Pixel confusion counts, the five segmentation metrics, and k-fold evaluation.

Pothole is the positive class. Within a fold the confusion counts of all
samples are summed before metrics are computed; the reported means are
plain arithmetic means of the per-fold rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

METRIC_KEYS = ("pre", "rec", "acc", "fsc", "iou")
MEAN_KEYS = ("mPre", "mRec", "mAcc", "mFsc", "mIoU")
STANDARD_FOLD_SIZES = (13, 9, 5, 4, 3, 2, 3, 3, 2, 2, 2, 5)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred: np.ndarray, label: np.ndarray) -> ConfusionCounts:
    pred, label = np.asarray(pred), np.asarray(label)
    if pred.shape != label.shape:
        raise ValueError(f"prediction {pred.shape} and label {label.shape} differ in shape")
    p, t = pred.astype(bool), label.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


@dataclass(frozen=True)
class MetricRow:
    pre: float
    rec: float
    acc: float
    fsc: float
    iou: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.pre, self.rec, self.acc, self.fsc, self.iou)


def metrics_from_counts(c: ConfusionCounts) -> MetricRow:
    """Precision, recall, accuracy, F-score and IoU.

    A metric whose denominator is zero is 1 when tp = fp = fn = 0 and 0
    otherwise.
    """
    if c.total <= 0:
        raise ValueError("cannot compute metrics over zero pixels")
    empty = 1.0 if c.tp == c.fp == c.fn == 0 else 0.0

    def ratio(num, den):
        return num / den if den else empty

    pre = ratio(c.tp, c.tp + c.fp)
    rec = ratio(c.tp, c.tp + c.fn)
    fsc = ratio(2 * pre * rec, pre + rec)
    return MetricRow(pre, rec, (c.tp + c.tn) / c.total, fsc, ratio(c.tp, c.tp + c.fp + c.fn))


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    counts: list[ConfusionCounts] = field(default_factory=list)

    def means(self) -> dict[str, float]:
        if not self.rows:
            raise ValueError("report has no folds")
        arr = np.array([r.as_tuple() for r in self.rows], dtype=np.float64)
        return dict(zip(MEAN_KEYS, (float(v) for v in arr.mean(axis=0))))

    def to_text(self, header: Sequence[str] = ()) -> str:
        """Tab-delimited report: ``#`` header lines, one row per fold, then the means."""
        lines = [f"# {h}" for h in header]
        lines.append("\t".join(("fold",) + METRIC_KEYS))
        for i, r in enumerate(self.rows):
            lines.append("\t".join([str(i)] + [f"{v:.3f}" for v in r.as_tuple()]))
        lines.append("")
        for k, v in self.means().items():
            lines.append(f"{k}\t{v:.3f}")
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, float]:
    """Summary keys of a report produced by :meth:`MetricReport.to_text`."""
    out = {}
    for line in text.splitlines():
        parts = line.split("\t")
        if len(parts) == 2 and parts[0] in MEAN_KEYS:
            out[parts[0]] = float(parts[1])
    return out


def evaluate_fold(predictor: Callable, samples: Sequence) -> ConfusionCounts:
    total = ConfusionCounts()
    for s in samples:
        total = total + confusion(predictor(s), s.label)
    return total


def make_folds(n: int, spec: int | Sequence[int]) -> list[list[int]]:
    """Contiguous folds over ``range(n)``: ``spec`` is a fold count or explicit fold sizes."""
    if isinstance(spec, int):
        if not 1 <= spec <= n:
            raise ValueError(f"cannot split {n} samples into {spec} folds")
        sizes = [n // spec + (1 if i < n % spec else 0) for i in range(spec)]
    else:
        sizes = list(spec)
    if sum(sizes) != n or any(s < 1 for s in sizes):
        raise ValueError(f"fold sizes {sizes} do not partition {n} samples")
    bounds = np.cumsum([0] + sizes)
    return [list(range(int(a), int(b))) for a, b in zip(bounds[:-1], bounds[1:])]


def kfold_run(samples: Sequence, folds: Sequence[Sequence[int]], fit: Callable) -> MetricReport:
    """Train on all other folds, evaluate on each held-out fold in index order.

    ``fit(train_samples, fold_index)`` returns a predictor mapping a sample
    to a binary mask.
    """
    seen: set[int] = set()
    for i, f in enumerate(folds):
        if not f:
            raise ValueError(f"fold {i} is empty")
        if seen & set(f):
            raise ValueError(f"fold {i} overlaps an earlier fold")
        seen |= set(f)
    if seen != set(range(len(samples))):
        raise ValueError("folds do not cover the sample list")
    report = MetricReport()
    for i, f in enumerate(folds):
        held = set(f)
        train_set = [s for j, s in enumerate(samples) if j not in held]
        predictor = fit(train_set, i)
        counts = evaluate_fold(predictor, [samples[j] for j in f])
        report.counts.append(counts)
        report.rows.append(metrics_from_counts(counts))
    return report
