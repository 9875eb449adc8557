"""Segmentation metrics: frame accuracy, edit score, F1@k and total variance."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InsufficientData
from .seqcore import as_labels, segments_from_labels

OVERLAPS = (0.10, 0.25, 0.50)
REPORT_COLUMNS = ("split", "seed", "method", "acc", "edit", "f1_10", "f1_25", "f1_50")


@dataclass
class MetricReport:
    acc: float
    edit: float
    f1: dict[float, float] = field(default_factory=dict)

    def row(self) -> list[float]:
        return [self.acc, self.edit] + [self.f1[k] for k in OVERLAPS]


def _pair(pred, gt):
    p, g = as_labels(pred), as_labels(gt)
    if len(p) != len(g):
        raise DimensionMismatch(f"prediction has {len(p)} frames, ground truth {len(g)}")
    return p, g


def frame_accuracy(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return 100.0 * float(np.mean(p == g))


pseudo_label_accuracy = frame_accuracy


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_score(pred, gt) -> float:
    """Normalised Levenshtein similarity of the segment label strings."""
    a = [s.label for s in segments_from_labels(pred)]
    b = [s.label for s in segments_from_labels(gt)]
    return 100.0 * (1.0 - levenshtein(a, b) / max(len(a), len(b)))


def f1_at_overlap(pred, gt, k: float) -> float:
    """Segmental F1 at IoU threshold ``k``.

    Predicted segments are visited in temporal order; each is matched to the
    not-yet-matched same-class ground-truth segment of highest IoU and counts
    as a true positive when that IoU reaches ``k``.
    """
    if not 0.0 < k <= 1.0:
        raise ValueError(f"overlap threshold must lie in (0, 1], got {k}")
    p, g = _pair(pred, gt)
    ps, gs = segments_from_labels(p), segments_from_labels(g)
    used = np.zeros(len(gs), dtype=bool)
    g_lab = np.array([s.label for s in gs])
    g_start = np.array([s.start for s in gs])
    g_end = np.array([s.end for s in gs])
    tp = fp = 0
    for s in ps:
        inter = np.minimum(g_end, s.end) - np.maximum(g_start, s.start)
        union = np.maximum(g_end, s.end) - np.minimum(g_start, s.start)
        iou = np.where((g_lab == s.label) & ~used, np.clip(inter, 0, None) / union, -1.0)
        j = int(np.argmax(iou))
        if iou[j] >= k:
            tp += 1
            used[j] = True
        else:
            fp += 1
    fn = len(gs) - tp
    return 100.0 * 2 * tp / (2 * tp + fp + fn)


def total_variance(freqs, K: int | None = None) -> float:
    """Trace of the population covariance of frequency vectors, divided by K."""
    F = np.asarray(freqs, dtype=float)
    if F.ndim != 2 or F.shape[0] < 2:
        raise InsufficientData("total variance needs at least two frequency vectors")
    if K is not None and F.shape[1] != K:
        raise DimensionMismatch(f"vectors of length {F.shape[1]} for K={K}")
    return float(np.var(F, axis=0).sum() / F.shape[1])


def segment_report(preds: Iterable, gts: Iterable) -> MetricReport:
    """Corpus metrics: frame accuracy pooled over all frames, the rest averaged per video."""
    correct = total = 0
    edits, f1s = [], {k: [] for k in OVERLAPS}
    for p, g in zip(preds, gts):
        p, g = _pair(p, g)
        correct += int(np.sum(p == g))
        total += len(g)
        edits.append(edit_score(p, g))
        for k in OVERLAPS:
            f1s[k].append(f1_at_overlap(p, g, k))
    if total == 0:
        raise InsufficientData("no videos to evaluate")
    return MetricReport(
        acc=100.0 * correct / total,
        edit=float(np.mean(edits)),
        f1={k: float(np.mean(v)) for k, v in f1s.items()},
    )


def _fmt(x) -> str:
    return f"{x:.4f}" if isinstance(x, float) else str(x)


def reports_to_csv(rows: Iterable[tuple[str, object, str, MetricReport]]) -> str:
    """CSV text with one ``split,seed,method,...`` line per report."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for split, seed, method, rep in rows:
        w.writerow([split, seed, method] + [_fmt(v) for v in rep.row()])
    return buf.getvalue()
