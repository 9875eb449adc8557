"""Label sequences, segments, action frequencies and the KL primitive.

Class ids are zero-based. Label sequences are 1-D integer arrays and
probability matrices are ``(T, K)`` float arrays with row-stochastic rows.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptySequence, LabelOutOfRange

# floor applied to probabilities before any logarithm
PROB_FLOOR = 1e-8


class Segment(NamedTuple):
    label: int
    start: int  # inclusive
    end: int  # exclusive

    def __len__(self) -> int:
        return self.end - self.start


def as_labels(labels, K: int | None = None) -> np.ndarray:
    """Validate and convert to a 1-D int64 array."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise DimensionMismatch(f"labels must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptySequence("label sequence is empty")
    arr = arr.astype(np.int64, copy=False)
    if arr.min() < 0:
        raise LabelOutOfRange(f"negative label {int(arr.min())}")
    if K is not None and arr.max() >= K:
        raise LabelOutOfRange(f"label {int(arr.max())} >= K={K}")
    return arr


def segments_from_labels(labels) -> list[Segment]:
    """Run-length encode a label sequence into maximal constant segments.

    >>> segments_from_labels([1, 1, 2, 2, 2])
    [Segment(label=1, start=0, end=2), Segment(label=2, start=2, end=5)]
    """
    y = as_labels(labels)
    cuts = np.flatnonzero(y[1:] != y[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [len(y)]))
    return [Segment(int(y[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def labels_from_segments(segments: Sequence[Segment]) -> np.ndarray:
    if not segments:
        raise EmptySequence("no segments")
    out = np.empty(segments[-1].end, dtype=np.int64)
    for seg in segments:
        out[seg.start:seg.end] = seg.label
    return out


def one_hot(labels, K: int) -> np.ndarray:
    y = as_labels(labels, K)
    out = np.zeros((len(y), K))
    out[np.arange(len(y)), y] = 1.0
    return out


def action_frequency_from_labels(labels, K: int) -> np.ndarray:
    """Fraction of frames carrying each class."""
    y = as_labels(labels, K)
    return np.bincount(y, minlength=K) / len(y)


def soft_action_frequency(P) -> np.ndarray:
    """Column mean of a probability matrix."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty (T, K) matrix, got {P.shape}")
    return P.mean(axis=0)


def kl_divergence(q, p) -> float:
    """KL(q || p) with ``0 log 0 = 0`` and ``p`` floored at ``PROB_FLOOR``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise DimensionMismatch(f"KL between shapes {q.shape} and {p.shape}")
    nz = q > 0
    pc = np.maximum(p[nz], PROB_FLOOR)
    return max(float(np.sum(q[nz] * (np.log(q[nz]) - np.log(pc)))), 0.0)


def check_probabilities(P, atol: float = 1e-6) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty (T, K) matrix, got {P.shape}")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=atol):
        raise ValueError("rows of P must be non-negative and sum to 1")
    return P
