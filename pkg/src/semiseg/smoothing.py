"""Adaptive boundary smoothing of label sequences.

Around each boundary ``t_b`` between a left and right segment, a vicinity of
``round(v * len)`` frames on each side is given a two-class mixture. A frame
at distance ``d`` from the boundary keeps ``sigmoid(eps * d / |V|)`` of its
own label (``d = t_b - t`` on the left, ``t - t_b`` on the right) and passes
the rest to the label across the boundary. The furthest left-vicinity frame
therefore keeps ``sigmoid(eps)`` and the first right frame keeps exactly 0.5.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidVicinity
from .seqcore import Segment, as_labels, one_hot, segments_from_labels


class Vicinity(NamedTuple):
    side: str  # "left" or "right"
    start: int
    end: int  # exclusive
    boundary: int
    own: int
    other: int

    def __len__(self) -> int:
        return self.end - self.start


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _side_lengths(segments: Sequence[Segment], v: float) -> list[int]:
    """Vicinity length for every segment, zero where smoothing is disallowed."""
    n = len(segments)
    out = []
    for i, seg in enumerate(segments):
        size = len(seg)
        m = _round_half_up(v * size)
        interior = 0 < i < n - 1
        if size < 2 or (interior and 2 * m >= size):
            m = 0
        out.append(m)
    return out


def vicinities(segments: Sequence[Segment], v: float = 0.05) -> list[Vicinity]:
    """Left and right boundary vicinities for every internal boundary.

    Zero-length vicinities are omitted, so ``v = 0`` yields an empty list.
    """
    if not 0.0 <= v <= 0.5:
        raise InvalidVicinity(f"v must lie in [0, 0.5], got {v}")
    lens = _side_lengths(segments, v)
    out = []
    for i in range(len(segments) - 1):
        left, right = segments[i], segments[i + 1]
        tb = right.start
        if lens[i]:
            out.append(Vicinity("left", tb - lens[i], tb, tb, left.label, right.label))
        if lens[i + 1]:
            out.append(Vicinity("right", tb, tb + lens[i + 1], tb, right.label, left.label))
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def smooth_labels(labels, v: float = 0.05, epsilon: float = 5.0, K: int | None = None) -> np.ndarray:
    """Soft ``(T, K)`` targets with sigmoid mixing inside boundary vicinities."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    y = as_labels(labels, K)
    K = int(y.max()) + 1 if K is None else K
    Y = one_hot(y, K)
    for vic in vicinities(segments_from_labels(y), v):
        t = np.arange(vic.start, vic.end)
        dist = (vic.boundary - t) if vic.side == "left" else (t - vic.boundary)
        own = _sigmoid(epsilon * dist / len(vic))
        Y[t, vic.own] = own
        Y[t, vic.other] = 1.0 - own
    return Y


def smooth_fixed_linear(labels, half_width: int, K: int | None = None) -> np.ndarray:
    """Linear two-class ramp over ``2 * half_width`` frames centred on each boundary.

    A frame at distance ``d`` from the boundary (``t_b - t`` on the left,
    ``t - t_b`` on the right) keeps ``0.5 + d / (2 * half_width)`` of its own
    label. Windows are clipped so they never leave their segment; interior
    segments lend at most half their frames to each side.
    """
    if half_width < 0:
        raise ValueError("half_width must be non-negative")
    y = as_labels(labels, K)
    K = int(y.max()) + 1 if K is None else K
    Y = one_hot(y, K)
    if half_width == 0:
        return Y
    segs = segments_from_labels(y)
    n = len(segs)

    def reach(i):
        size = len(segs[i])
        cap = size if i in (0, n - 1) else size // 2
        return min(half_width, cap)

    w = float(half_width)
    for i in range(n - 1):
        left, right = segs[i], segs[i + 1]
        tb = right.start
        t = np.arange(tb - reach(i), tb)
        own = 0.5 + (tb - t) / (2 * w)
        Y[t, left.label], Y[t, right.label] = own, 1.0 - own
        t = np.arange(tb, tb + reach(i + 1))
        own = 0.5 + (t - tb) / (2 * w)
        Y[t, right.label], Y[t, left.label] = own, 1.0 - own
    return Y
