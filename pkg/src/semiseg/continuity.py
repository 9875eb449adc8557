"""Action-sequence sub-sampling, ordered segmentation DTW and continuity loss.

The alignment partitions the ``T`` frames into ``L`` consecutive non-empty
runs, one per element of the ordered action sequence. Frame ``t`` assigned to
element ``l`` costs ``-log p^t(o_l)``, which is the KL divergence between the
one-hot code of ``o_l`` and ``p^t``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import EmptySequence, InfeasibleAlignment, InvalidStride
from .losses import LossResult, classification_loss
from .seqcore import PROB_FLOOR, as_labels


class Alignment(NamedTuple):
    boundaries: np.ndarray  # L + 1 cut indices, 0 = c_0 < ... < c_L = T
    cost: float
    labels: np.ndarray


class ContinuityResult(NamedTuple):
    value: float
    grad: np.ndarray
    labels: np.ndarray
    actions: np.ndarray


def dedup(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size == 0:
        return seq
    keep = np.concatenate(([True], seq[1:] != seq[:-1]))
    return seq[keep]


def subsample_actions(P, omega: int = 20) -> np.ndarray:
    """Ordered, de-duplicated argmax classes of non-overlapping window means.

    The last window holds the remaining ``T mod omega`` frames when ``omega``
    does not divide ``T``.
    """
    if int(omega) != omega or omega < 1:
        raise InvalidStride(f"stride must be a positive integer, got {omega}")
    omega = int(omega)
    P = np.asarray(P, dtype=float)
    T = P.shape[0]
    if T < 1:
        raise EmptySequence("no frames to sub-sample")
    starts = np.arange(0, T, omega)
    sums = np.add.reduceat(P, starts, axis=0)
    sizes = np.diff(np.append(starts, T))
    return dedup(np.argmax(sums / sizes[:, None], axis=1))


def alignment_costs(actions, P) -> np.ndarray:
    """``(L, T)`` matrix of ``-log p^t(o_l)`` after flooring."""
    P = np.asarray(P, dtype=float)
    o = as_labels(actions, P.shape[1])
    return -np.log(np.maximum(P[:, o].T, PROB_FLOOR))


def dtw_align(actions, P) -> Alignment:
    """Minimum-cost monotone assignment of ``actions`` onto the frames of ``P``.

    Accumulated cost ``E[l, t] = d[l, t] + min(E[l, t-1], E[l-1, t-1])``,
    evaluated one action at a time through prefix sums: with ``C`` the
    cumulative cost of action ``l``, ``E[l, t] = C[t] + min_{s<=t} (E[l-1, s-1] - C[s-1])``
    where ``s`` is the first frame of action ``l``. Ties between start
    frames resolve to the latest one.
    """
    o = as_labels(actions)
    d = alignment_costs(o, P)
    L, T = d.shape
    if L > T:
        raise InfeasibleAlignment(f"{L} actions cannot cover {T} frames")

    C = np.cumsum(d, axis=1)
    E = np.empty((L, T))
    E[0] = C[0]
    # start[l, s]: best cost of frames before s plus the offset for action l starting at s
    start = np.full((L, T), np.inf)
    for l in range(1, L):
        start[l, l:] = E[l - 1, l - 1:T - 1] - C[l, l - 1:T - 1]
        E[l] = C[l] + np.minimum.accumulate(start[l])

    cuts = np.empty(L + 1, dtype=np.int64)
    cuts[0], cuts[L] = 0, T
    end = T  # exclusive end of action l
    for l in range(L - 1, 0, -1):
        window = start[l, l:end]
        s = l + len(window) - 1 - int(np.argmin(window[::-1]))
        cuts[l] = end = s
    labels = np.repeat(o, np.diff(cuts))
    return Alignment(cuts, float(E[L - 1, T - 1]), labels)


def continuity_loss(P, omega: int = 20) -> ContinuityResult:
    """Mean negative log-likelihood of the aligned continuous labelling.

    The aligned labels are treated as constants when differentiating.
    """
    P = np.asarray(P, dtype=float)
    actions = subsample_actions(P, omega)
    ali = dtw_align(actions, P)
    res = classification_loss(P, ali.labels)
    return ContinuityResult(res.value, res.grad, ali.labels, actions)


def continuity_targets(P, omega: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Sub-sampled actions and their aligned per-frame labels."""
    actions = subsample_actions(P, omega)
    return actions, dtw_align(actions, P).labels


def as_loss(res: ContinuityResult) -> LossResult:
    return LossResult(res.value, res.grad)
