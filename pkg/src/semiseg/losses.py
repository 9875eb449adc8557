"""Frame- and video-level losses with analytic gradients.

Each loss returns a :class:`LossResult` holding the scalar value and the
gradient with respect to its input matrix. Probability inputs are floored at
``PROB_FLOOR`` before taking logarithms; the gradient is that of the floored
expression, so it vanishes where the floor is active.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingLossTerm,
    NoAnchorAvailable,
    SequenceTooShort,
)
from .seqcore import PROB_FLOOR, as_labels, kl_divergence, one_hot, soft_action_frequency


class LossResult(NamedTuple):
    value: float
    grad: np.ndarray


class Objective(NamedTuple):
    """Combined loss; ``log_grad`` collects terms differentiated in log space."""

    value: float
    grad: np.ndarray
    log_grad: np.ndarray | None


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1  # affinity
    beta: float = 0.01  # continuity
    gamma: float = 0.15  # temporal smoothing
    tau: float = 4.0  # smoothing truncation
    entropy: float = 0.0
    pseudo: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.entropy < 0 or self.pseudo < 0:
            raise ValueError("entropy and pseudo weights must be non-negative")


def _floored(P):
    P = np.asarray(P, dtype=float)
    Pc = np.maximum(P, PROB_FLOOR)
    active = P >= PROB_FLOOR
    return Pc, active


def _nll_targets(P, targets) -> np.ndarray:
    """Dense (T, K) target matrix from hard labels or soft rows."""
    T, K = P.shape
    t = np.asarray(targets)
    if t.ndim == 1:
        if len(t) != T:
            raise DimensionMismatch(f"{len(t)} labels for {T} frames")
        return one_hot(as_labels(t, K), K)
    if t.shape != P.shape:
        raise DimensionMismatch(f"targets {t.shape} vs probabilities {P.shape}")
    return t.astype(float, copy=False)


def classification_loss(P, targets) -> LossResult:
    """Mean frame cross-entropy against hard labels or soft target rows."""
    P = np.asarray(P, dtype=float)
    Y = _nll_targets(P, targets)
    T = P.shape[0]
    Pc, active = _floored(P)
    value = float(-np.sum(Y * np.log(Pc)) / T)
    grad = np.where(active, -Y / (T * Pc), 0.0)
    return LossResult(value, grad)


def smoothing_loss(log_p, tau: float = 4.0) -> LossResult:
    """Truncated MSE between consecutive log-probabilities.

    The gradient is with respect to ``log_p``, not the probabilities.
    """
    L = np.asarray(log_p, dtype=float)
    if L.ndim != 2:
        raise DimensionMismatch(f"expected (T, K) log-probabilities, got {L.shape}")
    T, K = L.shape
    if T < 2:
        raise SequenceTooShort("smoothing loss needs at least two frames")
    diff = L[1:] - L[:-1]
    mag = np.abs(diff)
    clipped = np.minimum(mag, tau)
    value = float(np.sum(clipped**2) / (T * K))
    # d/d(diff) of min(|diff|, tau)^2 is 2*diff below the clamp, 0 above
    g = np.where(mag < tau, 2.0 * diff, 0.0) / (T * K)
    grad = np.zeros_like(L)
    grad[1:] += g
    grad[:-1] -= g
    return LossResult(value, grad)


def pseudo_labels(P) -> np.ndarray:
    return np.argmax(np.asarray(P), axis=1)


def pseudo_label_loss(P) -> LossResult:
    """Cross-entropy against the frame-wise argmax, held constant."""
    return classification_loss(P, pseudo_labels(P))


def entropy_loss(P) -> LossResult:
    """Mean frame entropy."""
    P = np.asarray(P, dtype=float)
    T = P.shape[0]
    Pc, active = _floored(P)
    logp = np.log(Pc)
    value = float(-np.sum(P * logp) / T)
    grad = -(logp + active) / T
    return LossResult(value, grad)


def associate_anchor(p, anchors: Sequence, activity=None) -> tuple[int, np.ndarray]:
    """Index and frequency of the anchor nearest to ``p`` in KL(anchor || p).

    ``anchors`` holds frequency vectors or ``(frequency, activity)`` pairs.
    With ``activity`` given only anchors carrying that tag are searched; the
    returned index always refers to the full list. Ties go to the lowest index.
    """
    best, best_d = -1, np.inf
    for i, a in enumerate(anchors):
        q, tag = _unpack_anchor(a)
        if activity is not None and tag != activity:
            continue
        d = kl_divergence(q, p)
        if d < best_d:
            best, best_d = i, d
    if best < 0:
        where = "" if activity is None else f" with activity {activity!r}"
        raise NoAnchorAvailable(f"no anchor{where}")
    return best, np.asarray(_unpack_anchor(anchors[best])[0], dtype=float)


def _unpack_anchor(a):
    if isinstance(a, tuple) and len(a) == 2:
        return a[0], a[1]
    return a, None


def affinity_loss(P, anchors: Sequence, activity=None) -> LossResult:
    """KL from the nearest anchor frequency to the soft frequency of ``P``."""
    P = np.asarray(P, dtype=float)
    T, K = P.shape
    pbar = soft_action_frequency(P)
    _, a = associate_anchor(pbar, anchors, activity)
    if a.shape != (K,):
        raise DimensionMismatch(f"anchor of length {a.shape} for K={K}")
    value = kl_divergence(a, pbar)
    pc = np.maximum(pbar, PROB_FLOOR)
    g = np.where(pbar >= PROB_FLOOR, -a / (T * pc), 0.0)
    return LossResult(value, np.broadcast_to(g, P.shape).copy())


LABELLED_TERMS = ("cls", "sm")
UNLABELLED_TERMS = ("aff", "cont", "sm")
LOG_SPACE_TERMS = ("sm",)
_WEIGHT_OF = {
    "cls": lambda w: 1.0,
    "sm": lambda w: w.gamma,
    "aff": lambda w: w.alpha,
    "cont": lambda w: w.beta,
    "pse": lambda w: w.pseudo,
    "ent": lambda w: w.entropy,
}


def term_weight(name: str, w: LossWeights) -> float:
    return _WEIGHT_OF[name](w)


def total_objective(
    parts: Mapping[str, LossResult],
    w: LossWeights = LossWeights(),
    labelled: bool = True,
    required: Sequence[str] | None = None,
) -> Objective:
    """Weighted sum of named loss terms.

    Recognised names are ``cls``, ``sm``, ``aff``, ``cont``, ``pse`` and
    ``ent``. Unless ``required`` overrides it, a labelled video must supply
    ``cls`` and ``sm`` and an unlabelled one ``aff``, ``cont`` and ``sm``.
    The smoothing gradient is taken with respect to log-probabilities and is
    summed into ``log_grad``; every other gradient goes into ``grad``.
    """
    if required is None:
        required = LABELLED_TERMS if labelled else UNLABELLED_TERMS
    missing = [r for r in required if r not in parts]
    if missing:
        raise MissingLossTerm(f"missing loss terms: {', '.join(missing)}")
    value = 0.0
    grad = log_grad = None
    for name, res in parts.items():
        if name not in _WEIGHT_OF:
            raise MissingLossTerm(f"unknown loss term {name!r}")
        c = term_weight(name, w)
        value += c * res.value
        if name in LOG_SPACE_TERMS:
            log_grad = c * res.grad if log_grad is None else log_grad + c * res.grad
        else:
            grad = c * res.grad if grad is None else grad + c * res.grad
    if grad is None and log_grad is not None:
        grad = np.zeros_like(log_grad)
    return Objective(value, grad, log_grad)
