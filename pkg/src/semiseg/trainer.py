"""Semi-supervised training loop.

Training runs a warm-up phase on labelled videos only, then a joint phase in
which every training video is visited once per epoch in shuffled order, one
video per Adam step. Labelled videos contribute classification and smoothing
losses; unlabelled videos contribute the unsupervised terms of the selected
mode plus smoothing.

Modes::

    base      labelled data only (joint phase skipped)
    pseudo    + naive argmax pseudo-labels
    aff       + affinity and frame entropy
    aff_pse   + affinity and naive pseudo-labels
    aff_cont  + affinity and continuity
    full      + affinity and continuity, continuity targets boundary-smoothed
    sup_abs   labelled data only, ground truth boundary-smoothed
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import model as tcn
from .continuity import continuity_targets
from .data import SplitSpec, Video
from .errors import DimensionMismatch, DivergenceDetected
from .losses import (
    LossResult,
    LossWeights,
    affinity_loss,
    classification_loss,
    entropy_loss,
    pseudo_label_loss,
    pseudo_labels,
    smoothing_loss,
    total_objective,
)
from .metrics import OVERLAPS, MetricReport, frame_accuracy, segment_report
from .seqcore import action_frequency_from_labels
from .smoothing import smooth_labels

MODES = {
    "base": (),
    "pseudo": ("pse",),
    "aff": ("aff", "ent"),
    "aff_pse": ("aff", "pse"),
    "aff_cont": ("aff", "cont"),
    "full": ("aff", "cont"),
    "sup_abs": (),
}
SUPERVISED_MODES = ("base", "sup_abs")
LOSS_COLUMNS = ("l_cls", "l_sm", "l_aff", "l_cont", "l_pse")
LOG_COLUMNS = ("epoch",) + LOSS_COLUMNS + ("pseudo_acc", "acc", "edit", "f1_10", "f1_25", "f1_50")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "full"
    warmup_epochs: int = 30
    joint_epochs: int = 20
    lr: float = 5e-4
    weights: LossWeights = LossWeights()
    omega: int = 20
    v: float = 0.05
    epsilon: float = 5.0
    seed: int = 0
    stages: int = 2
    layers_per_stage: int = 6
    channels: int = 32
    smooth_in_warmup: bool = True
    unsup_all_stages: bool = True
    use_activity: bool = False
    abs_on_continuity: bool | None = None  # None: on for "full" only
    entropy_weight: float | None = None  # None: weights.beta in "aff", 0 elsewhere
    eval_every: int = 1  # pseudo-label accuracy and metrics cadence; the last epoch is always evaluated

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.warmup_epochs < 0 or self.joint_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")

    @property
    def terms(self) -> tuple[str, ...]:
        return MODES[self.mode]

    @property
    def effective_joint_epochs(self) -> int:
        return 0 if self.mode in SUPERVISED_MODES else self.joint_epochs

    @property
    def smooth_continuity(self) -> bool:
        return self.mode == "full" if self.abs_on_continuity is None else self.abs_on_continuity

    @property
    def loss_weights(self) -> LossWeights:
        ent = self.entropy_weight
        if ent is None:
            ent = self.weights.beta if "ent" in self.terms else 0.0
        return replace(self.weights, entropy=ent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class EpochLog:
    epoch: int
    losses: dict[str, float]
    pseudo_acc: float
    report: MetricReport | None = None
    l_ent: float = math.nan

    def row(self) -> list:
        rep = self.report.row() if self.report else [math.nan] * (2 + len(OVERLAPS))
        return [self.epoch] + [self.losses.get(c, math.nan) for c in LOSS_COLUMNS] + [self.pseudo_acc] + rep


def logs_to_csv(logs: Sequence[EpochLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for log in logs:
        w.writerow([log.epoch] + [f"{x:.6f}" for x in log.row()[1:]])
    return buf.getvalue()


# --- optimiser --------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place.

    ``params`` is a :class:`~semiseg.model.ModelParams` (with ``grads`` as
    returned by :func:`~semiseg.model.backward`) or a dict of arrays with a
    matching dict of gradients. Returns ``(params, state)``.
    """
    if isinstance(params, tcn.ModelParams):
        flat_g = getattr(grads, "vector", None)
        if flat_g is None:
            flat_g = np.concatenate([np.ravel(grads[k]) for k in params.arrays])
        pairs = {"__flat__": (params.vector, flat_g)}
    else:
        pairs = {k: (params[k], np.asarray(g, dtype=float)) for k, g in grads.items()}
    for k, (_, g) in pairs.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceDetected(f"non-finite gradient ({k}) at Adam step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = lr / (1.0 - b1**state.t)
    bc2 = 1.0 - b2**state.t
    for k, (p, g) in pairs.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= step * m / (np.sqrt(v / bc2) + state.eps)
    if isinstance(params, tcn.ModelParams):
        params.version += 1
    return params, state


# --- losses per video -------------------------------------------------------

def _mean_or_nan(xs):
    return float(np.mean(xs)) if xs else math.nan


class _Tally:
    def __init__(self):
        self.values = {}

    def add(self, name, value):
        self.values.setdefault(name, []).append(value)

    def means(self):
        return {k: _mean_or_nan(v) for k, v in self.values.items()}


def _anchors(videos: Sequence[Video], K: int, with_activity: bool):
    return [(action_frequency_from_labels(v.labels, K), v.activity if with_activity else None)
            for v in videos]


def video_objective(cache, cfg: TrainConfig, targets=None, anchors=None, activity=None, warmup=False):
    """Per-stage loss parts for one video.

    ``targets`` (hard labels or soft rows) marks the video as labelled;
    otherwise the unsupervised terms of ``cfg.mode`` are used. Returns
    ``(grads, log_grads, parts)`` where ``parts`` maps loss names to values
    summed over stages.
    """
    w = cfg.loss_weights
    S = len(cache.probs)
    labelled = targets is not None
    grads, log_grads = [None] * S, [None] * S
    summed: dict[str, float] = {}
    for s in range(S):
        P, logP = cache.probs[s], cache.log_probs[s]
        parts: dict[str, LossResult] = {}
        if labelled:
            parts["cls"] = classification_loss(P, targets)
        elif cfg.unsup_all_stages or s == S - 1:
            if "aff" in cfg.terms:
                parts["aff"] = affinity_loss(P, anchors, activity if cfg.use_activity else None)
            if "cont" in cfg.terms:
                _, ytil = continuity_targets(P, cfg.omega)
                tgt = smooth_labels(ytil, cfg.v, cfg.epsilon, P.shape[1]) if cfg.smooth_continuity else ytil
                parts["cont"] = classification_loss(P, tgt)
            if "pse" in cfg.terms:
                parts["pse"] = pseudo_label_loss(P)
            if "ent" in cfg.terms and w.entropy > 0:
                parts["ent"] = entropy_loss(P)
        if P.shape[0] >= 2 and (cfg.smooth_in_warmup or not warmup):
            parts["sm"] = smoothing_loss(logP, w.tau)
        if not parts:
            continue
        obj = total_objective(parts, w, required=())
        grads[s], log_grads[s] = obj.grad, obj.log_grad
        for name, res in parts.items():
            summed[name] = summed.get(name, 0.0) + res.value
    return grads, log_grads, summed


def mode_pseudo_labels(params, video: Video, cfg: TrainConfig) -> np.ndarray:
    """Final-stage pseudo-labels as the mode would use them."""
    P = tcn.forward(params, video.features).probs[-1]
    if "cont" in cfg.terms:
        return continuity_targets(P, cfg.omega)[1]
    return pseudo_labels(P)


def evaluate(params, videos: Sequence[Video], gt=None) -> MetricReport:
    """Metrics of final-stage argmax predictions against ``gt`` (default: video labels)."""
    if gt is None:
        gt = [v.labels for v in videos]
    preds = [tcn.predict(params, v.features) for v in videos]
    return segment_report(preds, gt)


# --- training loop ----------------------------------------------------------

def train(dataset, split: SplitSpec, config: TrainConfig, eval_videos=None, log_eval: bool = True):
    """Train a model; returns ``(params, logs)`` with one :class:`EpochLog` per epoch.

    ``dataset`` is a :class:`~semiseg.data.SyntheticDataset` (its training
    videos are indexed by ``split``) or a plain list of videos. Metrics are
    computed on ``eval_videos`` (default: the dataset's test videos) when
    ``log_eval`` is set.
    """
    videos = dataset.train if hasattr(dataset, "train") else list(dataset)
    if eval_videos is None and hasattr(dataset, "test"):
        eval_videos = dataset.test
    K = dataset.num_classes if hasattr(dataset, "num_classes") else int(max(v.labels.max() for v in videos)) + 1
    D = videos[0].features.shape[1]
    idx = set(split.labelled) | set(split.unlabelled)
    if max(idx, default=-1) >= len(videos) or set(split.labelled) & set(split.unlabelled):
        raise DimensionMismatch("split does not match the dataset")
    cfg = config
    labelled = [videos[i] for i in split.labelled]
    unlabelled = [videos[i] for i in split.unlabelled]

    params = tcn.init_params(
        tcn.ModelConfig(D, K, cfg.stages, cfg.layers_per_stage, cfg.channels), cfg.seed)
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 1])
    anchors = _anchors(labelled, K, cfg.use_activity)
    if cfg.mode == "sup_abs":
        targets = {id(v): smooth_labels(v.labels, cfg.v, cfg.epsilon, K) for v in labelled}
    else:
        targets = {id(v): v.labels for v in labelled}

    logs = []
    n_epochs = cfg.warmup_epochs + cfg.effective_joint_epochs
    for epoch in range(n_epochs):
        joint = epoch >= cfg.warmup_epochs
        pool = labelled + unlabelled if joint else labelled
        order = rng.permutation(len(pool))
        tally = _Tally()
        for step, i in enumerate(order):
            v = pool[i]
            cache = tcn.forward(params, v.features)
            tgt = targets.get(id(v))
            grads, log_grads, parts = video_objective(
                cache, cfg, tgt, None if tgt is not None else anchors, v.activity, warmup=not joint)
            total = sum(parts.values())
            if not math.isfinite(total):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}, step {step} ({v.vid})")
            for name, val in parts.items():
                tally.add(name, val)
            if all(g is None for g in grads) and all(g is None for g in log_grads):
                continue
            try:
                pg = tcn.backward(cache, grads, log_grads)
                adam_step(params, pg, state, cfg.lr)
            except DivergenceDetected as e:
                raise DivergenceDetected(f"epoch {epoch}, step {step} ({v.vid}): {e}") from None
        means = tally.means()
        losses = {f"l_{k}": means[k] for k in ("cls", "sm", "aff", "cont", "pse") if k in means}
        due = (epoch + 1) % cfg.eval_every == 0 or epoch == n_epochs - 1
        pseudo_acc, report = math.nan, None
        if due and unlabelled:
            accs = [frame_accuracy(mode_pseudo_labels(params, u, cfg), u.labels) for u in unlabelled]
            pseudo_acc = float(np.mean(accs))
        if due and log_eval and eval_videos:
            report = evaluate(params, eval_videos)
        logs.append(EpochLog(epoch, losses, pseudo_acc, report, means.get("ent", math.nan)))
    return params, logs
