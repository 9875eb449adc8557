"""Synthetic procedural videos, split sampling and on-disk formats.

A video realises one activity grammar: an ordered template of actions whose
adjacent pairs may swap, each action lasting a random number of frames.
Frame features are a per-action mean vector plus isotropic Gaussian noise.

On disk a dataset directory holds::

    manifest.json        ids, activities, splits, relative paths, K, D
    mapping.txt          "action_name id" per line
    groundTruth/<id>.txt one action name per frame
    features/<id>.tsft   b"TSFT", u32 T, u32 D, T*D little-endian float32
"""

from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CorruptFeatureFile, CoverageInfeasible, EmptySequence, GrammarError, UnknownAction
from .seqcore import as_labels

FEATURE_MAGIC = b"TSFT"


@dataclass(frozen=True)
class ActivityGrammar:
    activity: str
    template: tuple[int, ...]
    durations: tuple[tuple[int, int], ...]  # (mean, spread) per template slot, in frames
    swaps: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not self.template:
            raise GrammarError(f"{self.activity}: template is empty")
        if len(self.durations) != len(self.template):
            raise GrammarError(f"{self.activity}: durations has {len(self.durations)} entries "
                               f"for a template of {len(self.template)}")
        for i, (mean, spread) in enumerate(self.durations):
            if spread < 0 or mean - spread < 1:
                raise GrammarError(f"{self.activity}: durations[{i}] allows fewer than 1 frame")
        for pair in self.swaps:
            i, j = pair
            if j != i + 1 or not 0 <= i < len(self.template) - 1:
                raise GrammarError(f"{self.activity}: swaps entry {list(pair)} is not an adjacent pair")
        if len(self.swaps) > 12:
            raise GrammarError(f"{self.activity}: at most 12 swaps are supported")
        for order in self._orders():
            if any(a == b for a, b in zip(order, order[1:])):
                raise GrammarError(f"{self.activity}: template can realise repeated adjacent action")

    def _orders(self):
        for mask in itertools.product((False, True), repeat=len(self.swaps)):
            yield self._apply(mask)[0]

    def _apply(self, mask):
        order = list(range(len(self.template)))
        for (i, j), flip in zip(self.swaps, mask):
            if flip:
                order[i], order[j] = order[j], order[i]
        return [self.template[k] for k in order], order

    def realise(self, rng: np.random.Generator) -> tuple[list[int], list[int]]:
        """Sample an action order and matching durations."""
        mask = [bool(rng.integers(2)) for _ in self.swaps]
        actions, slots = self._apply(mask)
        lengths = [int(rng.integers(self.durations[k][0] - self.durations[k][1],
                                    self.durations[k][0] + self.durations[k][1] + 1)) for k in slots]
        return actions, lengths


def grammar_from_dict(d: dict) -> ActivityGrammar:
    for key in ("activity", "template", "durations"):
        if key not in d:
            raise GrammarError(f"grammar is missing field '{key}'")
    durs = []
    for i, x in enumerate(d["durations"]):
        if isinstance(x, dict):
            x = (x.get("mean"), x.get("spread", 0))
        if not isinstance(x, (list, tuple)) or len(x) != 2 or not all(isinstance(v, int) for v in x):
            raise GrammarError(f"field 'durations[{i}]' must be [mean, spread] integers")
        durs.append(tuple(x))
    template = d["template"]
    if not isinstance(template, list) or not all(isinstance(a, int) and a >= 0 for a in template):
        raise GrammarError("field 'template' must be a list of non-negative integers")
    swaps = d.get("swaps", [])
    if not isinstance(swaps, list) or not all(isinstance(p, list) and len(p) == 2 for p in swaps):
        raise GrammarError("field 'swaps' must be a list of [i, i+1] pairs")
    return ActivityGrammar(str(d["activity"]), tuple(template), tuple(durs), tuple(tuple(p) for p in swaps))


def load_grammars(path) -> tuple[list[ActivityGrammar], dict]:
    """Grammars plus the remaining top-level options of a grammar JSON file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise GrammarError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("grammars"), list) or not doc["grammars"]:
        raise GrammarError(f"{path}: field 'grammars' must be a non-empty list")
    grammars = []
    for i, g in enumerate(doc["grammars"]):
        if not isinstance(g, dict):
            raise GrammarError(f"field 'grammars[{i}]' must be an object")
        try:
            grammars.append(grammar_from_dict(g))
        except GrammarError as e:
            raise GrammarError(f"grammars[{i}]: {e}") from None
    return grammars, {k: v for k, v in doc.items() if k != "grammars"}


@dataclass
class Video:
    vid: str
    features: np.ndarray
    labels: np.ndarray
    activity: str | None = None
    split: str = "train"


@dataclass
class SyntheticDataset:
    videos: list[Video]
    num_classes: int
    feature_dim: int
    seed: int | None = None
    action_names: list[str] = field(default_factory=list)

    def subset(self, split: str) -> list[Video]:
        return [v for v in self.videos if v.split == split]

    @property
    def train(self) -> list[Video]:
        return self.subset("train")

    @property
    def test(self) -> list[Video]:
        return self.subset("test")


def default_action_names(K: int) -> list[str]:
    return [f"action_{k:02d}" for k in range(K)]


def generate(
    grammars: Sequence[ActivityGrammar],
    n_videos: int,
    D: int,
    noise_sigma: float,
    seed: int,
    n_test: int = 0,
    num_classes: int | None = None,
    mean_scale: float = 1.0,
) -> SyntheticDataset:
    """Sample ``n_videos`` training and ``n_test`` test videos.

    Features are rounded to float32 precision so that a write/read cycle
    through the feature file format is lossless.
    """
    if n_videos < 1 or n_test < 0:
        raise ValueError("need at least one training video")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if not grammars:
        raise GrammarError("no grammars given")
    K = max(max(g.template) for g in grammars) + 1
    if num_classes is not None:
        if num_classes < K:
            raise GrammarError(f"num_classes={num_classes} but templates use action {K - 1}")
        K = num_classes
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=mean_scale, size=(K, D))
    videos = []
    for i in range(n_videos + n_test):
        g = grammars[int(rng.integers(len(grammars)))]
        actions, lengths = g.realise(rng)
        labels = np.repeat(np.asarray(actions, dtype=np.int64), lengths)
        x = means[labels] + noise_sigma * rng.standard_normal((len(labels), D))
        split = "train" if i < n_videos else "test"
        idx = i if i < n_videos else i - n_videos
        videos.append(Video(f"{split}_{idx:04d}", x.astype(np.float32).astype(float), labels, g.activity, split))
    return SyntheticDataset(videos, K, D, seed, default_action_names(K))


@dataclass(frozen=True)
class SplitSpec:
    fraction: float
    seed: int
    labelled: tuple[int, ...]
    unlabelled: tuple[int, ...]


def sample_split(label_seqs, fraction: float, seed: int, K: int, max_tries: int = 1000) -> SplitSpec:
    """Random labelled subset of ``ceil(fraction * n)`` videos covering every class.

    ``label_seqs`` is a list of label arrays (or videos) indexed like the
    training set. Subsets are resampled until every class in ``range(K)``
    occurs in some labelled video.
    """
    seqs = [getattr(v, "labels", v) for v in label_seqs]
    n = len(seqs)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    m = math.ceil(round(fraction * n, 9))
    if n == 0 or m < 1:
        raise ValueError("split would contain no labelled video")
    present = [np.zeros(K, dtype=bool) for _ in range(n)]
    for p, y in zip(present, seqs):
        p[as_labels(y, K)] = True
    if not np.logical_or.reduce(present).all():
        raise CoverageInfeasible("some classes never occur in the training videos")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        chosen = np.sort(rng.choice(n, size=m, replace=False))
        if np.logical_or.reduce([present[i] for i in chosen]).all():
            rest = np.setdiff1d(np.arange(n), chosen)
            return SplitSpec(fraction, seed, tuple(int(i) for i in chosen), tuple(int(i) for i in rest))
    raise CoverageInfeasible(f"no class-covering subset of {m} videos found in {max_tries} draws")


# --- file formats ---------------------------------------------------------

def write_features(x, path) -> None:
    x = np.asarray(x)
    if x.ndim != 2 or 0 in x.shape:
        raise CorruptFeatureFile(f"cannot store features of shape {x.shape}")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC + struct.pack("<2I", *x.shape))
        f.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    """``(T, D)`` float64 matrix holding the stored float32 values."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise CorruptFeatureFile(f"{path}: bad magic")
    T, D = struct.unpack("<2I", data[4:12])
    if T == 0 or D == 0:
        raise CorruptFeatureFile(f"{path}: empty feature matrix ({T}x{D})")
    if len(data) != 12 + 4 * T * D:
        raise CorruptFeatureFile(f"{path}: expected {T}x{D} floats, file has {len(data) - 12} bytes")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(T, D).astype(float)


def write_mapping(names: Sequence[str], path) -> None:
    Path(path).write_text("".join(f"{name} {i}\n" for i, name in enumerate(names)))


def read_mapping(path) -> dict[str, int]:
    mapping = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{n}: expected 'action_name id'")
        mapping[parts[0]] = int(parts[1])
    return mapping


def write_groundtruth(labels, names: Sequence[str], path) -> None:
    Path(path).write_text("".join(names[k] + "\n" for k in as_labels(labels)))


def read_groundtruth(path, mapping: dict[str, int]) -> np.ndarray:
    names = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not names:
        raise EmptySequence(f"{path}: no frames")
    try:
        return np.array([mapping[n] for n in names], dtype=np.int64)
    except KeyError as e:
        raise UnknownAction(f"{path}: action {e.args[0]!r} not in mapping") from None


def read_groundtruth_dir(path, mapping_path=None) -> dict[str, np.ndarray]:
    """Labels for every ``*.txt`` file in ``path`` keyed by file stem.

    The mapping defaults to ``mapping.txt`` next to ``path`` (or inside it).
    """
    path = Path(path)
    if mapping_path is None:
        mapping_path = path.parent / "mapping.txt"
        if not mapping_path.exists():
            mapping_path = path / "mapping.txt"
    mapping = read_mapping(mapping_path)
    return {
        f.stem: read_groundtruth(f, mapping)
        for f in sorted(path.glob("*.txt"))
        if f.resolve() != Path(mapping_path).resolve()
    }


def save_dataset(ds: SyntheticDataset, out) -> dict:
    """Write features, labels and mapping; return the manifest dictionary."""
    out = Path(out)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "groundTruth").mkdir(parents=True, exist_ok=True)
    names = ds.action_names or default_action_names(ds.num_classes)
    write_mapping(names, out / "mapping.txt")
    entries = []
    for v in ds.videos:
        feat = f"features/{v.vid}.tsft"
        gt = f"groundTruth/{v.vid}.txt"
        write_features(v.features, out / feat)
        write_groundtruth(v.labels, names, out / gt)
        entries.append({"id": v.vid, "activity": v.activity, "split": v.split,
                        "frames": int(len(v.labels)), "features": feat, "labels": gt})
    return {"num_classes": ds.num_classes, "feature_dim": ds.feature_dim, "seed": ds.seed,
            "mapping": "mapping.txt", "videos": entries}


def load_dataset(path) -> SyntheticDataset:
    """Read a dataset directory written by :func:`save_dataset`."""
    path = Path(path)
    doc = json.loads((path / "manifest.json").read_text())
    ds_doc = doc.get("dataset", doc)
    mapping = read_mapping(path / ds_doc.get("mapping", "mapping.txt"))
    names = [n for n, _ in sorted(mapping.items(), key=lambda kv: kv[1])]
    videos = []
    for e in ds_doc["videos"]:
        x = read_features(path / e["features"])
        y = read_groundtruth(path / e["labels"], mapping)
        if len(y) != len(x):
            raise CorruptFeatureFile(f"{e['id']}: {len(x)} feature frames but {len(y)} labels")
        videos.append(Video(e["id"], x, y, e.get("activity"), e.get("split", "train")))
    return SyntheticDataset(videos, int(ds_doc["num_classes"]), int(ds_doc["feature_dim"]),
                            ds_doc.get("seed"), names)
