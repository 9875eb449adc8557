"""Multi-stage dilated temporal convolutional network in plain numpy.

Each stage is a 1x1 input projection, a stack of residual layers
``h + W_pw relu(conv3_dilated(h))`` with dilation ``2**layer`` and zero
padding, then a 1x1 projection to class logits. Stage ``s > 0`` consumes the
softmax output of stage ``s - 1``. Arrays are frame-major, ``(T, channels)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, DimensionMismatch, StaleCache

CHECKPOINT_MAGIC = b"TSSM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    num_classes: int
    stages: int = 2
    layers_per_stage: int = 6
    channels: int = 32

    def __post_init__(self):
        for name in ("feature_dim", "num_classes", "stages", "layers_per_stage", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    def stage_input_dim(self, s: int) -> int:
        return self.feature_dim if s == 0 else self.num_classes


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in declaration (checkpoint) order."""
    C, K = cfg.channels, cfg.num_classes
    shapes = {}
    for s in range(cfg.stages):
        shapes[f"s{s}.in.w"] = (C, cfg.stage_input_dim(s))
        shapes[f"s{s}.in.b"] = (C,)
        for l in range(cfg.layers_per_stage):
            shapes[f"s{s}.l{l}.dil.w"] = (3, C, C)
            shapes[f"s{s}.l{l}.dil.b"] = (C,)
            shapes[f"s{s}.l{l}.pw.w"] = (C, C)
            shapes[f"s{s}.l{l}.pw.b"] = (C,)
        shapes[f"s{s}.out.w"] = (K, C)
        shapes[f"s{s}.out.b"] = (K,)
    return shapes


def fan_in(name: str, cfg: ModelConfig) -> int:
    s = int(name[1:name.index(".")])
    if ".in." in name:
        return cfg.stage_input_dim(s)
    if ".dil." in name:
        return 3 * cfg.channels
    return cfg.channels


def _views(flat: np.ndarray, cfg: ModelConfig) -> dict[str, np.ndarray]:
    views, i = {}, 0
    for name, shape in param_shapes(cfg).items():
        size = int(np.prod(shape))
        views[name] = flat[i:i + size].reshape(shape)
        i += size
    return views


class ModelParams:
    """Named parameter arrays backed by one contiguous float64 vector.

    ``arrays`` holds views into ``vector`` in declaration order, so in-place
    updates of either are visible through both.
    """

    def __init__(self, config: ModelConfig, arrays=None, version: int = 0):
        self.config = config
        n = sum(int(np.prod(s)) for s in param_shapes(config).values())
        self.vector = np.zeros(n)
        self.arrays = _views(self.vector, config)
        if arrays is not None:
            for k, v in self.arrays.items():
                v[...] = arrays[k]
        # bumped on every in-place update so stale forward caches can be detected
        self.version = version

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.arrays, self.version)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for every weight and bias."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        bound = 1.0 / np.sqrt(fan_in(name, cfg))
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(cfg, arrays)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    return e / s, z - np.log(s)


def _taps(h, d):
    """Stack the three dilated taps ``h[t-d], h[t], h[t+d]`` (zero padded) as ``(T, 3C)``."""
    T, C = h.shape
    taps = np.zeros((T, 3 * C))
    taps[:, C:2 * C] = h
    if d < T:
        taps[d:, :C] = h[:T - d]
        taps[:T - d, 2 * C:] = h[d:]
    return taps


@dataclass
class ForwardCache:
    params: ModelParams
    version: int
    stages: list = field(default_factory=list)
    probs: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)


def forward(params: ModelParams, features) -> ForwardCache:
    """Run all stages; ``cache.probs[s]`` is the ``(T, K)`` output of stage ``s``."""
    cfg = params.config
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != cfg.feature_dim:
        raise DimensionMismatch(f"features {x.shape} for feature_dim={cfg.feature_dim}")
    if x.shape[0] < 1:
        raise DimensionMismatch("no frames")
    W = params.arrays
    cache = ForwardCache(params, params.version)
    for s in range(cfg.stages):
        h = x @ W[f"s{s}.in.w"].T + W[f"s{s}.in.b"]
        layers = []
        for l in range(cfg.layers_per_stage):
            wd = W[f"s{s}.l{l}.dil.w"]
            taps = _taps(h, 2**l)
            a = taps @ wd.transpose(0, 2, 1).reshape(-1, wd.shape[1]) + W[f"s{s}.l{l}.dil.b"]
            r = np.maximum(a, 0.0)
            h = h + r @ W[f"s{s}.l{l}.pw.w"].T + W[f"s{s}.l{l}.pw.b"]
            layers.append((taps, a, r))
        z = h @ W[f"s{s}.out.w"].T + W[f"s{s}.out.b"]
        p, logp = _softmax(z)
        cache.stages.append((x, layers, h))
        cache.probs.append(p)
        cache.log_probs.append(logp)
        x = p
    return cache


def backward(cache: ForwardCache, grads, log_grads=None) -> dict[str, np.ndarray]:
    """Parameter gradients given per-stage upstream gradients.

    ``grads[s]`` is dL/dp for stage ``s`` and ``log_grads[s]`` is dL/d(log p);
    either entry may be ``None``. Contributions from all stages add up.
    """
    if cache is None or not cache.stages:
        raise StaleCache("no forward cache")
    params = cache.params
    if cache.version != params.version:
        raise StaleCache("parameters changed since the forward pass")
    cfg = params.config
    S = cfg.stages
    grads = list(grads) + [None] * (S - len(grads))
    log_grads = list(log_grads or []) + [None] * (S - len(log_grads or []))
    if len(grads) != S or len(log_grads) != S:
        raise DimensionMismatch(f"expected gradients for {S} stages")
    W = params.arrays
    flat = np.zeros_like(params.vector)
    out = _views(flat, cfg)
    C = cfg.channels
    carry = None  # dL/dp flowing back from the next stage's input
    for s in reversed(range(S)):
        p = cache.probs[s]
        gp = grads[s]
        if gp is not None and np.shape(gp) != p.shape:
            raise DimensionMismatch(f"stage {s} gradient {np.shape(gp)} vs output {p.shape}")
        if carry is not None:
            gp = carry if gp is None else gp + carry
        gz = np.zeros_like(p)
        if gp is not None:
            gz += p * (gp - np.sum(p * gp, axis=1, keepdims=True))
        glp = log_grads[s]
        if glp is not None:
            if np.shape(glp) != p.shape:
                raise DimensionMismatch(f"stage {s} log gradient {np.shape(glp)} vs output {p.shape}")
            gz += glp - p * np.sum(glp, axis=1, keepdims=True)

        x, layers, h = cache.stages[s]
        out[f"s{s}.out.w"] += gz.T @ h
        out[f"s{s}.out.b"] += gz.sum(axis=0)
        gh = gz @ W[f"s{s}.out.w"]
        for l in reversed(range(cfg.layers_per_stage)):
            taps, a, r = layers[l]
            d = 2**l
            out[f"s{s}.l{l}.pw.w"] += gh.T @ r
            out[f"s{s}.l{l}.pw.b"] += gh.sum(axis=0)
            ga = (gh @ W[f"s{s}.l{l}.pw.w"]) * (a > 0)
            out[f"s{s}.l{l}.dil.b"] += ga.sum(axis=0)
            gw = ga.T @ taps  # (C, 3C): out-channel by (tap, in-channel)
            out[f"s{s}.l{l}.dil.w"] += gw.reshape(C, 3, C).transpose(1, 0, 2)
            wd = W[f"s{s}.l{l}.dil.w"]
            gtaps = ga @ wd.transpose(1, 0, 2).reshape(C, 3 * C)
            T = gh.shape[0]
            gh = gh + gtaps[:, C:2 * C]
            if d < T:
                gh[:T - d] += gtaps[d:, :C]
                gh[d:] += gtaps[:T - d, 2 * C:]
        out[f"s{s}.in.w"] += gh.T @ x
        out[f"s{s}.in.b"] += gh.sum(axis=0)
        carry = gh @ W[f"s{s}.in.w"] if s > 0 else None
    return Gradients(flat, out)


class Gradients(dict):
    """Per-parameter gradient views plus the flat vector they live in."""

    def __init__(self, flat: np.ndarray, views: dict):
        super().__init__(views)
        self.vector = flat


def predict(params: ModelParams, features) -> np.ndarray:
    """Final-stage argmax labels."""
    return np.argmax(forward(params, features).probs[-1], axis=1)


_CFG_FIELDS = ("stages", "layers_per_stage", "channels", "feature_dim", "num_classes")


def save_checkpoint(params: ModelParams, path) -> None:
    """Write ``TSSM`` magic, u32 version, five u32 config fields, then f64 parameters."""
    cfg = params.config
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<6I", CHECKPOINT_VERSION, *(getattr(cfg, k) for k in _CFG_FIELDS)))
        f.write(params.vector.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    head = 4 + 6 * 4
    if len(data) < head or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a model checkpoint")
    version, *fields = struct.unpack("<6I", data[4:head])
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig(**dict(zip(_CFG_FIELDS, fields)))
    except ValueError as e:
        raise CorruptCheckpoint(f"{path}: {e}") from None
    shapes = param_shapes(cfg)
    n = sum(int(np.prod(s)) for s in shapes.values())
    if len(data) != head + 8 * n:
        raise CorruptCheckpoint(f"{path}: expected {n} parameters")
    params = ModelParams(cfg)
    params.vector[:] = np.frombuffer(data, dtype="<f8", offset=head)
    return params
