"""Command-line interface: ``semiseg {generate,train,pseudo,smooth,plot}``.

Errors are reported on stderr as ``ErrorName: message`` with exit code 1.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import data as dat
from . import model as tcn
from .continuity import dtw_align, subsample_actions
from .errors import IoError, SchemaError, SegError, UnknownAction
from .losses import classification_loss
from .metrics import REPORT_COLUMNS, MetricReport, reports_to_csv
from .seqcore import segments_from_labels
from .smoothing import smooth_labels, vicinities
from .trainer import LOG_COLUMNS, MODES, TrainConfig, logs_to_csv, train


# --- helpers ----------------------------------------------------------------

def blob_hash(content: bytes) -> str:
    """Git blob id of ``content``."""
    return hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()


def tree_hash(root: Path, files) -> str:
    """Hash over sorted ``relative-path blob-id`` lines."""
    lines = sorted(f"{Path(f).as_posix()} {blob_hash((root / f).read_bytes())}" for f in files)
    return hashlib.sha1("\n".join(lines).encode()).hexdigest()


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str | bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(text, bytes):
            path.write_bytes(text)
        else:
            path.write_text(text)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e.strerror or e}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {out}: {e.strerror or e}") from None
    if not os.access(out, os.W_OK):
        raise IoError(f"{out} is not writable")
    return out


# --- generate ---------------------------------------------------------------

def cmd_generate(args) -> None:
    grammars, opts = dat.load_grammars(args.grammars)
    out = _out_dir(args.out)
    ds = dat.generate(grammars, args.n_videos, args.dim, args.noise, args.seed, n_test=args.n_test,
                      num_classes=opts.get("num_classes"), mean_scale=opts.get("mean_scale", 1.0))
    try:
        ds_doc = dat.save_dataset(ds, out)
    except OSError as e:
        raise IoError(f"cannot write dataset to {out}: {e}") from None
    files = [e[k] for e in ds_doc["videos"] for k in ("features", "labels")] + [ds_doc["mapping"]]
    manifest = {
        "command": "generate",
        "config": {"n_videos": args.n_videos, "n_test": args.n_test, "dim": args.dim,
                   "noise": args.noise, "seed": args.seed, **opts},
        "seeds": [args.seed],
        "inputs": {"grammars": {"path": str(args.grammars),
                                "hash": blob_hash(Path(args.grammars).read_bytes())}},
        "outputs": {"path": str(args.out), "hash": tree_hash(out, files), "files": len(files)},
        "dataset": ds_doc,
    }
    _write(out / "manifest.json", _dump_json(manifest))
    print(f"wrote {len(ds.videos)} videos ({ds.num_classes} classes) to {out}")


# --- train ------------------------------------------------------------------

def _parse_list(text: str, conv=str) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError(f"empty list: {text!r}")
    return [conv(t) for t in items]


def _run_one(job):
    data_dir, frac, cfg_dict = job
    ds = dat.load_dataset(data_dir)
    cfg = TrainConfig.from_dict(cfg_dict)
    split = dat.sample_split(ds.train, frac, cfg.seed, ds.num_classes)
    eval_videos = ds.test or [ds.train[i] for i in split.unlabelled] or ds.train
    try:
        params, logs = train(ds, split, cfg, eval_videos=eval_videos)
    except SegError as e:
        raise type(e)(f"mode {cfg.mode}, seed {cfg.seed}: {e}") from None
    return params.vector.copy(), params.config, logs, split


def _workers(n_jobs: int) -> int:
    try:
        cap = int(os.environ.get("TSS_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_jobs))


def summary_rows(rows, frac_label: str) -> list[tuple]:
    """Seed means per method followed by ``gain_<mode>`` rows against ``base``."""
    by_mode: dict[str, list[MetricReport]] = {}
    for _, _, mode, rep in rows:
        by_mode.setdefault(mode, []).append(rep)
    means = {}
    for mode, reps in by_mode.items():
        vals = np.mean([r.row() for r in reps], axis=0)
        means[mode] = MetricReport(float(vals[0]), float(vals[1]),
                                   {k: float(v) for k, v in zip(reps[0].f1, vals[2:])})
    out = [(frac_label, "mean", mode, rep) for mode, rep in means.items()]
    if "base" in means:
        b = np.array(means["base"].row())
        for mode, rep in means.items():
            if mode == "base":
                continue
            d = np.array(rep.row()) - b
            out.append((frac_label, "mean", f"gain_{mode}",
                        MetricReport(float(d[0]), float(d[1]), {k: float(v) for k, v in zip(rep.f1, d[2:])})))
    return out


def cmd_train(args) -> None:
    modes = _parse_list(args.mode)
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
    seeds = _parse_list(args.seeds, int)
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").exists():
        raise IoError(f"{data_dir}: no manifest.json")
    out = _out_dir(args.out)
    overrides = {k: getattr(args, k) for k in ("warmup_epochs", "joint_epochs", "lr", "omega", "v", "epsilon",
                                                "stages", "layers_per_stage", "channels", "eval_every")
                 if getattr(args, k) is not None}
    jobs = [(str(data_dir), args.labelled_frac, TrainConfig(mode=m, seed=s, **overrides).to_dict())
            for s in seeds for m in modes]
    n = _workers(len(jobs))
    if n > 1:
        with ProcessPoolExecutor(n) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    frac_label = f"{args.labelled_frac:g}"
    rows, written = [], []
    for (_, _, cfg), (vector, mcfg, logs, split) in zip(jobs, results):
        mode, seed = cfg["mode"], cfg["seed"]
        sub = f"seed{seed}"
        _write(out / sub / f"epochs_{mode}.csv", logs_to_csv(logs))
        params = tcn.ModelParams(mcfg, None)
        params.vector[:] = vector
        try:
            tcn.save_checkpoint(params, out / sub / f"model_{mode}.tssm")
        except OSError as e:
            raise IoError(f"cannot write checkpoint: {e}") from None
        _write(out / sub / "split.json", _dump_json({"fraction": split.fraction, "seed": split.seed,
                                                     "labelled": list(split.labelled),
                                                     "unlabelled": list(split.unlabelled)}))
        written += [f"{sub}/epochs_{mode}.csv", f"{sub}/model_{mode}.tssm", f"{sub}/split.json"]
        rows.append((frac_label, seed, mode, logs[-1].report))
    _write(out / "metrics.csv", reports_to_csv(rows))
    _write(out / "summary.csv", reports_to_csv(summary_rows(rows, frac_label)))
    written += ["metrics.csv", "summary.csv"]
    manifest = {
        "command": "train",
        "config": {"labelled_frac": args.labelled_frac, "modes": modes, **overrides},
        "seeds": seeds,
        "inputs": {"data": {"path": str(data_dir),
                            "hash": tree_hash(data_dir, _dataset_files(data_dir))}},
        "outputs": {"path": str(args.out), "hash": tree_hash(out, sorted(set(written))),
                    "files": len(set(written))},
    }
    _write(out / "manifest.json", _dump_json(manifest))
    sys.stdout.write(Path(out / "summary.csv").read_text())


def _dataset_files(data_dir: Path) -> list[str]:
    doc = json.loads((data_dir / "manifest.json").read_text())
    d = doc.get("dataset", doc)
    return [e[k] for e in d["videos"] for k in ("features", "labels")] + [d.get("mapping", "mapping.txt")]


# --- pseudo -----------------------------------------------------------------

def _names(data_dir) -> list[str] | None:
    if data_dir is None:
        return None
    path = Path(data_dir) / "mapping.txt"
    if not path.exists():
        return None
    m = dat.read_mapping(path)
    return [n for n, _ in sorted(m.items(), key=lambda kv: kv[1])]


def _video_features(args) -> np.ndarray:
    path = Path(args.video)
    if path.suffix == ".tsft" and path.exists():
        return dat.read_features(path)
    if args.data is None:
        raise IoError(f"{args.video}: not a feature file; pass --data to look it up by id")
    feat = Path(args.data) / "features" / f"{args.video}.tsft"
    if not feat.exists():
        raise UnknownAction(f"no video {args.video!r} in {args.data}")
    return dat.read_features(feat)


def pseudo_report(P, omega: int, names=None) -> str:
    """Sub-sampled actions, aligned segments and continuity cost of ``P``."""
    actions = subsample_actions(P, omega)
    ali = dtw_align(actions, P)
    cost = classification_loss(P, ali.labels).value + 0.0  # no "-0.000000"
    name = (lambda k: names[k]) if names else str
    lines = ["actions: " + " ".join(name(int(a)) for a in actions), "segments:", "label\tstart\tend"]
    lines += [f"{name(s.label)}\t{s.start}\t{s.end}" for s in segments_from_labels(ali.labels)]
    lines.append(f"cost: {cost:.6f}")
    return "\n".join(lines) + "\n"


def cmd_pseudo(args) -> None:
    if args.probs is not None:
        P = dat.read_features(args.probs)
    else:
        if args.checkpoint is None or args.video is None:
            raise ValueError("pass --checkpoint and --video, or --probs")
        params = tcn.load_checkpoint(args.checkpoint)
        P = tcn.forward(params, _video_features(args)).probs[-1]
    sys.stdout.write(pseudo_report(P, args.omega, _names(args.data)))


# --- smooth -----------------------------------------------------------------

def read_label_file(path, mapping=None) -> tuple[np.ndarray, list[str] | None]:
    """Labels from a file of integer ids or action names (one per line)."""
    path = Path(path)
    try:
        tokens = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as e:
        raise IoError(f"cannot read {path}: {e.strerror or e}") from None
    if tokens and all(t.lstrip("-").isdigit() for t in tokens):
        return np.array([int(t) for t in tokens], dtype=np.int64), None
    if mapping is None:
        mapping = path.parent.parent / "mapping.txt"
        if not mapping.exists():
            mapping = path.parent / "mapping.txt"
    m = dat.read_mapping(mapping)
    names = [n for n, _ in sorted(m.items(), key=lambda kv: kv[1])]
    return dat.read_groundtruth(path, m), names


def smooth_report(labels, v: float, eps: float, names=None) -> str:
    K = int(labels.max()) + 1 if names is None else len(names)
    vics = vicinities(segments_from_labels(labels), v)
    soft = smooth_labels(labels, v, eps, K)
    name = (lambda k: names[k]) if names else str
    lines = ["vicinities:", "side\tstart\tend\tboundary\town\tother"]
    lines += [f"{z.side}\t{z.start}\t{z.end}\t{z.boundary}\t{name(z.own)}\t{name(z.other)}" for z in vics]
    lines += ["soft rows:", "frame\t" + "\t".join(name(k) for k in range(K))]
    frames = sorted({t for z in vics for t in range(z.start, z.end)})
    lines += [f"{t}\t" + "\t".join(f"{p:.6f}" for p in soft[t]) for t in frames]
    return "\n".join(lines) + "\n"


def cmd_smooth(args) -> None:
    labels, names = read_label_file(args.labels, args.mapping)
    sys.stdout.write(smooth_report(labels, args.v, args.eps, names))


# --- plot -------------------------------------------------------------------

PLOT_REQUIRED = ("epoch", "pseudo_acc")
_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def read_epoch_logs(log_dir) -> dict[str, dict[str, np.ndarray]]:
    """Seed-averaged epoch series per mode from ``epochs_<mode>.csv`` files under ``log_dir``."""
    log_dir = Path(log_dir)
    files = sorted(log_dir.rglob("epochs_*.csv")) if log_dir.is_dir() else []
    if not files:
        raise SchemaError(f"{log_dir}: no epochs_<mode>.csv logs found")
    per_mode: dict[str, list[dict[str, np.ndarray]]] = {}
    for f in files:
        rows = list(csv.DictReader(io.StringIO(f.read_text())))
        header = rows[0].keys() if rows else []
        missing = [c for c in PLOT_REQUIRED if c not in header]
        if missing:
            raise SchemaError(f"{f}: missing column(s) {', '.join(missing)}")
        cols = {c: np.array([float(r[c]) for r in rows]) for c in header if c in LOG_COLUMNS}
        per_mode.setdefault(f.stem[len("epochs_"):], []).append(cols)
    out = {}
    for mode, runs in per_mode.items():
        n = min(len(r["epoch"]) for r in runs)
        keys = set.intersection(*(set(r) for r in runs))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns stay NaN
            out[mode] = {k: np.nanmean([r[k][:n] for r in runs], axis=0) for k in keys}
    return out


def _polyline(xs, ys, box, xr, yr, colour, mode) -> str:
    x0, y0, w, h = box
    pts = []
    for x, y in zip(xs, ys):
        if not (math.isfinite(x) and math.isfinite(y)):
            continue
        px = x0 + (x - xr[0]) / ((xr[1] - xr[0]) or 1) * w
        py = y0 + h - (y - yr[0]) / ((yr[1] - yr[0]) or 1) * h
        pts.append(f"{px:.2f},{py:.2f}")
    return (f'<polyline class="series" data-mode="{escape(mode)}" fill="none" stroke="{colour}" '
            f'stroke-width="1.5" points="{" ".join(pts)}"/>')


def render_svg(series: dict[str, dict[str, np.ndarray]]) -> str:
    """Two panels (pseudo-label accuracy, summed losses) against epoch."""
    modes = sorted(series)
    W, H, pad = 900, 380, 50
    panels = [("pseudo_acc", "pseudo-label accuracy (%)"), ("loss", "total loss")]
    totals = {}
    for m in modes:
        cols = [series[m][c] for c in ("l_cls", "l_sm", "l_aff", "l_cont", "l_pse") if c in series[m]]
        totals[m] = np.nansum(cols, axis=0) if cols else np.full_like(series[m]["epoch"], np.nan)
    xs_all = np.concatenate([series[m]["epoch"] for m in modes])
    xr = (float(np.nanmin(xs_all)), float(np.nanmax(xs_all)))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
             '<rect width="100%" height="100%" fill="white"/>']
    pw = (W - 3 * pad) / 2
    for i, (key, title) in enumerate(panels):
        box = (pad + i * (pw + pad), pad, pw, H - 2 * pad - 40)
        ys = [series[m]["pseudo_acc"] if key == "pseudo_acc" else totals[m] for m in modes]
        finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([])
        yr = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
        x0, y0, w, h = box
        parts.append(f'<g class="panel" data-column="{key}">')
        parts.append(f'<rect x="{x0}" y="{y0}" width="{w:.2f}" height="{h}" fill="none" stroke="#444"/>')
        parts.append(f'<text x="{x0 + w / 2:.2f}" y="{y0 - 12}" text-anchor="middle" font-size="14">{title}</text>')
        parts.append(f'<text x="{x0}" y="{y0 + h + 16}" font-size="11">{xr[0]:g}</text>')
        parts.append(f'<text x="{x0 + w:.2f}" y="{y0 + h + 16}" text-anchor="end" font-size="11">epoch {xr[1]:g}</text>')
        parts.append(f'<text x="{x0 - 4}" y="{y0 + h}" text-anchor="end" font-size="11">{yr[0]:.3g}</text>')
        parts.append(f'<text x="{x0 - 4}" y="{y0 + 10}" text-anchor="end" font-size="11">{yr[1]:.3g}</text>')
        for j, (m, y) in enumerate(zip(modes, ys)):
            parts.append(_polyline(series[m]["epoch"], y, box, xr, yr, _COLOURS[j % len(_COLOURS)], m))
        parts.append("</g>")
    parts.append('<g class="legend">')
    for j, m in enumerate(modes):
        x = pad + j * 120
        c = _COLOURS[j % len(_COLOURS)]
        parts.append(f'<line x1="{x}" y1="{H - 25}" x2="{x + 20}" y2="{H - 25}" stroke="{c}" stroke-width="3"/>')
        parts.append(f'<text class="legend-entry" x="{x + 26}" y="{H - 21}" font-size="12">{escape(m)}</text>')
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> None:
    _write(Path(args.out), render_svg(read_epoch_logs(args.logs)))
    print(f"wrote {args.out}")


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semiseg", description="Semi-supervised temporal action segmentation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--grammars", required=True, help="JSON file of activity grammars")
    g.add_argument("--n-videos", type=int, required=True)
    g.add_argument("--n-test", type=int, default=0, help="extra held-out videos")
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--noise", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one or more modes over split seeds")
    t.add_argument("--data", required=True)
    t.add_argument("--labelled-frac", type=float, required=True)
    t.add_argument("--mode", required=True, help="mode or comma list: " + ", ".join(MODES))
    t.add_argument("--seeds", default="1,2,3,4,5")
    t.add_argument("--out", required=True)
    for flag, typ in (("--warmup-epochs", int), ("--joint-epochs", int), ("--lr", float), ("--omega", int),
                      ("--v", float), ("--epsilon", float), ("--stages", int), ("--layers-per-stage", int),
                      ("--channels", int), ("--eval-every", int)):
        t.add_argument(flag, type=typ, default=None)
    t.set_defaults(func=cmd_train)

    ps = sub.add_parser("pseudo", help="inspect continuity pseudo-labels")
    ps.add_argument("--checkpoint")
    ps.add_argument("--video", help="video id (with --data) or .tsft path")
    ps.add_argument("--data")
    ps.add_argument("--probs", help="TSFT file holding a probability matrix instead of a model")
    ps.add_argument("--omega", type=int, default=20)
    ps.set_defaults(func=cmd_pseudo)

    s = sub.add_parser("smooth", help="inspect boundary smoothing")
    s.add_argument("--labels", required=True)
    s.add_argument("--mapping")
    s.add_argument("--v", type=float, default=0.05)
    s.add_argument("--eps", type=float, default=5.0)
    s.set_defaults(func=cmd_smooth)

    pl = sub.add_parser("plot", help="SVG of pseudo-label accuracy and losses per epoch")
    pl.add_argument("--logs", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (SegError, ValueError, LookupError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
