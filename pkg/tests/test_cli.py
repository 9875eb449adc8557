import csv
import io
import json
import re

import numpy as np
import pytest

from semiseg import data as dat
from semiseg.cli import main, read_epoch_logs, render_svg
from semiseg.continuity import dtw_align, subsample_actions
from semiseg.model import ModelConfig, forward, init_params, save_checkpoint
from semiseg.seqcore import segments_from_labels

GRAMMAR_DOC = {"grammars": [
    {"activity": "a", "template": [0, 1, 2], "durations": [[10, 2], [8, 1], [9, 2]], "swaps": [[0, 1]]},
    {"activity": "b", "template": [3, 1], "durations": [[12, 3], [10, 2]]},
]}
TRAIN_FLAGS = ["--warmup-epochs", "2", "--joint-epochs", "1", "--layers-per-stage", "2", "--channels", "8"]


def _tree(root):
    """File contents under ``root``; manifests lose the output path, which differs by design."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name == "manifest.json":
                doc = json.loads(data)
                doc["outputs"].pop("path")
                data = json.dumps(doc, sort_keys=True).encode()
            out[p.relative_to(root).as_posix()] = data
    return out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "g.json").write_text(json.dumps(GRAMMAR_DOC))
    out = root / "data"
    assert main(["generate", "--grammars", str(root / "g.json"), "--n-videos", "8", "--n-test", "2",
                 "--dim", "4", "--noise", "0.5", "--seed", "3", "--out", str(out)]) == 0
    return root, out


@pytest.fixture(scope="module")
def trained(dataset):
    root, data = dataset
    out = root / "run"
    assert main(["train", "--data", str(data), "--labelled-frac", "0.25", "--mode", "base,full",
                 "--seeds", "1,2", "--out", str(out)] + TRAIN_FLAGS) == 0
    return out


def test_generate_deterministic(dataset, tmp_path):
    root, first = dataset
    again = tmp_path / "again"
    main(["generate", "--grammars", str(root / "g.json"), "--n-videos", "8", "--n-test", "2",
          "--dim", "4", "--noise", "0.5", "--seed", "3", "--out", str(again)])
    assert _tree(first) == _tree(again)


def test_generate_layout(dataset):
    _, out = dataset
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["command"] == "generate" and len(doc["dataset"]["videos"]) == 10
    ds = dat.load_dataset(out)
    assert len(ds.train) == 8 and len(ds.test) == 2
    assert re.fullmatch(r"[0-9a-f]{40}", doc["outputs"]["hash"])


def test_malformed_grammar(tmp_path, capsys):
    bad = {"grammars": [{"activity": "a", "template": [0, 1], "durations": [[5, 1], [5, "x"]]}]}
    (tmp_path / "g.json").write_text(json.dumps(bad))
    code = main(["generate", "--grammars", str(tmp_path / "g.json"), "--n-videos", "2", "--dim", "2",
                 "--noise", "0", "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code != 0 and err.startswith("GrammarError") and "durations[1]" in err


def test_unwritable_output(dataset, tmp_path, capsys):
    root, _ = dataset
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = main(["generate", "--grammars", str(root / "g.json"), "--n-videos", "2", "--dim", "2",
                 "--noise", "0", "--out", str(blocker / "sub")])
    assert code != 0 and capsys.readouterr().err.startswith("IoError")


def test_train_outputs(trained):
    for s in (1, 2):
        for m in ("base", "full"):
            assert (trained / f"seed{s}" / f"epochs_{m}.csv").exists()
            assert (trained / f"seed{s}" / f"model_{m}.tssm").exists()
    assert json.loads((trained / "manifest.json").read_text())["seeds"] == [1, 2]


def test_summary_means_and_gain(trained):
    metrics = list(csv.DictReader(io.StringIO((trained / "metrics.csv").read_text())))
    summary = {r["method"]: r for r in csv.DictReader(io.StringIO((trained / "summary.csv").read_text()))}
    assert {r["seed"] for r in metrics} == {"1", "2"}
    for col in ("acc", "edit", "f1_10", "f1_25", "f1_50"):
        for m in ("base", "full"):
            mean = np.mean([float(r[col]) for r in metrics if r["method"] == m])
            assert float(summary[m][col]) == pytest.approx(mean, abs=1e-4)
        gain = float(summary["full"][col]) - float(summary["base"][col])
        assert float(summary["gain_full"][col]) == pytest.approx(gain, abs=2e-4)


def test_train_base_equals_full_without_joint(dataset, tmp_path):
    _, data = dataset
    flags = ["--data", str(data), "--labelled-frac", "0.25", "--seeds", "1"] + TRAIN_FLAGS
    main(["train", "--mode", "base", "--out", str(tmp_path / "b")] + flags)
    main(["train", "--mode", "full", "--out", str(tmp_path / "f")] + flags + ["--joint-epochs", "0"])
    assert (tmp_path / "b/seed1/model_base.tssm").read_bytes() == (tmp_path / "f/seed1/model_full.tssm").read_bytes()


def test_train_deterministic(dataset, trained, tmp_path):
    _, data = dataset
    main(["train", "--data", str(data), "--labelled-frac", "0.25", "--mode", "base,full",
          "--seeds", "1,2", "--out", str(tmp_path / "r")] + TRAIN_FLAGS)
    assert _tree(trained) == _tree(tmp_path / "r")


def test_pseudo_matches_library(dataset, trained, capsys):
    _, data = dataset
    ckpt = trained / "seed1" / "model_full.tssm"
    assert main(["pseudo", "--checkpoint", str(ckpt), "--video", "train_0000", "--data", str(data),
                 "--omega", "5"]) == 0
    out = capsys.readouterr().out
    from semiseg.model import load_checkpoint
    P = forward(load_checkpoint(ckpt), dat.read_features(data / "features/train_0000.tsft")).probs[-1]
    ali = dtw_align(subsample_actions(P, 5), P)
    names = [f"action_{k:02d}" for k in range(4)]
    expected = [f"{names[s.label]}\t{s.start}\t{s.end}" for s in segments_from_labels(ali.labels)]
    body = out.split("label\tstart\tend\n")[1].splitlines()[:-1]
    assert body == expected


def test_pseudo_one_hot_cost_zero(tmp_path, capsys):
    P = np.zeros((12, 3), np.float32)
    P[:5, 2] = P[5:, 0] = 1
    dat.write_features(P, tmp_path / "p.tsft")
    assert main(["pseudo", "--probs", str(tmp_path / "p.tsft"), "--omega", "2"]) == 0
    out = capsys.readouterr().out
    assert "actions: 2 0" in out and out.rstrip().endswith("cost: 0.000000")


def test_pseudo_bad_checkpoint(tmp_path, capsys):
    (tmp_path / "m.tssm").write_bytes(b"nope")
    (tmp_path / "v.tsft").write_bytes(b"")
    assert main(["pseudo", "--checkpoint", str(tmp_path / "m.tssm"), "--video", str(tmp_path / "v.tsft")]) != 0
    assert capsys.readouterr().err.startswith("CorruptCheckpoint")


def test_smooth(tmp_path, capsys):
    (tmp_path / "y.txt").write_text("\n".join(["0"] * 20 + ["1"] * 20) + "\n")
    assert main(["smooth", "--labels", str(tmp_path / "y.txt"), "--v", "0.1", "--eps", "5"]) == 0
    out = capsys.readouterr().out
    table = out.split("soft rows:")[0].strip().splitlines()[2:]
    assert table == ["left\t18\t20\t20\t0\t1", "right\t20\t22\t20\t1\t0"]
    rows = out.split("soft rows:")[1].strip().splitlines()[1:]
    assert [int(r.split("\t")[0]) for r in rows] == [18, 19, 20, 21]
    first = [float(x) for x in rows[0].split("\t")[1:]]
    assert first[0] == pytest.approx(1 / (1 + np.exp(-5)), abs=1e-6)


def test_smooth_zero_vicinity(tmp_path, capsys):
    (tmp_path / "y.txt").write_text("0\n0\n0\n1\n1\n1\n")
    assert main(["smooth", "--labels", str(tmp_path / "y.txt"), "--v", "0"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[:2] == ["vicinities:", "side\tstart\tend\tboundary\town\tother"]
    assert out[2] == "soft rows:" and len(out) == 4


def test_smooth_names(dataset, capsys):
    _, data = dataset
    assert main(["smooth", "--labels", str(data / "groundTruth/train_0000.txt"), "--v", "0.2"]) == 0
    assert "action_0" in capsys.readouterr().out


def _log(path, values):
    lines = ["epoch,l_cls,l_sm,l_aff,l_cont,l_pse,pseudo_acc,acc,edit,f1_10,f1_25,f1_50"]
    lines += [f"{i},1.0,0.1,nan,nan,nan,{v},nan,nan,nan,nan,nan" for i, v in enumerate(values)]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _points(svg, mode, panel="pseudo_acc"):
    block = svg.split(f'data-column="{panel}"')[1].split("</g>")[0]
    pts = re.search(rf'data-mode="{mode}"[^>]*points="([^"]*)"', block).group(1)
    return [tuple(map(float, p.split(","))) for p in pts.split()]


def test_plot_two_modes_monotone(tmp_path):
    _log(tmp_path / "logs/seed1/epochs_full.csv", [10, 20, 35, 50, 70])
    _log(tmp_path / "logs/seed1/epochs_base.csv", [5, 5, 6, 6, 7])
    assert main(["plot", "--logs", str(tmp_path / "logs"), "--out", str(tmp_path / "p.svg")]) == 0
    svg = (tmp_path / "p.svg").read_text()
    assert svg.count('class="legend-entry"') == 2
    pts = _points(svg, "full")
    assert len(pts) == 5
    assert all(a[0] < b[0] and a[1] > b[1] for a, b in zip(pts, pts[1:]))  # SVG y grows downwards


def test_plot_averages_seeds(tmp_path):
    _log(tmp_path / "s1/epochs_aff.csv", [10, 20])
    _log(tmp_path / "s2/epochs_aff.csv", [30, 40])
    series = read_epoch_logs(tmp_path)
    assert series["aff"]["pseudo_acc"].tolist() == [20, 30]
    assert "polyline" in render_svg(series)


def test_plot_schema_errors(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["plot", "--logs", str(tmp_path / "empty"), "--out", str(tmp_path / "x.svg")]) != 0
    assert capsys.readouterr().err.startswith("SchemaError")
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad/epochs_full.csv").write_text("epoch,l_cls\n0,1.0\n")
    assert main(["plot", "--logs", str(tmp_path / "bad"), "--out", str(tmp_path / "x.svg")]) != 0
    assert "pseudo_acc" in capsys.readouterr().err


def test_noise_free_ceiling(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps(GRAMMAR_DOC))
    main(["generate", "--grammars", str(tmp_path / "g.json"), "--n-videos", "6", "--n-test", "3",
          "--dim", "6", "--noise", "0", "--seed", "0", "--out", str(tmp_path / "d")])
    main(["train", "--data", str(tmp_path / "d"), "--labelled-frac", "1", "--mode", "base", "--seeds", "0",
          "--out", str(tmp_path / "r"), "--warmup-epochs", "25", "--layers-per-stage", "3", "--channels", "16",
          "--lr", "0.01", "--eval-every", "100"])
    row = next(csv.DictReader(io.StringIO((tmp_path / "r/metrics.csv").read_text())))
    assert float(row["acc"]) >= 99
