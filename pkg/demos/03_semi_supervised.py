# %% [markdown]
# # Semi-supervised training on synthetic videos
#
# Three activity grammars generate 60 training videos of Gaussian cluster
# features. Only 10% carry labels. We compare supervised training on those
# alone with the full method, which also learns from the unlabelled videos.
# Takes a few seconds on one core.

# %%
import json
from pathlib import Path

import numpy as np

from semiseg.data import generate, grammar_from_dict, sample_split
from semiseg.trainer import TrainConfig, train

doc = json.loads((Path(__file__).parent / "grammars.json").read_text())
grammars = [grammar_from_dict(g) for g in doc["grammars"]]
ds = generate(grammars, 60, 8, noise_sigma=4.0, seed=0, n_test=20)
split = sample_split(ds.train, 0.1, seed=0, K=ds.num_classes)
print(len(split.labelled), "labelled,", len(split.unlabelled), "unlabelled")

# %%
results = {}
for mode in ("base", "full"):
    params, logs = train(ds, split, TrainConfig(mode=mode, seed=0, eval_every=10))
    results[mode] = logs
    r = logs[-1].report
    print(f"{mode:5s} acc {r.acc:5.1f}  edit {r.edit:5.1f}  F1@50 {r.f1[0.5]:5.1f}")

# %% [markdown]
# Pseudo-label accuracy on the unlabelled videos, every 10 epochs. The
# joint phase starts after epoch 30.

# %%
for log in results["full"]:
    if not np.isnan(log.pseudo_acc):
        print(log.epoch, round(log.pseudo_acc, 1))
