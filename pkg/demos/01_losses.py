# %% [markdown]
# # Losses on a toy prediction
#
# A 40-frame video with three actions. We corrupt a one-hot prediction with
# a few flickering frames and look at what each unsupervised loss sees.

# %%
import numpy as np

from semiseg.continuity import continuity_loss, dtw_align, subsample_actions
from semiseg.losses import affinity_loss, associate_anchor
from semiseg.seqcore import action_frequency_from_labels, soft_action_frequency
from semiseg.smoothing import smooth_labels, vicinities
from semiseg.seqcore import segments_from_labels

rng = np.random.default_rng(0)
K = 4
y = np.repeat([0, 2, 1], [12, 16, 12])
P = np.full((len(y), K), 0.05)
P[np.arange(len(y)), y] = 0.85
flicker = rng.choice(len(y), 6, replace=False)
P[flicker] = np.roll(P[flicker], 1, axis=1)

# %% [markdown]
# ## Affinity
# The soft frequency of the prediction is matched to the nearest labelled
# frequency. Here the "labelled set" is two made-up videos.

# %%
anchors = [action_frequency_from_labels(np.repeat([0, 2, 1], [10, 20, 10]), K),
           action_frequency_from_labels(np.repeat([3, 1], [30, 10]), K)]
p = soft_action_frequency(P)
idx, _ = associate_anchor(p, anchors)
print("soft frequency", p.round(3), "-> anchor", idx)
print("affinity loss", round(affinity_loss(P, anchors).value, 4))

# %% [markdown]
# ## Continuity
# Windows of 8 frames give the ordered action list; DTW then spreads it over
# the frames. The flicker disappears from the aligned labels.

# %%
actions = subsample_actions(P, 8)
ali = dtw_align(actions, P)
print("actions", actions, "boundaries", ali.boundaries)
print("argmax errors", int((P.argmax(1) != y).sum()), "aligned errors", int((ali.labels != y).sum()))
print("continuity loss", round(continuity_loss(P, 8).value, 4))

# %% [markdown]
# ## Boundary smoothing
# With v = 0.25 every boundary gets a vicinity a quarter of its segment long.

# %%
for vic in vicinities(segments_from_labels(ali.labels), 0.25):
    print(vic)
soft = smooth_labels(ali.labels, v=0.25, epsilon=5)
print(soft[8:16].round(3))
