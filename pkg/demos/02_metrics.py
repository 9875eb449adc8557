# %% [markdown]
# # Segmentation metrics
#
# Frame accuracy rewards getting most frames right; Edit and F1@k punish
# over-segmentation. A prediction with a single spurious frame shows the gap.

# %%
import numpy as np

from semiseg.metrics import edit_score, f1_at_overlap, frame_accuracy, segment_report, total_variance
from semiseg.seqcore import action_frequency_from_labels

gt = np.repeat([0, 1, 2], [20, 20, 20])
pred = gt.copy()
pred[30] = 0

print("acc", frame_accuracy(pred, gt))
print("edit", round(edit_score(pred, gt), 3))
for k in (0.1, 0.25, 0.5):
    print(f"F1@{k}", round(f1_at_overlap(pred, gt, k), 3))

# %% [markdown]
# Reports pool accuracy over all frames and average the segmental scores
# per video.

# %%
rep = segment_report([pred, gt], [gt, gt])
print(rep.row())

# %% [markdown]
# Total variance of action frequencies measures how alike the videos of a
# dataset are.

# %%
same = [action_frequency_from_labels(gt, 3)] * 4
varied = [action_frequency_from_labels(np.repeat([0, 1, 2], n), 3) for n in ([10, 30, 20], [25, 5, 30], [20, 20, 20])]
print("identical videos", total_variance(same), "varied", round(total_variance(varied), 5))
