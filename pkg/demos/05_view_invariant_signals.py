"""Wrist acceleration from one motion seen by five cameras, before and after canonicalization."""
# %%
import itertools
from pathlib import Path

import numpy as np

from posecanon import datagen, geom3d, kinematics as K
from posecanon.cli import render_svg
from posecanon.geocanon import geometric_canonicalize

seq = datagen.generate_motion_sequence(150, rate=30.0, seed=8)
views = [(0, 0, 0), (-120, -20, 5), (45, 10, -10), (170, 25, 12), (-60, -5, -15)]


def wrist_accel(poses):
    traj = K.extract_trajectory(poses, "r_wrist", rate=30.0)
    return K.normalize_signal(K.finite_diff(traj, 2))


# %%
raw, canon = [], []
for ypr in views:
    R = geom3d.euler_to_matrix(geom3d.EulerYPR(*np.deg2rad(ypr)))
    seen = seq @ R.T
    raw.append(wrist_accel(seen))
    canon.append(wrist_accel(K.canonicalize_sequence(seen, geometric_canonicalize).poses))


def worst_pearson(signals):
    return min(min(K.compare_signals(a, b)["pearson"])
               for a, b in itertools.combinations(signals, 2))


print("camera frame    : worst pairwise Pearson", round(worst_pearson(raw), 4))
print("canonical frame : worst pairwise Pearson", round(worst_pearson(canon), 9))

# %% Overlay the x channel of every view.
labels = [f"view{i}" for i in range(len(views))]
out = Path("wrist_accel.svg")
out.write_text(render_svg(canon, labels, channel=0))
print("wrote", out.resolve())
