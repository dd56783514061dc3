"""Train the toy preset on a small synthetic corpus and compare with the baselines.

Takes about half a minute on a laptop CPU.
"""
# %%
import numpy as np

from posecanon import datagen, metrics, model as M, trainer
from posecanon.geocanon import geometric_canonicalize

corpus = datagen.build_corpus(datagen.generate_base_poses(500, seed=0), 4, seed=0)
print({k: len(v) for k, v in corpus.items()})

# %%
cfg = trainer.TrainConfig(seed=0)
result = trainer.train(cfg, corpus, log=print)

# %% Held-out comparison: no canonicalization, the network, the geometric method.
net = M.Model(result["cfg"], result["params"])
test = corpus["test"]
rows = {
    "none": metrics.evaluate_corpus(lambda p: (p, np.eye(3)), test),
    "network": metrics.evaluate_corpus(net, test),
    "geometric": metrics.evaluate_corpus(geometric_canonicalize, test),
}
for name, rep in rows.items():
    s = rep.summary()
    print(f"{name:10s} MPJPE {s['mean_mpjpe_mm']:8.2f}  PA-MPJPE {s['mean_pa_mpjpe_mm']:7.2f}  "
          f"rot {s['mean_rot_err_deg']:7.2f} (median {s['median_rot_err_deg']:.2f})")
