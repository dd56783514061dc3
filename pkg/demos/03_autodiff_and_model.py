"""The autodiff tape and one forward/backward pass through the toy network."""
# %%
import numpy as np

from posecanon import adcore as ad
from posecanon import datagen, geom3d, model as M
from posecanon.losses import LossWeights, model_losses

# %% Record a tiny computation and pull gradients back through it.
x = ad.DiffArray(np.array([[0.5, -1.0, 2.0]]), requires_grad=True, name="x")
with ad.Tape() as tape:
    y = ad.sum_(ad.gelu(ad.matmul(x, np.ones((3, 2)))))
tape.backward(y, [x])
print("y =", float(y.value), " dy/dx =", x.grad)

# %% The toy network: a batch of rotated poses in, rotations and canonical poses out.
cfg = M.ModelConfig.toy()
params = M.init_params(cfg, seed=0)
print("parameters:", sum(p.size for p in params.values()))

rng = np.random.default_rng(0)
poses = datagen.generate_base_poses(4, seed=0)
R = geom3d.random_rotation(rng, 4)
inputs = np.einsum("bjk,bkl->bjl", poses, np.swapaxes(R, 1, 2))
out = M.forward(params, inputs, cfg)
print("predicted rotations are proper:", all(geom3d.is_rotation(r) for r in out.rotation.value))

# %% All loss terms at once, then a finite-difference check of the gradients.
target = poses / cfg.pose_scale
total, parts = model_losses(out, target, R, params, LossWeights())
print({k: round(float(v.value), 5) for k, v in parts.items()}, "total", float(total.value))

report = ad.grad_check(lambda: model_losses(M.forward(params, inputs, cfg), target, R, params)[0],
                       params, max_entries=2, rng=rng)
print(report.summary())
