"""Rotation basics: 6D parameterisation, geodesic distance, camera sampling."""
# %%
import numpy as np

from posecanon import geom3d as G

rng = np.random.default_rng(0)

# %% Any pair of non-parallel 3-vectors maps to a proper rotation.
r6 = rng.normal(size=6)
R = G.rot_from_6d(r6)
print("R =\n", np.round(R, 4))
print("orthonormal:", G.is_rotation(R), " det:", round(float(np.linalg.det(R)), 12))

# The first two columns are the 6D code of R itself.
print("round trip error:", np.abs(G.rot_from_6d(G.rot_to_6d(R)) - R).max())

# %% Geodesic angle between rotations, in degrees.
a = G.rot_z(np.deg2rad(30))
b = G.rot_z(np.deg2rad(75))
print("angle(a, b) =", np.rad2deg(G.geodesic_angle_exact(a, b)))

# %% Camera rotations: mostly frontal yaw with a tail of arbitrary headings.
ranges = G.EulerRanges()
yaws = np.rad2deg([G.sample_euler(rng, ranges).yaw for _ in range(20000)])
hist, edges = np.histogram(yaws, bins=12, range=(-180, 180))
for lo, count in zip(edges[:-1], hist):
    print(f"{lo:7.0f}  {'#' * (count // 100)}")
