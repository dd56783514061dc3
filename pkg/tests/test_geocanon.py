import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posecanon import geom3d as G
from posecanon import skeleton as S
from posecanon.errors import DegenerateTorso
from posecanon.geocanon import (geometric_canonicalize, geometric_rotation,
                                is_geometric_canonical, torso_axes)
from posecanon.metrics import mpjpe, pa_mpjpe


def test_canonical_pose_is_fixed_point(pose):
    out, r = geometric_canonicalize(pose)
    np.testing.assert_allclose(r, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(out, pose, atol=1e-9)


def test_torso_normal_faces_minus_x(pose):
    n, l = torso_axes(pose)
    np.testing.assert_allclose(n, [-1, 0, 0], atol=1e-12)
    # left shoulder lies toward -Y
    assert l[1] < 0


@pytest.mark.parametrize("seed", range(10))
def test_recovers_random_rotation(base_poses, seed):
    rng = np.random.default_rng(seed)
    target = base_poses[seed % len(base_poses)]
    r = G.random_rotation(rng)
    out, r_hat = geometric_canonicalize(G.apply_rotation(r, target))
    assert G.geodesic_angle_exact(r_hat, r) < 1e-6
    assert mpjpe(out, target) < 1e-6


def test_reconstruction_identity(pose, rng):
    x = G.apply_rotation(G.random_rotation(rng), pose)
    out, r = geometric_canonicalize(x)
    np.testing.assert_allclose(G.apply_rotation(r, out), x, atol=1e-9)


def test_back_facing_input(pose):
    # normal exactly opposite the facing axis
    x = G.apply_rotation(G.rot_z(np.pi), pose)
    out, r = geometric_canonicalize(x)
    np.testing.assert_allclose(r, G.rot_z(np.pi), atol=1e-12)
    np.testing.assert_allclose(out, pose, atol=1e-9)


def test_collinear_torso_raises():
    p = np.zeros((17, 3))
    for j in (1, 4, 11, 14, 7, 8):
        p[j] = (0, 0, 10.0 * j)
    with pytest.raises(DegenerateTorso):
        geometric_canonicalize(p)
    with pytest.raises(DegenerateTorso):
        is_geometric_canonical(p)


def test_is_canonical_examples(pose):
    out, _ = geometric_canonicalize(G.apply_rotation(G.rot_y(0.4), pose))
    assert is_geometric_canonical(out, tol=1e-6)
    assert not is_geometric_canonical(G.apply_rotation(G.rot_z(np.deg2rad(10)), pose), tol=1e-3)
    mirrored = pose * np.array([1.0, -1.0, 1.0])
    assert not is_geometric_canonical(mirrored, tol=1e-3)
    n, _ = torso_axes(mirrored)
    assert n[0] > 0.99


def test_custom_frame(pose, rng):
    frame = S.CanonicalFrame(facing=(0.0, 0.0, 1.0), up=(1.0, 0.0, 0.0))
    x = G.apply_rotation(G.random_rotation(rng), pose)
    out, _ = geometric_canonicalize(x, frame)
    assert is_geometric_canonical(out, frame, tol=1e-9)
    n, _ = torso_axes(out)
    np.testing.assert_allclose(n, frame.facing, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_idempotent_and_shape_preserving(seed):
    rng = np.random.default_rng(seed)
    p = S.center_at_pelvis(rng.normal(size=(17, 3)) * 300)
    try:
        once, _ = geometric_canonicalize(p)
    except DegenerateTorso:
        return
    twice, r2 = geometric_canonicalize(once)
    np.testing.assert_allclose(twice, once, atol=1e-9)
    np.testing.assert_allclose(r2, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(S.bone_lengths(once), S.bone_lengths(p), atol=1e-9)
    np.testing.assert_allclose(S.joint_angles(once), S.joint_angles(p), atol=1e-9)
    assert pa_mpjpe(once, p) < 1e-9
    assert G.is_rotation(geometric_rotation(p))
