import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posecanon import geom3d as G
from posecanon import skeleton as S
from posecanon.errors import DegenerateBone, ParseError, UnknownJointName


def test_layout_shape():
    lay = S.H36M
    assert lay.n_joints == 17
    assert len(lay.edges) == 16
    assert lay.names[lay.pelvis] == "pelvis"
    assert lay.names[lay.l_shoulder] == "l_shoulder"
    assert lay.names[lay.r_hip] == "r_hip"
    assert lay.index("r_wrist") == 16
    a = lay.adjacency()
    assert np.array_equal(a, a.T) and a.sum() == 32


def test_unknown_joint():
    with pytest.raises(UnknownJointName):
        S.H36M.index("tail")


@pytest.mark.parametrize("edges", [
    S.BONES[:-1] + ((16, 15),),            # cycle 15 <-> 16
    S.BONES[:-1] + ((0, 15),),             # 15 gets two parents, 16 orphaned
    S.BONES[:-1],                          # too few edges
    S.BONES[:-1] + ((3, 17),),             # out of range
])
def test_layout_rejects_non_tree(edges):
    with pytest.raises(ValueError):
        S.JointLayout(edges=edges)


def test_angle_triplets_count():
    t = S.H36M.angle_triplets()
    # internal joints with a parent bone: 1,2,4,5,7,8(x3),9,11,12,14,15
    assert len(t) == 13
    for p, j, c in t:
        assert (p, j) in S.BONES and (j, c) in S.BONES


def test_center_at_pelvis(pose):
    shifted = pose + np.array([10.0, 20.0, 30.0])
    np.testing.assert_allclose(S.center_at_pelvis(shifted), pose, atol=1e-12)
    np.testing.assert_array_equal(S.center_at_pelvis(pose), pose)
    c = S.center_at_pelvis(shifted)
    np.testing.assert_array_equal(S.center_at_pelvis(c), c)
    assert np.all(c[0] == 0)


def test_center_with_offset_pelvis():
    p = np.zeros((17, 3))
    p[0] = (10, 20, 30)
    p[5] = (1, 1, 1)
    c = S.center_at_pelvis(p)
    np.testing.assert_array_equal(c[5], [-9, -19, -29])
    np.testing.assert_array_equal(c[3], [-10, -20, -30])


def _unit_chain():
    # each child one unit from its parent, along alternating axes
    p = np.zeros((17, 3))
    axes = np.eye(3)
    for k, (a, b) in enumerate(S.BONES):
        p[b] = p[a] + axes[k % 3]
    return p


def test_bone_lengths_unit_chain():
    np.testing.assert_allclose(S.bone_lengths(_unit_chain()), np.ones(16))


def test_bone_lengths_isometry_and_homogeneity(pose, rng):
    r = G.random_rotation(rng)
    lens = S.bone_lengths(pose)
    np.testing.assert_allclose(S.bone_lengths(G.apply_rotation(r, pose) + 5.0), lens, atol=1e-9)
    np.testing.assert_allclose(S.bone_lengths(2 * pose), 2 * lens, rtol=1e-15)


def _arm(elbow_angle):
    p = _unit_chain() * 100
    sho, elb, wri = 11, 12, 13
    upper = np.array([0.0, -1.0, 0.0])
    p[elb] = p[sho] + 250 * upper
    # forearm makes elbow_angle with the upper-arm direction back to shoulder
    back = -upper
    perp = np.array([0.0, 0.0, 1.0])
    p[wri] = p[elb] + 200 * (math.cos(elbow_angle) * back + math.sin(elbow_angle) * perp)
    return p


@pytest.mark.parametrize("angle", [math.pi, math.pi / 2, 0.4])
def test_joint_angle_at_elbow(angle):
    t = S.H36M.angle_triplets()
    k = [i for i, (p, j, c) in enumerate(t) if j == 12][0]
    assert S.joint_angles(_arm(angle))[k] == pytest.approx(angle, abs=1e-12)


def test_joint_angles_isometry(pose, rng):
    r = G.random_rotation(rng)
    np.testing.assert_allclose(S.joint_angles(G.apply_rotation(r, pose) - 3.0),
                               S.joint_angles(pose), atol=1e-9)


def test_joint_angles_degenerate(pose):
    p = pose.copy()
    p[13] = p[12]
    with pytest.raises(DegenerateBone):
        S.joint_angles(p)


@given(st.integers(0, 2**32 - 1))
def test_lengths_angles_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(17, 3)) * 200
    r = G.random_rotation(rng)
    q = G.apply_rotation(r, p) + rng.normal(size=3) * 1000
    np.testing.assert_allclose(S.bone_lengths(q), S.bone_lengths(p), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(S.joint_angles(q), S.joint_angles(p), atol=1e-9)


def test_canonical_frame_axes():
    f = S.CanonicalFrame()
    np.testing.assert_array_equal(f.lateral, [0, -1, 0])
    b = f.basis()
    assert G.is_rotation(b)
    with pytest.raises(ValueError):
        S.CanonicalFrame(facing=(1, 0, 0), up=(1, 0, 0))
    with pytest.raises(ValueError):
        S.CanonicalFrame(facing=(2, 0, 0))


def _records(poses):
    return [S.PoseRecord(f"p{i}", p, subject="s1", frame_time_s=i / 30) for i, p in enumerate(poses)]


def test_pose_file_round_trip_bit_exact(tmp_path, base_poses, rng):
    poses = base_poses + rng.normal(size=base_poses.shape) * 1e-3
    path = tmp_path / "poses.jsonl"
    S.save_poses(path, _records(poses))
    back = S.load_poses(path)
    assert [r.id for r in back] == [f"p{i}" for i in range(len(poses))]
    assert back[3].subject == "s1" and back[3].frame_time_s == 3 / 30
    for r, p in zip(back, poses):
        assert np.array_equal(r.joints, p)


def test_pose_file_permuted_header(tmp_path, base_poses):
    perm = np.random.default_rng(0).permutation(17)
    path = tmp_path / "perm.jsonl"
    lines = [json.dumps({"format": S.POSE_FORMAT, "version": 1,
                         "joints": [S.JOINT_NAMES[i] for i in perm], "units": "mm"})]
    for i, p in enumerate(base_poses[:3]):
        lines.append(json.dumps({"id": str(i), "joints": p[perm].reshape(-1).tolist()}))
    path.write_text("\n".join(lines) + "\n")
    back = S.load_poses(path)
    for r, p in zip(back, base_poses[:3]):
        np.testing.assert_array_equal(r.joints, p)


def test_pose_file_errors(tmp_path, base_poses):
    path = tmp_path / "x.jsonl"
    S.save_poses(path, _records(base_poses[:3]))
    lines = path.read_text().splitlines()
    bad = lines[:2] + [lines[2][: len(lines[2]) // 2]] + lines[3:]
    path.write_text("\n".join(bad) + "\n")
    with pytest.raises(ParseError, match="line 3"):
        S.load_poses(path)

    row = json.loads(lines[1])
    row["joints"] = row["joints"][:-1]
    path.write_text("\n".join([lines[0], json.dumps(row)]) + "\n")
    with pytest.raises(ParseError, match="line 2"):
        S.load_poses(path)

    header = json.loads(lines[0])
    header["joints"][4] = "tail"
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(UnknownJointName):
        S.load_poses(path)

    header = json.loads(lines[0])
    header["joints"][4] = header["joints"][5]
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(ParseError):
        S.load_poses(path)

    path.write_text("not json\n")
    with pytest.raises(ParseError, match="line 1"):
        S.load_poses(path)
