import json

import numpy as np
import pytest

from posecanon import datagen as D
from posecanon import geom3d as G
from posecanon.errors import InvalidSplit, ParseError, UnknownJointName, VersionMismatch
from posecanon.geocanon import geometric_canonicalize, is_geometric_canonical
from posecanon.skeleton import JOINT_NAMES, POSE_FORMAT, PoseRecord, bone_lengths, save_poses


def test_mix_seed():
    assert D.mix_seed(1, 2) == D.mix_seed(1, 2)
    seeds = {D.mix_seed(0, i) for i in range(10000)}
    assert len(seeds) == 10000
    assert all(0 <= s < 2**64 for s in seeds)
    # SplitMix64 reference value for state 0
    assert D.mix_seed(0, 0) == 0xE220A8397B1DCDAF


def test_make_pair_zero_ranges(pose):
    s = D.make_pair(pose, np.random.default_rng(0), G.EulerRanges.zero())
    np.testing.assert_array_equal(s.rotation, np.eye(3))
    np.testing.assert_array_equal(s.input, pose)


def test_make_pair_deterministic(pose):
    a = D.make_pair(pose, np.random.default_rng(5))
    b = D.make_pair(pose, np.random.default_rng(5))
    assert np.array_equal(a.input, b.input) and np.array_equal(a.rotation, b.rotation)
    np.testing.assert_allclose(a.input, G.apply_rotation(a.rotation, pose), atol=1e-9)
    np.testing.assert_array_equal(a.rotation, G.euler_to_matrix(a.euler))


def test_make_pair_preserves_bones_10k(base_poses):
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(10_000):
        p = base_poses[i % len(base_poses)]
        s = D.make_pair(p, rng)
        worst = max(worst, np.abs(bone_lengths(s.input) - bone_lengths(s.target)).max())
    assert worst < 1e-9


def test_make_pair_jitter(pose):
    s = D.make_pair(pose, np.random.default_rng(2), jitter_mm=5.0)
    assert np.all(s.input[0] == 0)
    diff = s.input - G.apply_rotation(s.rotation, pose)
    assert 1.0 < np.abs(diff).mean() < 20.0


def test_base_poses_properties():
    poses = D.generate_base_poses(200, seed=11)
    assert poses.shape == (200, 17, 3)
    template = D.template_bone_lengths()
    for p in poses:
        assert is_geometric_canonical(p, tol=1e-6)
        np.testing.assert_allclose(bone_lengths(p), template, atol=1e-9)
        assert np.all(p[0] == 0)
    assert bone_lengths(poses).min() > 50
    np.testing.assert_array_equal(D.generate_base_poses(5, seed=11), poses[:5])
    with pytest.raises(ValueError):
        D.generate_base_poses(0, seed=1)


def test_base_poses_vary():
    poses = D.generate_base_poses(50, seed=3)
    spread = poses.std(axis=0)
    assert spread[13].min() > 20  # wrists move around


def test_base_config_versioned():
    cfg = D.load_base_config()
    assert cfg["version"] == 1
    assert set(cfg["bone_mm"]) >= {"thigh", "shin", "forearm"}


def test_split_and_counts():
    bases = D.generate_base_poses(50, seed=0)
    corpus = D.build_corpus(bases, 40, seed=0)
    assert [len(corpus[k]) for k in D.SPLITS] == [1600, 200, 200]
    ids = {k: {s.base_id for s in corpus[k]} for k in D.SPLITS}
    assert not (ids["train"] & ids["val"] or ids["train"] & ids["test"] or ids["val"] & ids["test"])
    one = D.build_corpus(bases[:5], 2, seed=0, split=(1, 0, 0))
    assert len(one["train"]) == 10 and not one["val"] and not one["test"]


@pytest.mark.parametrize("split", [(0.5, 0.5, 0.5), (1.2, -0.1, -0.1), (0.5, 0.5)])
def test_invalid_split(split):
    with pytest.raises(InvalidSplit):
        D.build_corpus(np.zeros((3, 17, 3)), 1, seed=0, split=split)


def test_dataset_self_consistent_with_geometric():
    corpus = D.build_corpus(D.generate_base_poses(20, seed=1), 10, seed=1)
    for s in corpus["train"] + corpus["val"] + corpus["test"]:
        _, r = geometric_canonicalize(s.input)
        assert G.geodesic_angle_exact(r, s.rotation) < 1e-6


def test_corpus_files_byte_identical(tmp_path):
    def build(out):
        corpus = D.build_corpus(D.generate_base_poses(6, seed=2), 3, seed=2)
        D.write_corpus(out, corpus, 2, G.EulerRanges())
        return corpus

    corpus = build(tmp_path / "a")
    build(tmp_path / "b")
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "corpus.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    back = D.read_corpus(tmp_path / "a")
    for k in D.SPLITS:
        assert len(back[k]) == len(corpus[k])
        for s, t in zip(back[k], corpus[k]):
            assert np.array_equal(s.input, t.input) and np.array_equal(s.target, t.target)
            assert np.array_equal(s.rotation, t.rotation)
            assert s.base_id == t.base_id and s.seed == t.seed
            assert np.array_equal(s.euler.as_array(), t.euler.as_array())


def test_dataset_errors(tmp_path):
    corpus = D.build_corpus(D.generate_base_poses(3, seed=2), 2, seed=2, split=(1, 0, 0))
    path = tmp_path / "train.jsonl"
    D.save_dataset(path, corpus["train"], 2, G.EulerRanges(), "train")
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["version"] = 7
    path.write_text("\n".join([json.dumps(header)] + lines[1:]))
    with pytest.raises(VersionMismatch):
        D.load_dataset(path)
    path.write_text("\n".join(lines[:2] + [lines[2][:40]]))
    with pytest.raises(ParseError, match="line 3"):
        D.load_dataset(path)


def _write_external(path, poses, names=JOINT_NAMES):
    lines = [json.dumps({"format": POSE_FORMAT, "version": 1, "joints": list(names), "units": "mm"})]
    idx = [JOINT_NAMES.index(n) for n in names]
    for i, p in enumerate(poses):
        lines.append(json.dumps({"id": str(i), "joints": p[idx].reshape(-1).tolist()}))
    path.write_text("\n".join(lines) + "\n")


def test_external_corpus(tmp_path, base_poses, rng):
    shifted = base_poses + rng.normal(size=(1, 1, 3)) * 100
    save_poses(tmp_path / "a.jsonl", [PoseRecord(str(i), p) for i, p in enumerate(shifted)])
    got = D.load_external_corpus(tmp_path / "a.jsonl")
    np.testing.assert_allclose(got, base_poses, atol=1e-9)

    save_poses(tmp_path / "b.jsonl", [PoseRecord(str(i), p) for i, p in enumerate(base_poses)])
    assert np.array_equal(D.load_external_corpus(tmp_path / "b.jsonl"), base_poses)

    names = list(JOINT_NAMES)[::-1]
    _write_external(tmp_path / "c.jsonl", base_poses, names)
    assert np.array_equal(D.load_external_corpus(tmp_path / "c.jsonl"), base_poses)

    rotated = G.apply_rotation(G.random_rotation(rng), base_poses)
    _write_external(tmp_path / "d.jsonl", rotated)
    np.testing.assert_allclose(D.load_external_corpus(tmp_path / "d.jsonl", canonicalize=True),
                               base_poses, atol=1e-9)


def test_external_corpus_errors(tmp_path, base_poses):
    path = tmp_path / "e.jsonl"
    _write_external(path, base_poses[:3])
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:3] + [lines[3][:25]]) + "\n")
    with pytest.raises(ParseError, match="line 4"):
        D.load_external_corpus(path)
    names = list(JOINT_NAMES)
    names[2] = "knee_right"
    lines[0] = json.dumps({"format": POSE_FORMAT, "version": 1, "joints": names})
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(UnknownJointName):
        D.load_external_corpus(path)


def test_motion_sequence():
    seq = D.generate_motion_sequence(60, rate=30, seed=4)
    assert seq.shape == (60, 17, 3)
    np.testing.assert_array_equal(seq, D.generate_motion_sequence(60, rate=30, seed=4))
    lens = bone_lengths(seq)
    np.testing.assert_allclose(lens, np.broadcast_to(D.template_bone_lengths(), lens.shape),
                               atol=1e-9)
    # one full cycle at 1 Hz returns to the start
    full = D.generate_motion_sequence(31, rate=30, seed=4)
    np.testing.assert_allclose(full[30], full[0], atol=1e-9)
    assert np.ptp(seq[:, 16], axis=0).max() > 100
