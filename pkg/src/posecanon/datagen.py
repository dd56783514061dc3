"""Synthetic rotated/canonical pose pairs and the dataset file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import geom3d
from .errors import InvalidSplit, ParseError, VersionMismatch
from .geocanon import geometric_canonicalize
from .geom3d import EulerRanges, EulerYPR
from .skeleton import H36M, CanonicalFrame, JointLayout, center_at_pelvis, load_poses

DATASET_FORMAT = "posecanon-dataset"
DATASET_VERSION = 1
SPLITS = ("train", "val", "test")

_MASK64 = (1 << 64) - 1


def mix_seed(seed: int, index: int) -> int:
    """SplitMix64 finaliser applied to ``seed XOR index``.

    Gives every sample its own well-separated 64-bit seed, so generation is
    independent of processing order.
    """
    z = (int(seed) ^ int(index)) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class PosePairSample:
    input: np.ndarray
    target: np.ndarray
    rotation: np.ndarray
    euler: EulerYPR
    base_id: str
    seed: int


def make_pair(canonical, rng: np.random.Generator, ranges: EulerRanges = EulerRanges(),
              base_id: str = "", seed: int = 0, jitter_mm: float = 0.0) -> PosePairSample:
    """Rotate a canonical pose by a sampled camera rotation.

    ``jitter_mm`` adds isotropic Gaussian noise to the input joints (pelvis
    re-centred afterwards); with the default 0 the input is exactly
    ``rotation`` applied to ``canonical``.
    """
    target = np.array(canonical, dtype=float)
    r, e = geom3d.sample_camera_rotation(rng, ranges)
    x = geom3d.apply_rotation(r, target)
    if jitter_mm > 0:
        x = center_at_pelvis(x + rng.normal(scale=jitter_mm, size=x.shape))
    return PosePairSample(input=x, target=target, rotation=r, euler=e,
                          base_id=base_id, seed=int(seed))


# --- base poses -------------------------------------------------------------

def load_base_config(path=None) -> dict:
    if path is None:
        text = resources.files("posecanon.data").joinpath("base_pose_v1.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def _tilt(v, toward, angle, fallback):
    """Rotate ``v`` by ``angle`` in the plane spanned with ``toward``."""
    axis = np.cross(v, toward)
    if np.linalg.norm(axis) < 0.2:
        axis = np.cross(v, fallback)
    return geom3d.axis_angle(axis, angle) @ v


def _build_pose(angles: dict, bones: dict) -> np.ndarray:
    """Forward kinematics in a body frame facing -X, up +Z, left -Y."""
    F = np.array([-1.0, 0.0, 0.0])
    U = np.array([0.0, 0.0, 1.0])
    L = np.array([0.0, -1.0, 0.0])
    a = {k: np.deg2rad(v) for k, v in angles.items()}
    p = np.zeros((17, 3))

    spine_dir = _tilt(_tilt(U, F, a["trunk_bend"], L), L, a["trunk_side"], F)
    p[7] = bones["lower_spine"] * spine_dir
    thorax_dir = _tilt(spine_dir, F, a["upper_bend"], L)
    p[8] = p[7] + bones["upper_spine"] * thorax_dir
    neck_dir = _tilt(thorax_dir, F, a["neck_flex"], L)
    p[9] = p[8] + bones["neck"] * neck_dir
    head_dir = _tilt(neck_dir, F, a["head_flex"], L)
    p[10] = p[9] + bones["head"] * head_dir

    # upper-body frame follows the trunk and its twist
    up_u = thorax_dir
    f_u = F - (F @ up_u) * up_u
    f_u = geom3d.axis_angle(up_u, a["twist"]) @ (f_u / np.linalg.norm(f_u))
    l_u = np.cross(up_u, f_u)

    for side, hip, knee, ankle, sho, elb, wri in ((1, 4, 5, 6, 11, 12, 13),
                                                 (-1, 1, 2, 3, 14, 15, 16)):
        s = "l" if side > 0 else "r"
        S = side * L
        p[hip] = bones["hip"] * S
        thigh = _tilt(_tilt(-U, F, a[f"{s}_hip_flex"], L), S, a[f"{s}_hip_abd"], F)
        p[knee] = p[hip] + bones["thigh"] * thigh
        shin = _tilt(thigh, -F, a[f"{s}_knee_flex"], U)
        p[ankle] = p[knee] + bones["shin"] * shin

        S_u = side * l_u
        clav = _tilt(S_u, up_u, a[f"{s}_clavicle_elev"], f_u)
        p[sho] = p[8] + bones["clavicle"] * clav
        upper = _tilt(_tilt(-up_u, f_u, a[f"{s}_shoulder_flex"], l_u), S_u,
                      a[f"{s}_shoulder_abd"], f_u)
        p[elb] = p[sho] + bones["upper_arm"] * upper
        fore = _tilt(upper, f_u, a[f"{s}_elbow_flex"], up_u)
        p[wri] = p[elb] + bones["forearm"] * fore
    return p


_PER_SIDE = ("hip_flex", "hip_abd", "knee_flex", "clavicle_elev",
             "shoulder_flex", "shoulder_abd", "elbow_flex")


def template_bone_lengths(config: dict | None = None, layout: JointLayout = H36M) -> np.ndarray:
    """Bone lengths of the generator, in ``layout.edges`` order."""
    b = (config or load_base_config())["bone_mm"]
    by_child = {1: "hip", 2: "thigh", 3: "shin", 4: "hip", 5: "thigh", 6: "shin",
                7: "lower_spine", 8: "upper_spine", 9: "neck", 10: "head",
                11: "clavicle", 12: "upper_arm", 13: "forearm",
                14: "clavicle", 15: "upper_arm", 16: "forearm"}
    return np.array([b[by_child[c]] for _, c in layout.edges])


def generate_base_poses(n: int, seed: int, config: dict | None = None,
                        frame: CanonicalFrame = CanonicalFrame()) -> np.ndarray:
    """``n`` plausible poses, each geometric-canonical in ``frame``. Shape ``(n, 17, 3)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    config = config or load_base_config()
    ranges = config["angle_deg"]
    out = np.empty((n, 17, 3))
    for i in range(n):
        rng = np.random.default_rng(mix_seed(seed, i))
        angles = {}
        for name in sorted(ranges):
            lo, hi = ranges[name]
            if name in _PER_SIDE:
                angles[f"l_{name}"] = rng.uniform(lo, hi)
                angles[f"r_{name}"] = rng.uniform(lo, hi)
            else:
                angles[name] = rng.uniform(lo, hi)
        pose = _build_pose(angles, config["bone_mm"])
        out[i] = geometric_canonicalize(center_at_pelvis(pose), frame)[0]
    return out



def generate_motion_sequence(n_frames: int, rate: float = 30.0, seed: int = 0,
                             cadence_hz: float = 1.0, config: dict | None = None) -> np.ndarray:
    """A gait-like cycle: legs and arms swing in antiphase, the trunk twists.

    Joint angles oscillate inside the generator's ranges with seeded phase
    offsets and amplitudes. Poses are pelvis-centred in the body frame,
    shape ``(n_frames, 17, 3)``.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    config = config or load_base_config()
    ranges = config["angle_deg"]
    rng = np.random.default_rng(mix_seed(seed, 0x5E0))
    mids = {k: 0.5 * (lo + hi) for k, (lo, hi) in ranges.items()}
    half = {k: 0.5 * (hi - lo) for k, (lo, hi) in ranges.items()}
    amp = {k: rng.uniform(0.3, 0.8) for k in sorted(ranges)}
    jitter = {k: rng.uniform(-0.3, 0.3) for k in sorted(ranges)}
    t = np.arange(n_frames) / float(rate)
    out = np.empty((n_frames, 17, 3))
    for i, ti in enumerate(t):
        ph = 2.0 * np.pi * cadence_hz * ti
        angles = {}
        for name in ranges:
            def val(shift):
                return mids[name] + amp[name] * half[name] * np.sin(ph + shift + jitter[name])
            if name in _PER_SIDE:
                # arms swing against the leg on the same side
                arm = name.startswith(("shoulder", "elbow", "clavicle"))
                angles[f"l_{name}"] = val(np.pi if arm else 0.0)
                angles[f"r_{name}"] = val(0.0 if arm else np.pi)
            else:
                angles[name] = val(0.0)
        out[i] = center_at_pelvis(_build_pose(angles, config["bone_mm"]))
    return out

# --- corpus -----------------------------------------------------------------

def split_bases(n_bases: int, fractions, seed: int) -> dict:
    """Assign base indices to train/val/test by a seeded permutation."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isfinite(fr).all() or abs(fr.sum() - 1) > 1e-9:
        raise InvalidSplit(f"split fractions {tuple(fractions)} must be 3 non-negative values summing to 1")
    order = np.random.default_rng(mix_seed(seed, 0xB45E)).permutation(n_bases)
    n_train = int(round(fr[0] * n_bases))
    n_val = min(int(round(fr[1] * n_bases)), n_bases - n_train)
    return {"train": sorted(order[:n_train].tolist()),
            "val": sorted(order[n_train:n_train + n_val].tolist()),
            "test": sorted(order[n_train + n_val:].tolist())}


def build_corpus(bases, pairs_per_base: int, seed: int, split=(0.8, 0.1, 0.1),
                 ranges: EulerRanges = EulerRanges(), jitter_mm: float = 0.0) -> dict:
    """Make ``pairs_per_base`` rotated samples of every base pose, split by base.

    Returns ``{"train": [...], "val": [...], "test": [...]}`` of PosePairSample.
    """
    bases = np.asarray(bases, dtype=float)
    assign = split_bases(len(bases), split, seed)
    out = {}
    for name in SPLITS:
        samples = []
        for b in assign[name]:
            for k in range(pairs_per_base):
                s = mix_seed(seed, (b << 20) | k)
                samples.append(make_pair(bases[b], np.random.default_rng(s), ranges,
                                         base_id=f"base-{b:05d}", seed=s, jitter_mm=jitter_mm))
        out[name] = samples
    return out


def load_external_corpus(path, canonicalize: bool = False,
                         frame: CanonicalFrame = CanonicalFrame()) -> np.ndarray:
    """Poses from a pose corpus file, remapped by its header and pelvis-centred."""
    poses = np.array([center_at_pelvis(r.joints) for r in load_poses(path)]).reshape(-1, 17, 3)
    if canonicalize:
        poses = np.array([geometric_canonicalize(p, frame)[0] for p in poses]).reshape(-1, 17, 3)
    return poses


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=float).reshape(-1)]


def save_dataset(path, samples, seed: int, ranges: EulerRanges, split: str,
                 frame: CanonicalFrame = CanonicalFrame(), layout: JointLayout = H36M):
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "split": split,
              "joints": list(layout.names), "units": "mm",
              "frame": {"facing": list(frame.facing), "up": list(frame.up)},
              "seed": int(seed), "ranges": ranges.to_dict()}
    lines = [json.dumps(header, sort_keys=True)]
    for s in samples:
        lines.append(json.dumps({
            "base_id": s.base_id, "seed": int(s.seed),
            "input": _floats(s.input), "target": _floats(s.target),
            "rotation": _floats(s.rotation), "euler": _floats(s.euler.as_array()),
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, layout: JointLayout = H36M):
    """Return ``(header, samples)`` from a dataset file."""
    lines = Path(path).read_text().splitlines()
    try:
        header = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError):
        raise ParseError(f"{path}: line 1: missing or malformed header") from None
    if header.get("format") != DATASET_FORMAT:
        raise ParseError(f"{path}: line 1: not a {DATASET_FORMAT} file")
    if header.get("version") != DATASET_VERSION:
        raise VersionMismatch(f"{path}: dataset version {header.get('version')} != {DATASET_VERSION}")
    names = header["joints"]
    perm = np.array([names.index(n) for n in layout.names])
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            x = np.array(row["input"], dtype=float).reshape(17, 3)[perm]
            y = np.array(row["target"], dtype=float).reshape(17, 3)[perm]
            r = np.array(row["rotation"], dtype=float).reshape(3, 3)
            e = EulerYPR(*[float(v) for v in row["euler"]])
            samples.append(PosePairSample(x, y, r, e, str(row["base_id"]), int(row["seed"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ParseError(f"{path}: line {lineno}: malformed sample") from None
    return header, samples


def write_corpus(out_dir, corpus: dict, seed: int, ranges: EulerRanges, extra: dict | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        save_dataset(out / f"{name}.jsonl", corpus.get(name, []), seed, ranges, name)
    summary = {"seed": int(seed), "ranges": ranges.to_dict(),
               "counts": {k: len(corpus.get(k, [])) for k in SPLITS}}
    if extra:
        summary.update(extra)
    (out / "corpus.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def read_corpus(data_dir) -> dict:
    d = Path(data_dir)
    out = {}
    for name in SPLITS:
        f = d / f"{name}.jsonl"
        out[name] = load_dataset(f)[1] if f.exists() else []
    return out


def stack(samples):
    """Batch arrays ``(inputs, targets, rotations)`` from a list of samples."""
    if not samples:
        return np.zeros((0, 17, 3)), np.zeros((0, 17, 3)), np.zeros((0, 3, 3))
    return (np.stack([s.input for s in samples]), np.stack([s.target for s in samples]),
            np.stack([s.rotation for s in samples]))
