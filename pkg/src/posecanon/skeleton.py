"""17-joint skeleton model, canonical frame and the pose corpus file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBone, ParseError, UnknownJointName

JOINT_NAMES = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)

BONES = (
    (0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6), (0, 7), (7, 8),
    (8, 9), (9, 10), (8, 11), (11, 12), (12, 13), (8, 14), (14, 15), (15, 16),
)


@dataclass(frozen=True)
class JointLayout:
    names: tuple = JOINT_NAMES
    edges: tuple = BONES
    pelvis: int = 0
    l_shoulder: int = 11
    r_shoulder: int = 14
    l_hip: int = 4
    r_hip: int = 1

    def __post_init__(self):
        n = len(self.names)
        if len(set(self.names)) != n:
            raise ValueError("joint names must be unique")
        for p, c in self.edges:
            if not (0 <= p < n and 0 <= c < n):
                raise ValueError(f"edge ({p}, {c}) out of range")
        if len(self.edges) != n - 1:
            raise ValueError("a tree over n joints needs n - 1 edges")
        parent = {}
        for p, c in self.edges:
            if c in parent or c == self.pelvis:
                raise ValueError(f"joint {c} has more than one parent")
            parent[c] = p
        # every joint must reach the root without revisiting
        for j in range(n):
            seen = set()
            while j != self.pelvis:
                if j in seen or j not in parent:
                    raise ValueError("bone graph is not a tree rooted at the pelvis")
                seen.add(j)
                j = parent[j]

    @property
    def n_joints(self) -> int:
        return len(self.names)

    @property
    def parents(self) -> dict:
        return {c: p for p, c in self.edges}

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownJointName(f"unknown joint name {name!r}") from None

    def angle_triplets(self) -> np.ndarray:
        """``(parent, joint, child)`` for each internal joint and each child."""
        parents = self.parents
        out = []
        for p, c in self.edges:
            if p in parents:
                out.append((parents[p], p, c))
        return np.array(out, dtype=int)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_joints, self.n_joints))
        for p, c in self.edges:
            a[p, c] = a[c, p] = 1.0
        return a


H36M = JointLayout()


@dataclass(frozen=True)
class CanonicalFrame:
    """Target body frame: the subject faces ``facing`` with ``up`` overhead."""

    facing: tuple = (-1.0, 0.0, 0.0)
    up: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        f, u = np.asarray(self.facing, float), np.asarray(self.up, float)
        if abs(np.linalg.norm(f) - 1) > 1e-9 or abs(np.linalg.norm(u) - 1) > 1e-9:
            raise ValueError("frame axes must be unit vectors")
        if abs(f @ u) > 1e-9:
            raise ValueError("frame axes must be orthogonal")

    @property
    def lateral(self) -> np.ndarray:
        """Direction of the subject's left: ``up x facing``."""
        return np.cross(self.up, self.facing)

    def basis(self) -> np.ndarray:
        """Columns ``(facing, lateral, facing x lateral)``."""
        f = np.asarray(self.facing, float)
        l = self.lateral
        return np.stack([f, l, np.cross(f, l)], axis=-1)


def center_at_pelvis(pose, layout: JointLayout = H36M) -> np.ndarray:
    pose = np.asarray(pose, dtype=float)
    return pose - pose[..., layout.pelvis:layout.pelvis + 1, :]


def bone_vectors(pose, layout: JointLayout = H36M) -> np.ndarray:
    pose = np.asarray(pose, dtype=float)
    e = np.asarray(layout.edges)
    return pose[..., e[:, 1], :] - pose[..., e[:, 0], :]


def bone_lengths(pose, layout: JointLayout = H36M) -> np.ndarray:
    return np.linalg.norm(bone_vectors(pose, layout), axis=-1)


def joint_angles(pose, layout: JointLayout = H36M, min_bone: float = 1e-6) -> np.ndarray:
    """Interior angle at every internal joint, one per child bone (radians).

    A straight limb gives pi, a right-angled elbow pi/2.
    """
    pose = np.asarray(pose, dtype=float)
    t = layout.angle_triplets()
    u = pose[..., t[:, 0], :] - pose[..., t[:, 1], :]
    v = pose[..., t[:, 2], :] - pose[..., t[:, 1], :]
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    if np.any(nu < min_bone) or np.any(nv < min_bone):
        raise DegenerateBone("bone shorter than %g at an angle joint" % min_bone)
    cos = np.sum(u * v, axis=-1) / (nu * nv)
    return np.arccos(np.clip(cos, -1.0, 1.0))


# --- pose corpus files -----------------------------------------------------

POSE_FORMAT = "posecanon-poses"
POSE_FORMAT_VERSION = 1


@dataclass
class PoseRecord:
    id: str
    joints: np.ndarray
    subject: str | None = None
    frame_time_s: float | None = None
    meta: dict = field(default_factory=dict)


def save_poses(path, records, layout: JointLayout = H36M, extra_header: dict | None = None):
    """Write pose records as JSON lines behind a header naming the joint order.

    Floats are written with ``repr`` precision so reading back is bit-exact.
    """
    header = {"format": POSE_FORMAT, "version": POSE_FORMAT_VERSION,
              "joints": list(layout.names), "units": "mm"}
    if extra_header:
        header.update(extra_header)
    lines = [json.dumps(header)]
    for r in records:
        row = {"id": str(r.id)}
        if r.subject is not None:
            row["subject"] = r.subject
        if r.frame_time_s is not None:
            row["frame_time_s"] = float(r.frame_time_s)
        row["joints"] = [float(x) for x in np.asarray(r.joints, dtype=float).reshape(-1)]
        if r.meta:
            row["meta"] = r.meta
        lines.append(json.dumps(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_header(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line 1: bad header ({exc.msg})") from None
    if header.get("format") != POSE_FORMAT:
        raise ParseError(f"{path}: line 1: not a {POSE_FORMAT} file")
    return header


def load_poses(path, layout: JointLayout = H36M) -> list[PoseRecord]:
    """Read a pose corpus file, remapping its declared joint order to ``layout``."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise ParseError(f"{path}: empty file")
    header = read_pose_header(path)
    names = header.get("joints")
    if not isinstance(names, list) or len(names) != layout.n_joints:
        raise ParseError(f"{path}: line 1: header must list {layout.n_joints} joints")
    for n in names:
        if n not in layout.names:
            raise UnknownJointName(f"{path}: line 1: unknown joint name {n!r}")
    if len(set(names)) != len(names):
        raise ParseError(f"{path}: line 1: duplicate joint names in header")
    perm = np.array([names.index(n) for n in layout.names])
    out = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            flat = np.array(row["joints"], dtype=float)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ParseError(f"{path}: line {lineno}: malformed record") from None
        if flat.shape != (3 * layout.n_joints,) or not np.all(np.isfinite(flat)):
            raise ParseError(f"{path}: line {lineno}: expected {3 * layout.n_joints} finite floats")
        joints = flat.reshape(layout.n_joints, 3)[perm]
        out.append(PoseRecord(id=str(row.get("id", lineno - 1)), joints=joints,
                              subject=row.get("subject"), frame_time_s=row.get("frame_time_s"),
                              meta=row.get("meta", {})))
    return out
