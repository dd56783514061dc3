"""Rotation math on SO(3): construction, 6D representation, geodesic distance.

Conventions
-----------
Rotations are plain ``(3, 3)`` float64 arrays (or stacks ``(..., 3, 3)``).
Poses store joints as rows, so rotating a pose ``X`` (shape ``(J, 3)``) by
``R`` means ``X @ R.T``: every joint treated as a column vector and
left-multiplied by ``R``.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import DegenerateInput, InvalidRange

ACOS_EPS = 1e-7
DEGENERATE_6D = 1e-8


@dataclass(frozen=True)
class EulerYPR:
    """Yaw, pitch and roll in radians."""

    yaw: float
    pitch: float
    roll: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.yaw, self.pitch, self.roll])):
            raise ValueError("euler angles must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll])


@dataclass(frozen=True)
class EulerRanges:
    """Camera-rotation sampling ranges, all in degrees.

    Yaw is a two-component mixture: with probability ``yaw_front_weight`` it is
    uniform on ``[yaw_front_low, yaw_front_high]``, otherwise uniform on
    ``[yaw_low, yaw_high]``. Pitch and roll are uniform.
    """

    yaw_low: float = -180.0
    yaw_high: float = 180.0
    yaw_front_low: float = -60.0
    yaw_front_high: float = 60.0
    yaw_front_weight: float = 0.7
    pitch_low: float = -30.0
    pitch_high: float = 30.0
    roll_low: float = -15.0
    roll_high: float = 15.0

    def __post_init__(self):
        for name in ("yaw", "yaw_front", "pitch", "roll"):
            lo, hi = getattr(self, f"{name}_low"), getattr(self, f"{name}_high")
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise InvalidRange(f"{name} range must be finite")
            if lo > hi:
                raise InvalidRange(f"{name} range has low {lo} > high {hi}")
        if not 0.0 <= self.yaw_front_weight <= 1.0:
            raise InvalidRange("yaw_front_weight must lie in [0, 1]")

    @classmethod
    def zero(cls) -> "EulerRanges":
        return cls(0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EulerRanges":
        return cls(**d)

    def yaw_pdf(self, yaw_deg):
        """Density of the yaw mixture (per degree)."""
        yaw_deg = np.asarray(yaw_deg, dtype=float)
        pdf = np.zeros_like(yaw_deg)
        for lo, hi, w in ((self.yaw_front_low, self.yaw_front_high, self.yaw_front_weight),
                          (self.yaw_low, self.yaw_high, 1.0 - self.yaw_front_weight)):
            if hi > lo:
                pdf = pdf + w * ((yaw_deg >= lo) & (yaw_deg <= hi)) / (hi - lo)
        return pdf

    def yaw_cdf(self, yaw_deg):
        yaw_deg = np.asarray(yaw_deg, dtype=float)
        cdf = np.zeros_like(yaw_deg)
        for lo, hi, w in ((self.yaw_front_low, self.yaw_front_high, self.yaw_front_weight),
                          (self.yaw_low, self.yaw_high, 1.0 - self.yaw_front_weight)):
            if hi > lo:
                cdf = cdf + w * np.clip((yaw_deg - lo) / (hi - lo), 0.0, 1.0)
            else:
                cdf = cdf + w * (yaw_deg >= lo)
        return cdf


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula for a rotation of ``angle`` about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def is_rotation(m, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3) or not np.all(np.isfinite(m)):
        return False
    eye = np.eye(3)
    orth = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max(axis=(-2, -1))
    det = np.abs(np.linalg.det(m) - 1.0)
    return bool(np.all(orth <= tol) and np.all(det <= tol))


def rot_from_6d(r6) -> np.ndarray:
    """Gram-Schmidt map from 6 numbers ``(a, b)`` to a rotation matrix.

    ``r6`` has shape ``(..., 6)``; the first three entries generate the first
    column, the last three the second. Output shape is ``(..., 3, 3)``.
    """
    r6 = np.asarray(r6, dtype=float)
    if r6.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got {r6.shape}")
    if not np.all(np.isfinite(r6)):
        raise DegenerateInput("6D rotation contains non-finite values")
    a, b = r6[..., :3], r6[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < DEGENERATE_6D):
        raise DegenerateInput("first 6D generator has (near) zero norm")
    c1 = a / na
    b_perp = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nb = np.linalg.norm(b_perp, axis=-1, keepdims=True)
    if np.any(nb < DEGENERATE_6D):
        raise DegenerateInput("6D generators are (near) parallel")
    c2 = b_perp / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def rot_to_6d(m) -> np.ndarray:
    """First two columns of ``m`` flattened as ``(a, b)``."""
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def geodesic_angle(ra, rb, eps: float = ACOS_EPS):
    """Angle of the relative rotation ``ra @ rb.T`` in radians, in ``[0, pi]``.

    The cosine is clamped to ``[-1 + eps, 1 - eps]`` so the result never is
    NaN; this biases angles below ~4.5e-4 rad (or above pi - 4.5e-4) toward
    the boundary.
    """
    ra = np.asarray(ra, dtype=float)
    rb = np.asarray(rb, dtype=float)
    tr = np.sum(ra * rb, axis=(-2, -1))
    cos = np.clip((tr - 1.0) / 2.0, -1.0 + eps, 1.0 - eps)
    out = np.arccos(cos)
    return float(out) if out.ndim == 0 else out


def geodesic_angle_exact(ra, rb):
    """Unclamped-bias geodesic angle, accurate near 0 and pi.

    Uses ``atan2(|skew part|, symmetric part)`` on the relative rotation, so it
    resolves sub-microradian errors the clamped form cannot.
    """
    rel = np.asarray(ra, dtype=float) @ np.swapaxes(np.asarray(rb, dtype=float), -1, -2)
    tr = np.trace(rel, axis1=-2, axis2=-1)
    w = np.stack([rel[..., 2, 1] - rel[..., 1, 2],
                  rel[..., 0, 2] - rel[..., 2, 0],
                  rel[..., 1, 0] - rel[..., 0, 1]], axis=-1)
    out = np.arctan2(np.linalg.norm(w, axis=-1), tr - 1.0)
    return float(out) if np.ndim(out) == 0 else out


def euler_to_matrix(e: EulerYPR) -> np.ndarray:
    """Intrinsic Z-Y-X composition: ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    return rot_z(e.yaw) @ rot_y(e.pitch) @ rot_x(e.roll)


def sample_euler(rng: np.random.Generator, ranges: EulerRanges = EulerRanges()) -> EulerYPR:
    """Draw one yaw/pitch/roll triple (radians) from ``ranges``."""
    front = rng.random() < ranges.yaw_front_weight
    if front:
        yaw = rng.uniform(ranges.yaw_front_low, ranges.yaw_front_high)
    else:
        yaw = rng.uniform(ranges.yaw_low, ranges.yaw_high)
    pitch = rng.uniform(ranges.pitch_low, ranges.pitch_high)
    roll = rng.uniform(ranges.roll_low, ranges.roll_high)
    return EulerYPR(*np.deg2rad([yaw, pitch, roll]))


def sample_camera_rotation(rng: np.random.Generator, ranges: EulerRanges = EulerRanges()):
    """Return ``(R, euler)`` for a randomly placed camera."""
    e = sample_euler(rng, ranges)
    return euler_to_matrix(e), e


def random_rotation(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform (Haar) random rotations via normalised Gaussian quaternions."""
    shape = () if size is None else tuple(np.atleast_1d(size).tolist())
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return m.reshape(shape + (3, 3))


def apply_rotation(r, pose) -> np.ndarray:
    """Rotate every joint (row) of ``pose`` by ``r``."""
    return np.asarray(pose, dtype=float) @ np.swapaxes(np.asarray(r, dtype=float), -1, -2)


def transpose(r) -> np.ndarray:
    return np.swapaxes(np.asarray(r, dtype=float), -1, -2).copy()


def compose(ra, rb) -> np.ndarray:
    """``ra @ rb``: apply ``rb`` first, then ``ra``."""
    return np.asarray(ra, dtype=float) @ np.asarray(rb, dtype=float)


def shortest_arc(u, v) -> np.ndarray:
    """Minimal rotation taking the direction of ``u`` onto that of ``v``.

    Returns ``None`` in the antipodal case; callers pick the half-turn axis.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    c = float(np.dot(u, v))
    w = np.cross(u, v)
    s = float(np.linalg.norm(w))
    if s < 1e-12:
        return np.eye(3) if c > 0 else None
    # Rodrigues with sin = s, cos = c, axis = w / s
    k = skew(w / s)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)
