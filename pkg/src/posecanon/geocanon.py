"""Rule-based canonicalizer: torso-plane alignment, then shoulder-line alignment."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateTorso
from .skeleton import H36M, CanonicalFrame, JointLayout

TORSO_EPS = 1e-6


def torso_axes(pose, layout: JointLayout = H36M):
    """Torso normal and shoulder vector ``(n, l)`` of a pose.

    ``n = normalize((r_sho - l_sho) x (mid_hip - mid_sho))`` points the way the
    subject faces; ``l = l_sho - r_sho`` points to the subject's left.
    """
    p = np.asarray(pose, dtype=float)
    l_sho, r_sho = p[layout.l_shoulder], p[layout.r_shoulder]
    mid_sho = 0.5 * (l_sho + r_sho)
    mid_hip = 0.5 * (p[layout.l_hip] + p[layout.r_hip])
    across = r_sho - l_sho
    down = mid_hip - mid_sho
    scale = max(np.linalg.norm(across) * np.linalg.norm(down), 1e-300)
    n = np.cross(across, down)
    nn = np.linalg.norm(n)
    if not np.isfinite(nn) or nn < TORSO_EPS or nn / scale < TORSO_EPS:
        raise DegenerateTorso("shoulder and hip joints are (near) collinear")
    return n / nn, -across


def geometric_rotation(pose, frame: CanonicalFrame = CanonicalFrame(),
                       layout: JointLayout = H36M) -> np.ndarray:
    """Camera rotation ``R`` such that ``pose = canonical @ R.T``.

    Step one turns the torso normal onto ``frame.facing`` along the shortest
    arc; step two spins about ``facing`` until the shoulder line, projected
    off the normal, lies along ``frame.lateral``. Both steps together are the
    unique rotation mapping the body basis ``(n, l_perp, n x l_perp)`` onto the
    frame basis, which is how it is evaluated here (no antipodal special case
    is needed this way).
    """
    n, l = torso_axes(pose, layout)
    l_perp = l - (l @ n) * n
    nl = np.linalg.norm(l_perp)
    if nl < TORSO_EPS * max(np.linalg.norm(l), 1.0):
        raise DegenerateTorso("shoulder line is parallel to the torso normal")
    l_perp /= nl
    body = np.stack([n, l_perp, np.cross(n, l_perp)], axis=-1)
    # body = R @ frame basis
    return body @ frame.basis().T


def geometric_canonicalize(pose, frame: CanonicalFrame = CanonicalFrame(),
                           layout: JointLayout = H36M):
    """Return ``(canonical_pose, R)`` with ``pose == canonical_pose @ R.T``."""
    p = np.asarray(pose, dtype=float)
    r = geometric_rotation(p, frame, layout)
    return p @ r, r


def is_geometric_canonical(pose, frame: CanonicalFrame = CanonicalFrame(), tol: float = 1e-6,
                           layout: JointLayout = H36M) -> bool:
    """True when torso normal and shoulder line match the frame within ``tol`` rad."""
    n, l = torso_axes(pose, layout)
    f = np.asarray(frame.facing, float)
    normal_err = np.arctan2(np.linalg.norm(np.cross(n, f)), n @ f)
    l_perp = l - (l @ f) * f
    lat = frame.lateral
    shoulder_err = np.arctan2(np.linalg.norm(np.cross(l_perp, lat)), l_perp @ lat)
    return bool(normal_err <= tol and shoulder_err <= tol)
