"""MPJPE, Procrustes-aligned MPJPE, rotation error and corpus reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateConfiguration, PoseCanonError
from .geom3d import geodesic_angle_exact


def mpjpe(pred, gt) -> float:
    """Mean per-joint Euclidean distance (same units as the inputs)."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


@dataclass
class Similarity:
    """``x -> scale * R @ x + t`` for column vectors."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def apply(self, pts) -> np.ndarray:
        return self.scale * np.asarray(pts, dtype=float) @ self.rotation.T + self.translation


def procrustes_align(pred, gt, rank_tol: float = 1e-9):
    """Least-squares similarity transform of ``pred`` onto ``gt`` (Umeyama).

    Reflections are excluded. Returns ``(aligned_pred, Similarity)``.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    p0, g0 = pred - mu_p, gt - mu_g
    var_p = np.sum(p0 * p0)
    cov = g0.T @ p0
    u, s, vt = np.linalg.svd(cov)
    sp = np.linalg.svd(p0, compute_uv=False)
    if var_p <= 0 or sp[1] <= rank_tol * max(sp[0], 1e-300):
        raise DegenerateConfiguration("prediction points are (near) collinear or coincident")
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    r = (u * d) @ vt
    scale = float(np.sum(s * d) / var_p)
    t = mu_g - scale * r @ mu_p
    sim = Similarity(r, t, scale)
    return sim.apply(pred), sim


def pa_mpjpe(pred, gt) -> float:
    aligned, _ = procrustes_align(pred, gt)
    return mpjpe(aligned, gt)


def rotation_error_deg(r_pred, r_true):
    return np.rad2deg(geodesic_angle_exact(r_pred, r_true))


@dataclass
class CorpusReport:
    rows: list
    mean_mpjpe: float
    mean_pa_mpjpe: float
    mean_rot_err_deg: float
    median_rot_err_deg: float
    n_ok: int
    n_failed: int
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"mean_mpjpe_mm": self.mean_mpjpe, "mean_pa_mpjpe_mm": self.mean_pa_mpjpe,
                "mean_rot_err_deg": self.mean_rot_err_deg,
                "median_rot_err_deg": self.median_rot_err_deg,
                "n_ok": self.n_ok, "n_failed": self.n_failed, **self.extra}

    def write(self, path):
        """Tab-separated per-sample table at ``path`` plus ``<path>.summary.json``."""
        path = Path(path)
        cols = ["index", "base_id", "mpjpe_mm", "pa_mpjpe_mm", "rot_err_deg", "error"]
        lines = ["\t".join(cols)]
        for r in self.rows:
            lines.append("\t".join(_cell(r.get(c)) for c in cols))
        path.write_text("\n".join(lines) + "\n")
        Path(str(path) + ".summary.json").write_text(
            json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _mean(values):
    # math.fsum: order-independent, correctly rounded
    return math.fsum(values) / len(values) if values else float("nan")


def evaluate_corpus(canonicalizer, samples) -> CorpusReport:
    """Run ``canonicalizer(pose) -> (canonical, R)`` over PosePairSamples.

    Samples whose canonicalization raises are flagged and left out of the means.
    """
    rows = []
    for i, s in enumerate(samples):
        row = {"index": i, "base_id": s.base_id}
        try:
            canon, r = canonicalizer(s.input)
            row["mpjpe_mm"] = mpjpe(canon, s.target)
            row["pa_mpjpe_mm"] = pa_mpjpe(canon, s.target)
            row["rot_err_deg"] = float(rotation_error_deg(r, s.rotation))
        except PoseCanonError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    ok = [r for r in rows if "error" not in r]
    rot = [r["rot_err_deg"] for r in ok]
    return CorpusReport(
        rows=rows,
        mean_mpjpe=_mean([r["mpjpe_mm"] for r in ok]),
        mean_pa_mpjpe=_mean([r["pa_mpjpe_mm"] for r in ok]),
        mean_rot_err_deg=_mean(rot),
        median_rot_err_deg=float(np.median(rot)) if rot else float("nan"),
        n_ok=len(ok), n_failed=len(rows) - len(ok))
