"""Training objectives. Every function accepts batched ``(B, ...)`` inputs
(DiffArray or numpy) and averages over the batch."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import adcore as ad
from .errors import DegenerateBone
from .skeleton import H36M, JointLayout

COMPONENTS = ("pose", "rot", "cyc", "perc", "reg")


@dataclass(frozen=True)
class LossWeights:
    pose: float = 1.0
    rot: float = 1.0
    cyc: float = 0.25
    perc: float = 0.15
    reg: float = 0.01
    # inside the regulariser
    reg_delta: float = 1.0
    reg_topology: float = 0.1
    reg_diversity: float = 0.1

    def __post_init__(self):
        if any(v < 0 for v in asdict(self).values()):
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _batched(x, core_ndim):
    x = ad.as_diff(x)
    return ad.reshape(x, (1,) + x.shape) if x.ndim == core_ndim else x


def pose_loss(pred, target):
    """Mean squared coordinate error."""
    return ad.mean(ad.power(ad.as_diff(pred) - target, 2))


def rotation_loss(r_pred, r_true):
    """Mean geodesic angle (rad) between predicted and true rotations."""
    r_pred = _batched(r_pred, 2)
    tr = ad.sum_(ad.sum_(r_pred * r_true, axis=-1), axis=-1)
    return ad.mean(ad.arccos_clamped(ad.scale(tr - 1.0, 0.5)))


def cycle_loss(r_pred, canonical_pred, pose_in):
    """Mean squared error of ``R @ canonical`` (row joints: ``canonical R^T``)
    against the input pose."""
    r_pred = _batched(r_pred, 2)
    c = _batched(canonical_pred, 2)
    return ad.mean(ad.power(ad.matmul(c, r_pred.mT) - pose_in, 2))


def _norms(v, min_len):
    n = ad.sqrt(ad.sqnorm(v, axis=-1))
    if np.any(n.value < min_len):
        raise DegenerateBone(f"bone shorter than {min_len:g}")
    return n


def bone_lengths(pose, layout: JointLayout = H36M, min_len: float = 0.0):
    p = _batched(pose, 2)
    e = np.asarray(layout.edges)
    return _norms(p[:, e[:, 1]] - p[:, e[:, 0]], min_len)


def joint_angles(pose, layout: JointLayout = H36M, min_len: float = 1e-6):
    p = _batched(pose, 2)
    t = layout.angle_triplets()
    u = p[:, t[:, 0]] - p[:, t[:, 1]]
    v = p[:, t[:, 2]] - p[:, t[:, 1]]
    cos = ad.sum_(u * v, axis=-1) / (_norms(u, min_len) * _norms(v, min_len))
    return ad.arccos_clamped(cos)


def perceptual_loss(pred, target, layout: JointLayout = H36M, min_len: float = 1e-6):
    """Mean squared bone-length error plus mean squared joint-angle error."""
    lp = bone_lengths(pred, layout, min_len)
    lt = bone_lengths(target, layout, min_len)
    ap = joint_angles(pred, layout, min_len)
    at = joint_angles(target, layout, min_len)
    return ad.mean(ad.power(lp - lt, 2)) + ad.mean(ad.power(ap - at, 2))


def attention_diversity(maps):
    """Mean pairwise cosine similarity of flattened per-head attention maps.

    ``maps`` is a list of ``(B, H, N, N)`` arrays (one per layer); the result
    is averaged over head pairs, batch and layers. Zero with a single head.
    """
    terms = []
    for m in maps:
        m = ad.as_diff(m)
        bsz, heads = m.shape[:2]
        if heads < 2:
            continue
        f = ad.reshape(m, (bsz, heads, -1))
        f = f / ad.sqrt(ad.sqnorm(f, axis=-1, keepdims=True))
        gram = ad.matmul(f, f.mT)
        mask = np.triu(np.ones((heads, heads)), k=1)
        npairs = heads * (heads - 1) / 2
        terms.append(ad.scale(ad.sum_(gram * mask), 1.0 / (npairs * bsz)))
    if not terms:
        return ad.DiffArray(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return ad.scale(out, 1.0 / len(terms))


def topology_loss(params, a0=None):
    """Squared Frobenius distance of the learned graph from the anatomical one."""
    from .model import learned_adjacency
    a0 = H36M.adjacency() if a0 is None else a0
    return ad.sqnorm(learned_adjacency(params) - a0)


def regularization_loss(params, delta, maps, weights: LossWeights = LossWeights()):
    terms = {
        "delta": ad.mean(ad.power(ad.as_diff(delta), 2)),
        "topology": topology_loss(params),
        "diversity": attention_diversity(maps),
    }
    total = (ad.scale(terms["delta"], weights.reg_delta)
             + ad.scale(terms["topology"], weights.reg_topology)
             + ad.scale(terms["diversity"], weights.reg_diversity))
    return total, terms


def total_loss(components: dict, weights: LossWeights = LossWeights()):
    """``w_p L_pose + w_r L_rot + w_c L_cyc + w_perc L_perc + w_reg L_reg``.

    Works on DiffArrays (returns a DiffArray) or plain floats.
    """
    w = (weights.pose, weights.rot, weights.cyc, weights.perc, weights.reg)
    if all(not isinstance(components[k], ad.DiffArray) for k in COMPONENTS):
        return float(sum(wi * float(components[k]) for wi, k in zip(w, COMPONENTS)))
    out = None
    for wi, k in zip(w, COMPONENTS):
        term = ad.scale(ad.as_diff(components[k]), wi)
        out = term if out is None else out + term
    return out


def model_losses(out, target, r_true, params, weights: LossWeights = LossWeights(),
                 layout: JointLayout = H36M):
    """All components for a model :class:`~posecanon.model.Output`.

    ``target`` must be in the same (network) units as ``out.canonical``.
    Returns ``(total, components)`` with DiffArray values.
    """
    reg, _ = regularization_loss(params, out.delta, out.attention, weights)
    comps = {
        "pose": pose_loss(out.canonical, target),
        "rot": rotation_loss(out.rotation, r_true),
        "cyc": cycle_loss(out.rotation, out.canonical, out.scaled_input),
        "perc": perceptual_loss(out.canonical, target, layout),
        "reg": reg,
    }
    return total_loss(comps, weights), comps
