"""Hybrid GCN + Transformer rotation predictor.

Shapes: a batch of poses is ``(B, 17, 3)``. Per-joint branch features are
``(B, 17, hidden_dim)``; pooled branch vectors ``(B, hidden_dim)``; the fused
vector is ``(B, fused_dim)``. Poses enter the network divided by
``cfg.pose_scale`` (mm per network unit), and the residual ``delta`` is
produced in network units.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import adcore as ad
from .adcore import DiffArray
from .errors import DegenerateInput, ParseError, VersionMismatch
from .geom3d import DEGENERATE_6D
from .skeleton import H36M

N_JOINTS = 17
CHECKPOINT_FORMAT = "posecanon-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 256
    fused_dim: int = 384
    gcn_layers: int = 3
    transformer_layers: int = 2
    attention_heads: int = 8
    mlp_ratio: int = 2
    residual_head: bool = True
    residual_init_scale: float = 0.1
    adjacency_noise: float = 1e-3
    joint_input: bool = True
    init_gain: float = 1.0
    pos_init: float = 0.02
    head_act: str = "gelu"
    z_norm: bool = True
    trans_joint_input: bool = True
    pose_scale: float = 500.0

    def __post_init__(self):
        for name in ("hidden_dim", "fused_dim", "gcn_layers", "transformer_layers",
                     "attention_heads", "mlp_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.fused_dim % self.attention_heads or self.hidden_dim % self.attention_heads:
            raise ValueError("hidden_dim and fused_dim must be divisible by attention_heads")
        if not self.pose_scale > 0:
            raise ValueError("pose_scale must be positive")

    @classmethod
    def toy(cls, **kw) -> "ModelConfig":
        base = dict(hidden_dim=32, fused_dim=48, gcn_layers=1, transformer_layers=1,
                    attention_heads=2)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


# --- parameters ---------------------------------------------------------------

def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int) -> dict:
    """Fan-in scaled uniform weights, zero biases, unit layer-norm gains.

    The one non-zero bias is the rotation head's, set to the identity 6D
    vector ``(1, 0, 0, 0, 1, 0)``.

    Returns an ordered dict ``name -> DiffArray`` (all require grad).
    """
    rng = np.random.default_rng(seed)
    h, f = cfg.hidden_dim, cfg.fused_dim
    p = {}

    def lin(name, n_in, n_out, gain=1.0):
        p[f"{name}.w"] = gain * cfg.init_gain * _uniform(rng, n_in, (n_in, n_out))
        p[f"{name}.b"] = np.zeros(n_out)

    a0 = H36M.adjacency()
    noise = np.abs(rng.normal(scale=cfg.adjacency_noise, size=a0.shape))
    p["gcn.alpha"] = np.zeros(1)
    p["gcn.adj"] = a0 + 0.5 * (noise + noise.T)
    if cfg.joint_input:
        p["gcn.in.w"] = cfg.init_gain * _uniform(rng, 3, (N_JOINTS, 3, h))
        p["gcn.in.b"] = np.zeros((N_JOINTS, h))
    else:
        lin("gcn.in", 3, h)
    for i in range(cfg.gcn_layers):
        lin(f"gcn.{i}", h, h)

    if cfg.trans_joint_input:
        p["trans.embed.w"] = cfg.init_gain * _uniform(rng, 3, (N_JOINTS, 3, h))
        p["trans.embed.b"] = np.zeros((N_JOINTS, h))
    else:
        lin("trans.embed", 3, h)
    p["trans.pos"] = rng.normal(scale=cfg.pos_init, size=(N_JOINTS, h))
    for i in range(cfg.transformer_layers):
        pre = f"trans.{i}"
        p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"] = np.ones(h), np.zeros(h)
        for k in "qkvo":
            lin(f"{pre}.attn.{k}", h, h)
        p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"] = np.ones(h), np.zeros(h)
        lin(f"{pre}.mlp1", h, cfg.mlp_ratio * h)
        lin(f"{pre}.mlp2", cfg.mlp_ratio * h, h)

    for k in "qkvo":
        lin(f"fuse.attn.{k}", h, h)
    lin("fuse.gate1", 2 * h, max(h // 2, 1))
    lin("fuse.gate2", max(h // 2, 1), 2)
    lin("fuse.proj", h, f)

    lin("rot.1", f, h)
    lin("rot.2", h, 6)
    # start at the identity rotation so Gram-Schmidt sees unit-scale generators
    p["rot.2.b"] = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    if cfg.residual_head:
        lin("res.1", f, h)
        lin("res.2", h, 3 * N_JOINTS, gain=cfg.residual_init_scale)
    return {k: DiffArray(v, requires_grad=True, name=k) for k, v in p.items()}


def no_decay(name: str) -> bool:
    """Parameters exempt from weight decay: biases, gains, positional codes."""
    return (name.endswith(".b") or name.endswith(".g") or name == "trans.pos"
            or name == "gcn.alpha")


# --- building blocks ------------------------------------------------------------

def linear(x, params, name):
    return ad.matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


def learned_adjacency(params) -> DiffArray:
    """Symmetrised, non-negative learned graph."""
    m = params["gcn.adj"]
    return ad.relu(ad.scale(m + m.mT, 0.5))


def adaptive_adjacency(params, a0=None) -> DiffArray:
    """``A = s A0 + (1 - s) A_learned`` with ``s = sigmoid(alpha)``, then
    ``D^-1/2 (A + I) D^-1/2``."""
    a0 = H36M.adjacency() if a0 is None else a0
    s = ad.sigmoid(params["gcn.alpha"])
    a = s * a0 + (1.0 - s) * learned_adjacency(params)
    a = a + np.eye(a0.shape[0])
    dinv = ad.power(ad.sum_(a, axis=1), -0.5)
    return a * ad.reshape(dinv, (-1, 1)) * ad.reshape(dinv, (1, -1))


def gcn_branch(x, params, cfg: ModelConfig):
    """Returns ``(features (B,17,h), pooled (B,h))``."""
    adj = adaptive_adjacency(params)
    if cfg.joint_input:
        bsz = x.shape[0]
        hfeat = ad.reshape(ad.matmul(np.asarray(x)[:, :, None, :], params["gcn.in.w"]),
                           (bsz, N_JOINTS, cfg.hidden_dim)) + params["gcn.in.b"]
    else:
        hfeat = linear(x, params, "gcn.in")
    for i in range(cfg.gcn_layers):
        hfeat = ad.relu(ad.matmul(adj, linear(hfeat, params, f"gcn.{i}")))
    return hfeat, ad.mean(hfeat, axis=1)


def multi_head_attention(q_in, kv_in, params, name, heads):
    """Scaled dot-product attention. Returns ``(out (B,N,h), weights (B,H,N,N))``."""
    bsz, n, h = q_in.shape
    dh = h // heads

    def split(t):
        return ad.transpose(ad.reshape(t, (bsz, n, heads, dh)), (0, 2, 1, 3))

    q = split(linear(q_in, params, f"{name}.q"))
    k = split(linear(kv_in, params, f"{name}.k"))
    v = split(linear(kv_in, params, f"{name}.v"))
    scores = ad.scale(ad.matmul(q, k.mT), 1.0 / np.sqrt(dh))
    weights = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (bsz, n, h))
    return linear(ctx, params, f"{name}.o"), weights


def _ln(x, params, name):
    return ad.layer_norm(x) * params[f"{name}.g"] + params[f"{name}.b"]


def transformer_branch(x, params, cfg: ModelConfig):
    """Pre-norm encoder. Returns ``(features, pooled, attention maps per layer)``."""
    if cfg.trans_joint_input:
        hfeat = ad.reshape(ad.matmul(np.asarray(x)[:, :, None, :], params["trans.embed.w"]),
                           (x.shape[0], N_JOINTS, cfg.hidden_dim)) + params["trans.embed.b"]
        hfeat = hfeat + params["trans.pos"]
    else:
        hfeat = linear(x, params, "trans.embed") + params["trans.pos"]
    maps = []
    for i in range(cfg.transformer_layers):
        pre = f"trans.{i}"
        normed = _ln(hfeat, params, f"{pre}.ln1")
        att, w = multi_head_attention(normed, normed, params, f"{pre}.attn", cfg.attention_heads)
        maps.append(w)
        hfeat = hfeat + att
        normed = _ln(hfeat, params, f"{pre}.ln2")
        hfeat = hfeat + linear(ad.gelu(linear(normed, params, f"{pre}.mlp1")), params, f"{pre}.mlp2")
    return hfeat, ad.mean(hfeat, axis=1), maps


def fuse(g_feat, g_pool, t_feat, t_pool, params, cfg: ModelConfig):
    """Cross-attention (GCN queries, transformer keys/values) plus gated sum.

    Returns ``(z (B,fused_dim), gate weights (B,2), cross-attention weights)``.
    """
    cross, cross_w = multi_head_attention(g_feat, t_feat, params, "fuse.attn",
                                          cfg.attention_heads)
    z_fused = ad.mean(cross, axis=1)
    logits = linear(ad.relu(linear(ad.concat([g_pool, t_pool], axis=-1), params, "fuse.gate1")),
                    params, "fuse.gate2")
    w = ad.softmax(logits, axis=-1)
    z = z_fused + w[:, 0:1] * g_pool + w[:, 1:2] * t_pool
    return linear(z, params, "fuse.proj"), w, cross_w


def rot6d_to_matrix(r6: DiffArray) -> DiffArray:
    """Differentiable Gram-Schmidt map ``(B, 6) -> (B, 3, 3)``."""
    a, b = r6[:, 0:3], r6[:, 3:6]
    na = ad.sqrt(ad.sqnorm(a, axis=-1, keepdims=True))
    if np.any(na.value < DEGENERATE_6D):
        raise DegenerateInput("first 6D generator has (near) zero norm")
    c1 = a / na
    bp = b - ad.sum_(c1 * b, axis=-1, keepdims=True) * c1
    nb = ad.sqrt(ad.sqnorm(bp, axis=-1, keepdims=True))
    if np.any(nb.value < DEGENERATE_6D):
        raise DegenerateInput("6D generators are (near) parallel")
    c2 = bp / nb
    c3 = ad.cross3(c1, c2)
    return ad.stack([c1, c2, c3], axis=-1)


@dataclass
class Output:
    r6: DiffArray
    rotation: DiffArray
    delta: DiffArray
    canonical: DiffArray
    scaled_input: np.ndarray
    attention: list = field(default_factory=list)
    gates: DiffArray | None = None


def forward(params, poses, cfg: ModelConfig) -> Output:
    """Full pass on pelvis-centred poses in mm, shape ``(B, 17, 3)`` or ``(17, 3)``.

    ``canonical`` and ``delta`` are in network units; multiply by
    ``cfg.pose_scale`` for millimetres.
    """
    x = np.asarray(poses, dtype=float)
    if x.ndim == 2:
        x = x[None]
    x = x / cfg.pose_scale
    g_feat, g_pool = gcn_branch(x, params, cfg)
    t_feat, t_pool, maps = transformer_branch(x, params, cfg)
    z, gates, _ = fuse(g_feat, g_pool, t_feat, t_pool, params, cfg)
    act = ad.gelu if cfg.head_act == "gelu" else ad.relu
    if cfg.z_norm:
        z = ad.layer_norm(z)
    r6 = linear(act(linear(z, params, "rot.1")), params, "rot.2")
    rot = rot6d_to_matrix(r6)
    if cfg.residual_head:
        delta = ad.reshape(linear(act(linear(z, params, "res.1")), params, "res.2"),
                           (x.shape[0], N_JOINTS, 3))
    else:
        delta = DiffArray(np.zeros((x.shape[0], N_JOINTS, 3)))
    canonical = ad.matmul(x, rot) + delta
    return Output(r6, rot, delta, canonical, x, maps, gates)


def predict(poses, params, cfg: ModelConfig):
    """``(r6 (B,6), delta_mm (B,17,3))`` as plain arrays."""
    out = forward(params, poses, cfg)
    return out.r6.value, out.delta.value * cfg.pose_scale


def canonicalize(poses, params, cfg: ModelConfig):
    """``(canonical_mm, R, delta_mm)`` with ``canonical = X R + delta`` (row joints)."""
    out = forward(params, poses, cfg)
    return (out.canonical.value * cfg.pose_scale, out.rotation.value,
            out.delta.value * cfg.pose_scale)


class Model:
    """Config plus parameters; convenient for inference."""

    def __init__(self, cfg: ModelConfig, params: dict | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def canonicalize(self, poses):
        poses = np.asarray(poses, dtype=float)
        single = poses.ndim == 2
        c, r, d = canonicalize(poses, self.params, self.cfg)
        return (c[0], r[0], d[0]) if single else (c, r, d)

    def __call__(self, pose):
        c, r, _ = self.canonicalize(pose)
        return c, r


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# --- checkpoints ------------------------------------------------------------------

def _tensor_entry(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"name": name, "shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}


def _tensor_value(entry):
    return np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])


def save_checkpoint(path, cfg: ModelConfig, params: dict, optimizer_state: dict | None = None,
                    epoch: int = 0, data_seed: int | None = None, extra: dict | None = None):
    """Write a JSON checkpoint; floats use shortest round-trip repr so reload is exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": cfg.to_dict(),
        "epoch": int(epoch),
        "data_seed": data_seed,
        "params": [_tensor_entry(k, p.value) for k, p in params.items()],
        "optimizer": None,
        "extra": extra or {},
    }
    if optimizer_state is not None:
        doc["optimizer"] = {
            "step": int(optimizer_state["step"]),
            "m": [_tensor_entry(k, v) for k, v in optimizer_state["m"].items()],
            "v": [_tensor_entry(k, v) for k, v in optimizer_state["v"].items()],
        }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path) -> dict:
    """Returns dict with ``cfg``, ``params``, ``optimizer``, ``epoch``, ``data_seed``, ``extra``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {doc.get('version')} "
                              f"!= {CHECKPOINT_VERSION}")
    try:
        cfg = ModelConfig(**doc["model_config"])
        params = {e["name"]: DiffArray(_tensor_value(e), requires_grad=True, name=e["name"])
                  for e in doc["params"]}
        opt = None
        if doc.get("optimizer"):
            o = doc["optimizer"]
            opt = {"step": o["step"],
                   "m": {e["name"]: _tensor_value(e) for e in o["m"]},
                   "v": {e["name"]: _tensor_value(e) for e in o["v"]}}
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: corrupted checkpoint ({exc})") from None
    expected = set(init_params_names(cfg))
    if set(params) != expected:
        raise ParseError(f"{path}: parameter set does not match its model config")
    return {"cfg": cfg, "params": params, "optimizer": opt, "epoch": doc["epoch"],
            "data_seed": doc.get("data_seed"), "extra": doc.get("extra", {})}


def init_params_names(cfg: ModelConfig) -> list:
    return list(init_params(cfg, 0).keys())
