"""Deterministic AdamW + cosine-annealing training loop with exact resume."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import adcore as ad
from . import geom3d
from . import model as M
from .datagen import mix_seed, stack
from .errors import NonFinite, VersionMismatch
from .losses import COMPONENTS, LossWeights, model_losses


class ConfigMismatch(VersionMismatch):
    """Resuming with a configuration or dataset different from the checkpoint's."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 1
    eval_batch: int = 256
    weights: LossWeights = field(default_factory=LossWeights)
    model: M.ModelConfig = field(default_factory=M.ModelConfig.toy)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr < 0 or self.eval_every <= 0:
            raise ValueError("invalid training configuration")

    @classmethod
    def full(cls, **kw) -> "TrainConfig":
        """Full-size settings: 80 epochs, batch 1024, the 256/384 encoder."""
        base = dict(epochs=80, batch_size=1024, model=M.ModelConfig())
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "model" in d:
            d["model"] = M.ModelConfig(**d["model"])
        return cls(**d)


def lr_at(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine annealing from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return max(0.0, base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps)))


def init_optimizer(params: dict) -> dict:
    return {"step": 0,
            "m": {k: np.zeros_like(p.value) for k, p in params.items()},
            "v": {k: np.zeros_like(p.value) for k, p in params.items()}}


def optimizer_step(params: dict, grads: dict, state: dict, lr: float, cfg: TrainConfig,
                   decay_mask=M.no_decay) -> None:
    """One AdamW update in place: decoupled decay ``p *= 1 - lr * wd``, then
    the bias-corrected adaptive-moment step."""
    state["step"] += 1
    t = state["step"]
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        if not np.all(np.isfinite(g)):
            raise NonFinite(f"non-finite gradient for {k}")
        if cfg.weight_decay and not decay_mask(k):
            p.value *= 1.0 - lr * cfg.weight_decay
        m, v = state["m"][k], state["v"][k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def torso_scale(targets) -> float:
    """Mean pelvis-to-thorax distance of the training targets (mm)."""
    t = np.asarray(targets, dtype=float)
    return float(np.mean(np.linalg.norm(t[:, 8] - t[:, 0], axis=-1)))


def dataset_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def evaluate_arrays(params, cfg: M.ModelConfig, inputs, targets, rotations, batch: int = 256):
    """Mean rotation error (deg) and MPJPE (mm) of the network on arrays."""
    if len(inputs) == 0:
        return {"rot_err_deg": float("nan"), "mpjpe_mm": float("nan")}
    errs, mpjpes = [], []
    for i in range(0, len(inputs), batch):
        c, r, _ = M.canonicalize(inputs[i:i + batch], params, cfg)
        errs.append(np.rad2deg(geom3d.geodesic_angle_exact(r, rotations[i:i + batch])))
        mpjpes.append(np.linalg.norm(c - targets[i:i + batch], axis=-1).mean(axis=-1))
    return {"rot_err_deg": float(np.mean(np.concatenate(errs))),
            "mpjpe_mm": float(np.mean(np.concatenate(mpjpes)))}


def _write_log(path, records):
    if path is None:
        return
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def train(config: TrainConfig, corpus: dict, out_dir=None, resume_from=None,
          stop_after: int | None = None, log=print):
    """Train on ``corpus["train"]``, validating on ``corpus["val"]``.

    Writes ``log.jsonl``, ``checkpoint_last.json`` and ``checkpoint_best.json``
    to ``out_dir`` (if given). ``stop_after`` ends early after that epoch, as
    if interrupted; ``resume_from`` continues from a last-checkpoint path.
    Returns a dict with ``params``, ``cfg`` (model), ``log`` and ``best``.
    """
    xs, ys, rs = stack(corpus["train"])
    xv, yv, rv = stack(corpus.get("val", []))
    if len(xs) == 0:
        raise ValueError("empty training split")
    data_id = dataset_hash(xs, ys, rs, xv, yv, rv)
    mcfg = replace(config.model, pose_scale=torso_scale(ys))
    cfg_dict = replace(config, model=mcfg).to_dict()
    cfg_id = M.config_hash(cfg_dict)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_config.json").write_text(json.dumps(cfg_dict, indent=2, sort_keys=True) + "\n")
    log_path = out / "log.jsonl" if out is not None else None

    n = len(xs)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch

    if resume_from is not None:
        ck = M.load_checkpoint(resume_from)
        extra = ck["extra"]
        if extra.get("config_hash") != cfg_id:
            raise ConfigMismatch("checkpoint was trained with a different configuration")
        if extra.get("dataset_hash") != data_id:
            raise ConfigMismatch("checkpoint was trained on a different dataset")
        params, opt, start = ck["params"], ck["optimizer"], ck["epoch"]
        records = extra["log"]
        best = extra["best"]
    else:
        params = M.init_params(mcfg, config.seed)
        opt = init_optimizer(params)
        start = 0
        ev = evaluate_arrays(params, mcfg, xv, yv, rv, config.eval_batch)
        records = [{"epoch": 0, "val_rot_err_deg": ev["rot_err_deg"], "val_mpjpe_mm": ev["mpjpe_mm"]}]
        best = {"epoch": 0, "val_rot_err_deg": ev["rot_err_deg"]}
        if out is not None:
            _save(out / "checkpoint_best.json", mcfg, params, opt, 0, config, cfg_id, data_id,
                  records, best)

    plist = list(params.values())
    last_epoch = config.epochs if stop_after is None else min(stop_after, config.epochs)
    for epoch in range(start + 1, last_epoch + 1):
        order = np.random.default_rng(mix_seed(config.seed, epoch)).permutation(n)
        sums = dict.fromkeys(COMPONENTS + ("total",), 0.0)
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            step = (epoch - 1) * steps_per_epoch + b
            try:
                with ad.Tape() as tape:
                    o = M.forward(params, xs[idx], mcfg)
                    total, comps = model_losses(o, ys[idx] / mcfg.pose_scale, rs[idx], params,
                                                config.weights)
                tape.backward(total, plist)
                optimizer_step(params, {k: p.grad for k, p in params.items()}, opt,
                               lr_at(step, total_steps, config.lr), config)
            except NonFinite as exc:
                records.append({"epoch": epoch, "abort": True, "step": step, "error": str(exc)})
                _write_log(log_path, records)
                raise NonFinite(f"training aborted at step {step}: {exc}") from exc
            for k in COMPONENTS:
                sums[k] += float(comps[k].value) * len(idx)
            sums["total"] += float(total.value) * len(idx)
        rec = {"epoch": epoch, "lr_end": lr_at(min(epoch * steps_per_epoch, total_steps),
                                               total_steps, config.lr)}
        rec.update({f"loss_{k}": v / n for k, v in sums.items()})
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            ev = evaluate_arrays(params, mcfg, xv, yv, rv, config.eval_batch)
            rec["val_rot_err_deg"] = ev["rot_err_deg"]
            rec["val_mpjpe_mm"] = ev["mpjpe_mm"]
            if ev["rot_err_deg"] < best["val_rot_err_deg"]:
                best = {"epoch": epoch, "val_rot_err_deg": ev["rot_err_deg"]}
                if out is not None:
                    _save(out / "checkpoint_best.json", mcfg, params, opt, epoch, config, cfg_id,
                          data_id, records + [rec], best)
        records.append(rec)
        if log is not None:
            log(_fmt(rec))
        if out is not None:
            _save(out / "checkpoint_last.json", mcfg, params, opt, epoch, config, cfg_id,
                  data_id, records, best)
            _write_log(log_path, records)
    if out is not None and config.epochs == 0 and start == 0:
        _save(out / "checkpoint_last.json", mcfg, params, opt, 0, config, cfg_id, data_id,
              records, best)
        _write_log(log_path, records)
    return {"params": params, "cfg": mcfg, "log": records, "best": best, "optimizer": opt}


def _fmt(rec):
    parts = [f"epoch {rec['epoch']:3d}"]
    if "loss_total" in rec:
        parts.append(f"loss {rec['loss_total']:.4f}")
    if "val_rot_err_deg" in rec:
        parts.append(f"val rot {rec['val_rot_err_deg']:.2f} deg")
        parts.append(f"val mpjpe {rec['val_mpjpe_mm']:.1f} mm")
    return "  ".join(parts)


def _save(path, mcfg, params, opt, epoch, config, cfg_id, data_id, records, best):
    M.save_checkpoint(path, mcfg, params, opt, epoch, data_seed=config.seed,
                      extra={"config_hash": cfg_id, "dataset_hash": data_id,
                             "train_config": replace(config, model=mcfg).to_dict(),
                             "log": records, "best": best})


def resume(checkpoint_path, config: TrainConfig, corpus: dict, out_dir=None, log=print):
    return train(config, corpus, out_dir=out_dir, resume_from=checkpoint_path, log=log)
