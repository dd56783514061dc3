"""Command-line entry point: ``posecanon <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort,
4 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from . import datagen, geom3d, kinematics, metrics, skeleton
from . import model as M
from . import trainer as T
from .errors import NonFinite, ParseError, PoseCanonError, VersionMismatch
from .geocanon import geometric_canonicalize
from .geom3d import EulerRanges

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    """Bad flag value or configuration; carries the offending flag in its message."""


def _echo(out_dir, name, cfg):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _read_json(path, flag):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{flag} {path}: {exc}") from None


def _floats(text, n, flag):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{flag}: expected {n} comma-separated numbers, got {text!r}")
    return vals


# --- canonicalizers -----------------------------------------------------------

def _geometric(pose):
    return geometric_canonicalize(skeleton.center_at_pelvis(pose))


def _identity(pose):
    return skeleton.center_at_pelvis(pose), np.eye(3)


def _canonicalizer(method, checkpoint):
    if checkpoint:
        ck = M.load_checkpoint(checkpoint)
        net = M.Model(ck["cfg"], ck["params"])
        return (lambda pose: net(skeleton.center_at_pelvis(pose))), {"checkpoint": str(checkpoint)}
    if method in (None, "geometric"):
        return _geometric, {"method": "geometric"}
    if method == "none":
        return _identity, {"method": "none"}
    raise UsageError(f"--method: unknown canonicalizer {method!r}")


# --- commands --------------------------------------------------------------------

def cmd_gen_data(args):
    split = _floats(args.split, 3, "--split")
    if any(v < 0 for v in split) or abs(sum(split) - 1.0) > 1e-9:
        raise UsageError(f"--split: fractions {args.split} must be non-negative and sum to 1")
    if args.bases < 1 or args.pairs < 1:
        raise UsageError("--bases and --pairs must be >= 1")
    try:
        ranges = EulerRanges.from_dict(_read_json(args.ranges, "--ranges")) if args.ranges \
            else EulerRanges()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise UsageError(f"--ranges: {exc}") from None
    bases = datagen.generate_base_poses(args.bases, args.seed)
    corpus = datagen.build_corpus(bases, args.pairs, args.seed, split, ranges, args.jitter)
    effective = {"command": "gen-data", "bases": args.bases, "pairs": args.pairs,
                 "seed": args.seed, "split": split, "jitter_mm": args.jitter,
                 "ranges": ranges.to_dict()}
    summary = datagen.write_corpus(args.out, corpus, args.seed, ranges,
                                   extra={"bases": args.bases, "pairs_per_base": args.pairs,
                                          "split": split, "jitter_mm": args.jitter})
    _echo(args.out, "effective_config.json", effective)
    c = summary["counts"]
    print(f"wrote {sum(c.values())} samples to {args.out}: "
          f"train {c['train']}, val {c['val']}, test {c['test']}")
    print("ranges (deg): " + ", ".join(f"{k}={v}" for k, v in ranges.to_dict().items()))
    return EXIT_OK


def _train_config(args) -> T.TrainConfig:
    base = T.TrainConfig() if args.toy else T.TrainConfig.full()
    d = base.to_dict()
    if args.config:
        user = _read_json(args.config, "--config")
        if not isinstance(user, dict):
            raise UsageError("--config: expected a JSON object")
        for k, v in user.items():
            if k not in d:
                raise UsageError(f"--config: unknown key {k!r}")
            d[k] = {**d[k], **v} if isinstance(d[k], dict) and isinstance(v, dict) else v
    for flag in ("epochs", "batch_size", "lr", "seed", "weight_decay"):
        v = getattr(args, flag)
        if v is not None:
            d[flag] = v
    try:
        return T.TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--config: {exc}") from None


def cmd_train(args):
    cfg = _train_config(args)
    corpus = datagen.read_corpus(args.data)
    if not corpus["train"]:
        raise ParseError(f"--data {args.data}: no training samples")
    _echo(args.out, "effective_config.json",
          {"command": "train", "data": str(args.data), "toy": bool(args.toy), **cfg.to_dict()})
    res = T.train(cfg, corpus, out_dir=args.out, resume_from=args.resume, log=print)
    print(f"best epoch {res['best']['epoch']}: val rot {res['best']['val_rot_err_deg']:.3f} deg")
    return EXIT_OK


def cmd_eval(args):
    canon, info = _canonicalizer(args.method, args.checkpoint)
    corpus = datagen.read_corpus(args.data)
    samples = corpus[args.split]
    if not samples:
        raise ParseError(f"--data {args.data}: split {args.split!r} is empty")
    report = metrics.evaluate_corpus(canon, samples)
    report.extra.update({"split": args.split, **info})
    report.write(args.report)
    s = report.summary()
    print(f"{args.split}: n={s['n_ok']} (failed {s['n_failed']})  "
          f"MPJPE {s['mean_mpjpe_mm']:.3f} mm  PA-MPJPE {s['mean_pa_mpjpe_mm']:.3f} mm  "
          f"rot {s['mean_rot_err_deg']:.3f} deg (median {s['median_rot_err_deg']:.3f})")
    return EXIT_OK


def cmd_canonicalize(args):
    canon, info = _canonicalizer(args.method, args.checkpoint)
    records = skeleton.load_poses(args.inp)
    out, failed = [], 0
    for r in records:
        meta = dict(r.meta)
        try:
            c, rot = canon(r.joints)
            meta["rotation"] = [float(x) for x in np.asarray(rot).reshape(-1)]
            joints = c
        except PoseCanonError as exc:
            meta["error"] = f"{type(exc).__name__}: {exc}"
            joints = r.joints
            failed += 1
        out.append(skeleton.PoseRecord(r.id, joints, r.subject, r.frame_time_s, meta))
    skeleton.save_poses(args.out, out, extra_header={"canonicalized": info})
    print(f"canonicalized {len(out) - failed}/{len(out)} poses -> {args.out}")
    return EXIT_OK


def _sequence(path, rate):
    records = skeleton.load_poses(path)
    if not records:
        raise ParseError(f"--in {path}: no frames")
    poses = np.stack([r.joints for r in records])
    times = [r.frame_time_s for r in records]
    if all(t is not None for t in times):
        return poses, np.asarray(times, dtype=float)
    return poses, kinematics.time_grid(len(poses), rate)


def cmd_signals(args):
    canon, info = _canonicalizer(args.canon, args.checkpoint)
    poses, t = _sequence(args.inp, args.rate)
    seq = kinematics.canonicalize_sequence(poses, canon)
    if not seq.segments:
        raise PoseCanonError("every frame failed to canonicalize")
    lo, hi = max(seq.segments, key=lambda s: s[1] - s[0])
    if len(seq.segments) > 1:
        print(f"warning: sequence split into {len(seq.segments)} segments; "
              f"using frames {lo}..{hi - 1}", file=sys.stderr)
    s = kinematics.extract_trajectory(seq.poses[lo:hi], args.joint, t=t[lo:hi])
    if args.accel:
        s = kinematics.finite_diff(s, 2, smooth=args.smooth)
    if args.normalize != "none":
        s = kinematics.normalize_signal(s, args.normalize)
    s = replace(s, meta={**s.meta, **info, "source": str(args.inp),
                         "failed_frames": sorted(seq.errors), "filled_frames": seq.filled})
    kinematics.write_signal_csv(args.out, s)
    print(f"wrote {len(s)} samples x {s.v.shape[1]} channels ({s.units}) -> {args.out}")
    return EXIT_OK


def cmd_gen_sequence(args):
    poses = datagen.generate_motion_sequence(args.frames, args.rate, args.seed, args.cadence)
    ypr = _floats(args.view, 3, "--view")
    r = geom3d.euler_to_matrix(geom3d.EulerYPR(*np.deg2rad(ypr)))
    poses = geom3d.apply_rotation(r, poses)
    t = kinematics.time_grid(args.frames, args.rate)
    recs = [skeleton.PoseRecord(f"f{i:05d}", p, "synthetic", float(ti))
            for i, (p, ti) in enumerate(zip(poses, t))]
    skeleton.save_poses(args.out, recs, extra_header={"seed": args.seed, "view_deg": ypr})
    print(f"wrote {args.frames} frames at {args.rate:g} Hz (view {ypr} deg) -> {args.out}")
    return EXIT_OK


def cmd_compare(args):
    a = kinematics.read_signal_csv(args.a)
    b = kinematics.read_signal_csv(args.b)
    rep = kinematics.compare_signals(a, b)
    Path(args.report).write_text(json.dumps(rep, indent=2) + "\n")
    print("pearson " + " ".join(f"{c:.6f}" for c in rep["pearson"])
          + "  lag " + " ".join(str(k) for k in rep["lag"]))
    return EXIT_OK


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def render_svg(series, labels, width=720, height=360, channel=None) -> str:
    """Static line-plot overlay, one polyline per (series, channel)."""
    pad_l, pad_r, pad_t, pad_b = 60, 160, 20, 40
    lines = []
    for s, lab in zip(series, labels):
        cols = range(s.v.shape[1]) if channel is None else [channel]
        for j in cols:
            lines.append((s.t, s.v[:, j], f"{lab}:{s.channels[j]}"))
    t_all = np.concatenate([l[0] for l in lines])
    v_all = np.concatenate([l[1] for l in lines])
    t0, t1 = float(t_all.min()), float(t_all.max())
    v0, v1 = float(v_all.min()), float(v_all.max())
    t1 = t1 if t1 > t0 else t0 + 1.0
    v1 = v1 if v1 > v0 else v0 + 1.0
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def xy(t, v):
        return pad_l + (t - t0) / (t1 - t0) * pw, pad_t + (1 - (v - v0) / (v1 - v0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for frac in (0.0, 0.5, 1.0):
        tx, _ = xy(t0 + frac * (t1 - t0), v0)
        _, vy = xy(t0, v0 + frac * (v1 - v0))
        out.append(f'<text x="{tx:.1f}" y="{height - pad_b + 15}" text-anchor="middle">'
                   f'{t0 + frac * (t1 - t0):.3g}</text>')
        out.append(f'<text x="{pad_l - 5}" y="{vy + 4:.1f}" text-anchor="end">'
                   f'{v0 + frac * (v1 - v0):.3g}</text>')
    out.append(f'<text x="{pad_l + pw / 2:.1f}" y="{height - 5}" text-anchor="middle">t (s)</text>')
    for k, (t, v, lab) in enumerate(lines):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join("{:.2f},{:.2f}".format(*xy(a, b)) for a, b in zip(t, v))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = pad_t + 14 * k + 10
        out.append(f'<line x1="{width - pad_r + 10}" y1="{ly}" x2="{width - pad_r + 30}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad_r + 35}" y="{ly + 4}">{escape(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args):
    series = [kinematics.read_signal_csv(p) for p in args.csv]
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.csv]
    if len(labels) != len(series):
        raise UsageError("--labels: need one label per CSV")
    if args.channel is not None and any(args.channel >= s.v.shape[1] for s in series):
        raise UsageError("--channel: index out of range")
    Path(args.out).write_text(render_svg(series, labels, channel=args.channel))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_version(_args=None):
    print(f"posecanon {__version__}")
    print(f"  pose file      {skeleton.POSE_FORMAT} v{skeleton.POSE_FORMAT_VERSION}")
    print(f"  dataset file   {datagen.DATASET_FORMAT} v{datagen.DATASET_VERSION}")
    print(f"  checkpoint     {M.CHECKPOINT_FORMAT} v{M.CHECKPOINT_VERSION}")
    print(f"  signal csv     {kinematics.SIGNAL_FORMAT} v{kinematics.SIGNAL_VERSION}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def _add_canon(p, flag="--method"):
    p.add_argument(flag, choices=("geometric", "none"), default=None,
                   help="rule-based canonicalizer (default geometric)")
    p.add_argument("--checkpoint", help="use a trained network checkpoint instead")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="posecanon",
                                 description="Canonicalize 3D skeletons into a body-centred frame.")
    ap.add_argument("--version", action="store_true", help="print package and file-format versions")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate a synthetic rotated/canonical corpus")
    p.add_argument("--bases", type=int, required=True)
    p.add_argument("--pairs", type=int, required=True, help="rotations per base pose")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ranges", help="JSON file of camera-rotation ranges (degrees)")
    p.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test fractions by base")
    p.add_argument("--jitter", type=float, default=0.0, help="input joint noise (mm)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the rotation network")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON training config (partial allowed)")
    p.add_argument("--out", required=True)
    p.add_argument("--toy", action="store_true", help="small desk-scale preset")
    p.add_argument("--resume", help="continue from a checkpoint_last.json")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a canonicalizer on a corpus split")
    p.add_argument("--data", required=True)
    _add_canon(p)
    p.add_argument("--split", choices=datagen.SPLITS, default="test")
    p.add_argument("--report", required=True, help="per-sample TSV; summary JSON alongside")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("canonicalize", help="canonicalize a pose file")
    p.add_argument("--in", dest="inp", required=True)
    _add_canon(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_canonicalize)

    p = sub.add_parser("gen-sequence", help="write a synthetic motion sequence seen from one view")
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--rate", type=float, default=30.0)
    p.add_argument("--cadence", type=float, default=1.0, help="cycle frequency (Hz)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--view", default="0,0,0", help="camera yaw,pitch,roll in degrees")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_sequence)

    p = sub.add_parser("signals", help="joint trajectory / acceleration signal from a sequence")
    p.add_argument("--in", dest="inp", required=True, help="pose file, one frame per record")
    p.add_argument("--joint", default="r_wrist")
    _add_canon(p, "--canon")
    p.add_argument("--accel", action="store_true", help="second derivative instead of position")
    p.add_argument("--smooth", type=int, default=0, help="moving-average window (0 = off)")
    p.add_argument("--normalize", choices=("z", "minmax", "none"), default="z")
    p.add_argument("--rate", type=float, default=30.0, help="frame rate when records lack times")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_signals)

    p = sub.add_parser("plot", help="overlay signal CSVs as an SVG")
    p.add_argument("--csv", nargs="+", required=True)
    p.add_argument("--labels", help="comma-separated legend labels")
    p.add_argument("--channel", type=int, help="plot only this channel index")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("compare", help="correlation / RMSE / lag between two signal CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.version:
        return cmd_version()
    if not args.command:
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, T.ConfigMismatch) as exc:
        print(f"posecanon {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFinite as exc:
        print(f"posecanon {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, VersionMismatch, OSError) as exc:
        print(f"posecanon {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PoseCanonError, ValueError) as exc:
        print(f"posecanon {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
