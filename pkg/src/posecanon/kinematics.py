"""Kinematic signals from canonicalized pose sequences.

Trajectories, finite-difference velocity and acceleration, per-channel
normalization, the IMU local-to-world transform with gravity removal, and a
small signal comparison report. Signals are stored as :class:`SignalSeries`
on a uniform time grid.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptySequence, NonFinite, ParseError, PoseCanonError, TooShort, ZeroVariance
from .skeleton import H36M, JointLayout

GRAVITY_UP = (0.0, 0.0, 9.81)
MAX_GAP = 3
SIGNAL_FORMAT = "posecanon-signal"
SIGNAL_VERSION = 1


@dataclass(frozen=True)
class SignalSeries:
    """Values ``v`` of shape ``(T, d)`` sampled at uniformly spaced times ``t``."""

    t: np.ndarray
    v: np.ndarray
    units: str = ""
    channels: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        v = np.asarray(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != t.shape[0]:
            raise ValueError(f"values {v.shape} do not match {t.shape[0]} timestamps")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise NonFinite("signal contains non-finite samples")
        if len(t) > 1:
            dt = np.diff(t)
            if np.any(dt <= 0):
                raise ValueError("timestamps must be strictly increasing")
            step = (t[-1] - t[0]) / (len(t) - 1)
            if np.max(np.abs(dt - step)) > 1e-9 * max(abs(step), np.max(np.abs(t))):
                raise ValueError("timestamps are not uniformly spaced")
        chans = tuple(self.channels) or tuple(f"c{i}" for i in range(v.shape[1]))
        if len(chans) != v.shape[1]:
            raise ValueError("one channel name per column required")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "channels", chans)

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        if len(self.t) < 2:
            raise TooShort("sample spacing needs at least 2 samples")
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))

    @property
    def rate(self) -> float:
        return 1.0 / self.dt


@dataclass(frozen=True)
class ImuSample:
    a_local: np.ndarray
    r_sensor_to_world: np.ndarray
    t: float

    def __post_init__(self):
        a = np.asarray(self.a_local, dtype=float).reshape(3)
        r = np.asarray(self.r_sensor_to_world, dtype=float).reshape(3, 3)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(r)) and np.isfinite(self.t)):
            raise NonFinite("IMU sample contains non-finite values")
        object.__setattr__(self, "a_local", a)
        object.__setattr__(self, "r_sensor_to_world", r)


def time_grid(n: int, rate: float, t0: float = 0.0) -> np.ndarray:
    return t0 + np.arange(n) / float(rate)


def extract_trajectory(poses, joint, t=None, rate: float = 30.0,
                       layout: JointLayout = H36M) -> SignalSeries:
    """Position of ``joint`` (name or index) in every frame, in mm."""
    poses = np.asarray(poses, dtype=float)
    if poses.size == 0 or len(poses) == 0:
        raise EmptySequence("no frames")
    idx = layout.index(joint) if isinstance(joint, str) else int(joint)
    name = layout.names[idx]
    t = time_grid(len(poses), rate) if t is None else np.asarray(t, dtype=float)
    return SignalSeries(t, poses[:, idx, :], units="mm",
                        channels=(f"{name}.x", f"{name}.y", f"{name}.z"),
                        meta={"joint": name})


def normalize_signal(s: SignalSeries, method: str = "z") -> SignalSeries:
    """Per-channel z-score (default) or min-max scaling to [0, 1]."""
    v = s.v
    if method in ("z", "zscore", "z-score"):
        mu = v.mean(axis=0)
        sd = v.std(axis=0)
        if np.any(sd <= 1e-12 * np.maximum(1.0, np.abs(mu))):
            raise ZeroVariance("constant channel cannot be z-scored")
        out = (v - mu) / sd
    elif method in ("minmax", "min-max"):
        lo, hi = v.min(axis=0), v.max(axis=0)
        if np.any(hi - lo <= 0):
            raise ZeroVariance("constant channel cannot be min-max scaled")
        out = (v - lo) / (hi - lo)
    else:
        raise ValueError(f"unknown normalization {method!r}")
    return replace(s, v=out, units="1", meta={**s.meta, "normalized": method})


def moving_average(v, window: int) -> np.ndarray:
    """Centred moving average; the window shrinks near the ends."""
    v = np.asarray(v, dtype=float)
    if window <= 1:
        return v.copy()
    half = window // 2
    c = np.cumsum(np.concatenate([np.zeros((1,) + v.shape[1:]), v]), axis=0)
    n = len(v)
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    return (c[hi] - c[lo]) / (hi - lo).reshape((-1,) + (1,) * (v.ndim - 1))


def _second_difference(v, dt):
    n = len(v)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dt ** 2
    if n >= 4:
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / dt ** 2
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / dt ** 2
    else:
        # three samples: the only available stencil, first order at the ends
        out[0] = out[-1] = out[1]
    return out


def finite_diff(s: SignalSeries, order: int = 1, smooth: int = 0) -> SignalSeries:
    """Central differences with one-sided second-order ends; length preserved.

    ``smooth`` > 1 applies a moving average of that width before differencing.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    need = 3 if order == 2 else 2
    if len(s) < need:
        raise TooShort(f"order {order} needs at least {need} samples, got {len(s)}")
    v = moving_average(s.v, smooth) if smooth and smooth > 1 else s.v
    dt = s.dt
    if order == 1:
        out = np.gradient(v, dt, axis=0, edge_order=2 if len(s) >= 3 else 1)
    else:
        out = _second_difference(v, dt)
    units = f"{s.units}/s" if order == 1 else f"{s.units}/s^2"
    return replace(s, v=out, units=units, meta={**s.meta, "diff_order": order})


def imu_to_world(samples, g_up=GRAVITY_UP) -> SignalSeries:
    """World-frame linear acceleration ``R a_local - g_up`` for every sample."""
    samples = list(samples)
    if not samples:
        raise EmptySequence("no IMU samples")
    r = np.stack([s.r_sensor_to_world for s in samples])
    a = np.stack([s.a_local for s in samples])
    world = np.einsum("nij,nj->ni", r, a) - np.asarray(g_up, dtype=float)
    return SignalSeries(np.array([s.t for s in samples]), world, units="m/s^2",
                        channels=("ax", "ay", "az"))


def resample(s: SignalSeries, t_new) -> SignalSeries:
    t_new = np.asarray(t_new, dtype=float)
    v = np.column_stack([np.interp(t_new, s.t, s.v[:, j]) for j in range(s.v.shape[1])])
    return replace(s, t=t_new, v=v)


def _common_grid(a: SignalSeries, b: SignalSeries):
    lo, hi = max(a.t[0], b.t[0]), min(a.t[-1], b.t[-1])
    if hi < lo:
        raise TooShort("signals do not overlap in time")
    da, db = a.dt, b.dt
    step = max(da, db)
    src = a if da >= db else b
    # the coarser signal's own samples inside the overlap
    tol = 1e-9 * step
    t = src.t[(src.t >= lo - tol) & (src.t <= hi + tol)]
    if len(t) < 3:
        raise TooShort("fewer than 3 overlapping samples")
    return t


def _lag(x, y):
    # k such that y[n] ~= x[n - k]
    x = x - x.mean()
    y = y - y.mean()
    cc = np.correlate(y, x, mode="full")
    return int(np.argmax(cc)) - (len(x) - 1)


def compare_signals(a: SignalSeries, b: SignalSeries) -> dict:
    """Pearson correlation, RMSE of z-scored channels and best lag per channel.

    Both series are linearly resampled onto the coarser grid over their
    common time support. Lag ``k`` means ``b`` trails ``a`` by ``k`` samples.
    """
    if a.v.shape[1] != b.v.shape[1]:
        raise ValueError("signals have different channel counts")
    if len(a) < 3 or len(b) < 3:
        raise TooShort("comparison needs at least 3 samples per signal")
    if len(a) == len(b) and np.allclose(a.t, b.t, rtol=0, atol=1e-12):
        t, va, vb = a.t, a.v, b.v
    else:
        t = _common_grid(a, b)
        va, vb = resample(a, t).v, resample(b, t).v
    corr, rmse, lag = [], [], []
    for j in range(va.shape[1]):
        x, y = va[:, j], vb[:, j]
        sx, sy = x.std(), y.std()
        if sx == 0 or sy == 0:
            raise ZeroVariance(f"channel {j} is constant")
        zx, zy = (x - x.mean()) / sx, (y - y.mean()) / sy
        corr.append(float(np.clip(np.mean(zx * zy), -1.0, 1.0)))
        rmse.append(float(np.sqrt(np.mean((zx - zy) ** 2))))
        lag.append(_lag(x, y))
    return {"n_samples": int(len(t)), "dt": float((t[-1] - t[0]) / (len(t) - 1)),
            "channels": list(a.channels), "pearson": corr, "rmse_z": rmse, "lag": lag}


# --- sequences ----------------------------------------------------------------------

@dataclass
class CanonicalSequence:
    """Per-frame canonicalization output. Failed frames are NaN in ``poses``
    and listed in ``errors``; ``segments`` are the usable runs after gap fill."""

    poses: np.ndarray
    rotations: np.ndarray
    errors: dict
    filled: list
    segments: list


def canonicalize_sequence(poses, canonicalizer, max_gap: int = MAX_GAP) -> CanonicalSequence:
    """Apply ``canonicalizer(pose) -> (canonical, R)`` to each frame independently.

    Gaps of up to ``max_gap`` failed frames between good frames are filled by
    linear interpolation; longer gaps (or failures at either end) split the
    sequence into separate segments.
    """
    poses = np.asarray(poses, dtype=float)
    if len(poses) == 0:
        raise EmptySequence("no frames")
    out = np.full_like(poses, np.nan)
    rots = np.full((len(poses), 3, 3), np.nan)
    errors = {}
    for i, p in enumerate(poses):
        try:
            c, r = canonicalizer(p)
            out[i], rots[i] = c, r
        except PoseCanonError as exc:
            errors[i] = f"{type(exc).__name__}: {exc}"
    bad = np.zeros(len(poses), bool)
    bad[list(errors)] = True
    filled = []
    segments = []
    i, n = 0, len(poses)
    start = None
    while i < n:
        if not bad[i]:
            if start is None:
                start = i
            i += 1
            continue
        j = i
        while j < n and bad[j]:
            j += 1
        if start is not None and j < n and j - i <= max_gap:
            w = (np.arange(i, j) - (i - 1)) / (j - (i - 1))
            out[i:j] = (1 - w)[:, None, None] * out[i - 1] + w[:, None, None] * out[j]
            filled.extend(range(i, j))
        else:
            if start is not None:
                segments.append((start, i))
            start = None
        i = j
    if start is not None:
        segments.append((start, n))
    return CanonicalSequence(out, rots, errors, filled, segments)


# --- CSV ---------------------------------------------------------------------------------

def write_signal_csv(path, s: SignalSeries):
    """``#``-prefixed JSON metadata line, then ``t`` plus one column per channel."""
    header = {"format": SIGNAL_FORMAT, "version": SIGNAL_VERSION, "units": s.units, **s.meta}
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *s.channels])
    for ti, row in zip(s.t, s.v):
        w.writerow([repr(float(ti)), *(repr(float(x)) for x in row)])
    Path(path).write_text(buf.getvalue())


def read_signal_csv(path) -> SignalSeries:
    lines = Path(path).read_text().splitlines()
    meta = {}
    body = []
    for ln, line in enumerate(lines, 1):
        if line.startswith("#"):
            try:
                meta.update(json.loads(line[1:]))
            except json.JSONDecodeError:
                pass
        elif line.strip():
            body.append((ln, line))
    if not body:
        raise ParseError(f"{path}: no column header")
    rows = list(csv.reader([b for _, b in body]))
    cols = rows[0]
    if not cols or cols[0] != "t":
        raise ParseError(f"{path}: first column must be 't'")
    data = []
    for (ln, _), row in zip(body[1:], rows[1:]):
        if len(row) != len(cols):
            raise ParseError(f"{path}: line {ln}: expected {len(cols)} fields, got {len(row)}")
        try:
            data.append([float(x) for x in row])
        except ValueError:
            raise ParseError(f"{path}: line {ln}: non-numeric field") from None
    if not data:
        raise ParseError(f"{path}: no samples")
    arr = np.array(data)
    units = meta.pop("units", "")
    meta.pop("format", None)
    meta.pop("version", None)
    return SignalSeries(arr[:, 0], arr[:, 1:], units=units, channels=tuple(cols[1:]), meta=meta)
