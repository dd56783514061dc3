"""A small tape-based reverse-mode autodiff engine over numpy float64 arrays.

Operations executed while a :class:`Tape` is active are recorded in execution
order (which is topological); :meth:`Tape.backward` replays them in reverse.
Outside a tape the same functions just compute values, which is what
inference and finite-difference probes use.

Every forward result is checked for NaN/Inf and raises :class:`NonFinite`.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite, ShapeMismatch
from .geom3d import ACOS_EPS

_TAPE: contextvars.ContextVar = contextvars.ContextVar("posecanon_tape", default=None)
_CLAMP_MONITOR: contextvars.ContextVar = contextvars.ContextVar("posecanon_clamp", default=None)
_KINK_MONITOR: contextvars.ContextVar = contextvars.ContextVar("posecanon_kink", default=None)

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


class DiffArray:
    """An array value plus (after backward) its gradient."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_tracked", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._tracked = requires_grad

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    size = property(lambda self: self.value.size)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffArray(shape={self.shape}{label})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, key): return getitem(self, key)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def swapaxes(self, a, b): return swapaxes(self, a, b)

    @property
    def mT(self):
        return swapaxes(self, -1, -2)


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: DiffArray
    backward: object
    saved: dict = field(default_factory=dict)


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; nested tapes are allowed and the innermost one
    records.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self):
        self._token = _TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _TAPE.reset(self._token)
        self._token = None
        return False

    def backward(self, loss: DiffArray, params=None) -> None:
        """Populate ``.grad`` of every tracked array reachable from ``loss``.

        ``params`` (an iterable of leaf arrays) get zero gradients when the
        loss does not depend on them.
        """
        if loss.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
        for rec in self.records:
            rec.output.grad = None
            for x in rec.inputs:
                x.grad = None
        if params is not None:
            for p in params:
                p.grad = None
        loss.grad = np.ones_like(loss.value)
        for rec in reversed(self.records):
            g = rec.output.grad
            if g is None:
                continue
            grads = rec.backward(g)
            for x, gx in zip(rec.inputs, grads):
                if gx is None or not x._tracked:
                    continue
                gx = _unbroadcast(gx, x.shape)
                if x.grad is None:
                    x.grad = np.array(gx, dtype=np.float64, copy=True)
                else:
                    x.grad += gx
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.value)
                elif not np.all(np.isfinite(p.grad)):
                    raise NonFinite(f"non-finite gradient for {p.name or p!r}")


def current_tape() -> Tape | None:
    return _TAPE.get()


def backward(tape: Tape, loss: DiffArray, params=None) -> None:
    tape.backward(loss, params)


def as_diff(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _emit(op: str, value, inputs, backward_fn, **saved) -> DiffArray:
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFinite(f"{op} produced a non-finite value")
    out = DiffArray(value)
    tape = _TAPE.get()
    if tape is not None and any(x._tracked for x in inputs):
        out._tracked = True
        tape.records.append(_Record(op, tuple(inputs), out, backward_fn, saved))
    return out


# --- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    return _emit("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    return _emit("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    av, bv = a.value, b.value
    return _emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    av, bv = a.value, b.value
    out = av / bv
    return _emit("div", out, (a, b), lambda g: (g / bv, -g * out / bv))


def scale(a, c: float) -> DiffArray:
    a = as_diff(a)
    return _emit("scale", a.value * c, (a,), lambda g: (g * c,))


def power(a, p: float) -> DiffArray:
    a = as_diff(a)
    av = a.value
    return _emit("power", av ** p, (a,), lambda g: (g * p * av ** (p - 1),))


def sqrt(a) -> DiffArray:
    a = as_diff(a)
    out = np.sqrt(a.value)
    return _emit("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def matmul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")
    return _emit("matmul", av @ bv, (a, b),
                 lambda g: (g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g))


# --- nonlinearities --------------------------------------------------------------

def relu(a) -> DiffArray:
    a = as_diff(a)
    mask = a.value > 0
    mon = _KINK_MONITOR.get()
    if mon is not None:
        mon.append(mask.copy())
    return _emit("relu", a.value * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> DiffArray:
    a = as_diff(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a) -> DiffArray:
    """``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`` (tanh approximation)."""
    a = as_diff(a)
    x = a.value
    t = np.tanh(GELU_C * (x + GELU_K * x ** 3))
    out = 0.5 * x * (1.0 + t)
    dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
    return _emit("gelu", out, (a,), lambda g: (g * (0.5 * (1.0 + t) + 0.5 * x * dt),))


def softmax(a, axis: int = -1) -> DiffArray:
    a = as_diff(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", s, (a,),
                 lambda g: (s * (g - np.sum(g * s, axis=axis, keepdims=True)),))


def layer_norm(a, eps: float = 1e-5) -> DiffArray:
    """Normalise over the last axis to zero mean, unit variance (no affine)."""
    a = as_diff(a)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    sigma = np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True) + eps)
    y = (x - mu) / sigma

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return ((g - gm - y * gy) / sigma,)

    return _emit("layer_norm", y, (a,), back)


def arccos_clamped(a, eps: float = ACOS_EPS) -> DiffArray:
    """``arccos`` of the argument clipped to ``[-1 + eps, 1 - eps]``.

    The gradient is zero wherever clipping is active.
    """
    a = as_diff(a)
    x = a.value
    mon = _CLAMP_MONITOR.get()
    if mon is not None and x.size:
        mon.append(float(np.min(1.0 - np.abs(x))))
    xc = np.clip(x, -1.0 + eps, 1.0 - eps)
    inside = xc == x
    d = -1.0 / np.sqrt(1.0 - xc * xc)
    return _emit("arccos_clamped", np.arccos(xc), (a,), lambda g: (g * d * inside,))


# --- shape and reduction -----------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def sqnorm(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    av = a.value

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (2.0 * g * av,)

    return _emit("sqnorm", np.sum(av * av, axis=axis, keepdims=keepdims), (a,), back)


def reshape(a, shape) -> DiffArray:
    a = as_diff(a)
    old = a.shape
    return _emit("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> DiffArray:
    a = as_diff(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(a.value, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> DiffArray:
    a = as_diff(a)
    return _emit("swapaxes", np.swapaxes(a.value, i, j), (a,),
                 lambda g: (np.swapaxes(g, i, j),))


def getitem(a, key) -> DiffArray:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    a = as_diff(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _emit("getitem", a.value[key], (a,), back)


def concat(arrays, axis: int = -1) -> DiffArray:
    arrays = [as_diff(x) for x in arrays]
    sizes = [x.shape[axis] for x in arrays]
    splits = np.cumsum(sizes)[:-1]
    return _emit("concat", np.concatenate([x.value for x in arrays], axis=axis), arrays,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(arrays, axis: int = 0) -> DiffArray:
    arrays = [as_diff(x) for x in arrays]
    n = len(arrays)
    return _emit("stack", np.stack([x.value for x in arrays], axis=axis), arrays,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def cross3(a, b) -> DiffArray:
    """Cross product along the last axis (length 3)."""
    a, b = as_diff(a), as_diff(b)
    av, bv = a.value, b.value
    if av.shape[-1] != 3 or bv.shape[-1] != 3:
        raise ShapeMismatch("cross3 needs trailing dimension 3")
    return _emit("cross3", np.cross(av, bv), (a, b),
                 lambda g: (np.cross(bv, g), np.cross(g, av)))


# --- finite-difference checking --------------------------------------------------

@contextlib.contextmanager
def kink_monitor():
    """Collect the active-unit mask of every :func:`relu` evaluated."""
    masks: list = []
    token = _KINK_MONITOR.set(masks)
    try:
        yield masks
    finally:
        _KINK_MONITOR.reset(token)


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

@contextlib.contextmanager
def clamp_monitor():
    """Collect the smallest ``1 - |x|`` seen by :func:`arccos_clamped`."""
    margins: list = []
    token = _CLAMP_MONITOR.set(margins)
    try:
        yield margins
    finally:
        _CLAMP_MONITOR.reset(token)


@dataclass
class GradCheckReport:
    max_rel_error: dict
    checked: int = 0
    skipped_near_clamp: int = 0
    skipped_nonsmooth: int = 0
    failures: list = field(default_factory=list)
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        return (f"checked={self.checked} worst_rel={self.worst:.3g} "
                f"skipped_clamp={self.skipped_near_clamp} "
                f"skipped_nonsmooth={self.skipped_nonsmooth} failures={len(self.failures)}")


def grad_check(f, params, step: float = 1e-4, tol: float = 1e-4, max_entries: int | None = None,
               rng: np.random.Generator | None = None, floor: float = 1e-6,
               clamp_margin: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    ``params`` is a dict ``name -> DiffArray`` (or a list). At most
    ``max_entries`` randomly chosen coordinates are probed per parameter.
    Relative error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.

    A coordinate is skipped (and counted) when an arccos argument comes within
    ``clamp_margin`` of its clamp during probing, or when the derivative is
    not smooth at the probe scale: some ReLU changes its active set between
    ``x - step`` and ``x + step``, or central differences at ``step`` and
    ``step / 2`` disagree beyond ``tol``.
    """
    if not isinstance(params, dict):
        params = {p.name or f"p{i}": p for i, p in enumerate(params)}
    rng = rng or np.random.default_rng(0)
    with Tape() as tape:
        loss = f()
    tape.backward(loss, list(params.values()))
    analytic = {k: p.grad.copy() for k, p in params.items()}

    def probe(p, idx, h):
        # also reports whether a relu switched between the two stencil points
        orig = p.value[idx]
        with kink_monitor() as plus:
            p.value[idx] = orig + h
            fp = float(f().value)
        with kink_monitor() as minus:
            p.value[idx] = orig - h
            fm = float(f().value)
        p.value[idx] = orig
        return (fp - fm) / (2.0 * h), not _same_pattern(plus, minus)

    report = GradCheckReport(max_rel_error={}, tol=tol)
    for name, p in params.items():
        flat = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            flat = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        worst = 0.0
        for k in flat:
            idx = np.unravel_index(k, p.shape)
            with clamp_monitor() as margins:
                num, kinked = probe(p, idx, step)
                num_half, _ = probe(p, idx, step / 2)
            if margins and min(margins) < clamp_margin:
                report.skipped_near_clamp += 1
                continue
            ana = float(analytic[name][idx])
            if kinked or abs(num - num_half) > tol * max(abs(num), abs(num_half), floor):
                report.skipped_nonsmooth += 1
                continue
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            report.checked += 1
            worst = max(worst, rel)
            if rel > tol:
                report.failures.append((name, tuple(int(i) for i in idx), ana, num, rel))
        report.max_rel_error[name] = worst
    return report
