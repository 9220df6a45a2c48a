"""Dense NCHW tensors with a reverse-mode tape.

Each op computes its value with numpy and, when any input requires a
gradient, records its parents together with a closure mapping the output
gradient to input gradients. :func:`backward` replays the closures in reverse
topological order. Op outputs are read-only arrays; parameters are the only
tensors whose storage is ever rebound (by the optimizer).
"""
from __future__ import annotations

import contextlib
import weakref
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DegenerateStatisticsError, ParameterError, ShapeError

_grad_enabled = True
_tracker: Optional["AllocationTracker"] = None


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class AllocationTracker:
    """Counts live activation elements while installed.

    Only tensors created while the tracker is active are counted, so
    parameters and the caller's input are excluded. Release is driven by
    object finalization, which is deterministic under CPython refcounting.
    """

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.allocated = 0
        self.grad_tensors = 0

    def _acquire(self, t: "Tensor"):
        n = t.data.size
        self.live += n
        self.allocated += n
        if t.requires_grad:
            self.grad_tensors += 1
        if self.live > self.peak:
            self.peak = self.live
        weakref.finalize(t, self._release, n)

    def _release(self, n: int):
        self.live -= n


@contextlib.contextmanager
def track_allocations():
    global _tracker
    if _tracker is not None:
        raise ContractError("allocation tracking is already active")
    tracker = AllocationTracker()
    _tracker = tracker
    try:
        yield tracker
    finally:
        _tracker = None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        if _tracker is not None and not isinstance(self, Parameter):
            _tracker._acquire(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # arithmetic sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)


class Parameter(Tensor):
    """A named, trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    _freeze(data)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _lift(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that requires it."""
    if loss.size != 1 or any(s != 1 for s in loss.shape):
        raise ContractError(f"backward needs a scalar (1,1,1,1) loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    order: list = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _result(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    xd = x.data
    # subgradient at 0 is 0
    return _result(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _result(out, (x,), lambda g: (g / (2.0 * out),))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    return _result(np.where(mask, xd, 0).astype(xd.dtype), (x,), lambda g: (g * mask,))


def mean(x: Tensor) -> Tensor:
    """Mean over all elements, returned with every axis kept at size 1."""
    n = x.size
    shape = x.shape
    out = x.data.mean(keepdims=True)
    return _result(out, (x,), lambda g: (np.broadcast_to(g / n, shape).astype(g.dtype),))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return _result(x.data.sum(keepdims=True), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- layout ops


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if len(xs) == 0:
        raise ShapeError("concat_channels needs at least one tensor")
    if len(xs) == 1:
        return xs[0]
    ref = xs[0].shape
    for t in xs[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: spatial/batch mismatch between {ref} and {t.shape}")
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=1)
    return _result(out, tuple(xs), lambda g: tuple(np.split(g, splits, axis=1)))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(n, c*r*r, h, w) -> (n, c, h*r, w*r) with out[n,c,h*r+i,w*r+j] = in[n,c*r*r+i*r+j,h,w]."""
    if r < 1:
        raise ParameterError(f"pixel_shuffle: factor must be >= 1, got {r}")
    if r == 1:
        return x
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def bw(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _result(np.ascontiguousarray(out), (x,), bw)


def pixel_unshuffle_array(y: np.ndarray, r: int) -> np.ndarray:
    """Inverse permutation of :func:`pixel_shuffle` on raw arrays."""
    n, c, h, w = y.shape
    return y.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pad_replicate(x: Tensor, p: int) -> Tensor:
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge")

    def bw(g):
        g = g.copy()
        g[:, :, p, :] += g[:, :, :p, :].sum(axis=2)
        g[:, :, p + h - 1, :] += g[:, :, p + h :, :].sum(axis=2)
        g[:, :, :, p] += g[:, :, :, :p].sum(axis=3)
        g[:, :, :, p + w - 1] += g[:, :, :, p + w :].sum(axis=3)
        return (np.ascontiguousarray(g[:, :, p : p + h, p : p + w]),)

    return _result(out, (x,), bw)


# ---------------------------------------------------------------- convolution


def _check4(x: Tensor, op: str):
    if x.data.ndim != 4:
        raise ShapeError(f"{op}: expected a 4-D (n, c, h, w) tensor, got shape {x.shape}")


def _out_size(size: int, k: int, stride: int, pad: int, op: str, axis: str) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"{op}: {axis} axis of size {size} (pad {pad}) is smaller than kernel {k}")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip)."""
    _check4(x, "conv2d")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (co, ci, k, k), got {weight.shape}")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d: channel axis mismatch, input has {c} channels but weight expects {ci}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias axis must have length {co}, got {bias.shape}")
    if stride < 1 or pad < 0:
        raise ParameterError(f"conv2d: need stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    k = kh
    ho = _out_size(h, k, stride, pad, "conv2d", "height")
    wo = _out_size(w, k, stride, pad, "conv2d", "width")
    wd = weight.data
    w2 = wd.reshape(co, ci * k * k)
    xd = x.data

    if k == 1 and pad == 0:
        xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
        xs = np.ascontiguousarray(xs)
        flat = xs.reshape(n, c, ho * wo)
        out = np.matmul(w2, flat).reshape(n, co, ho, wo)

        def bw(g):
            g3 = g.reshape(n, co, ho * wo)
            gx = np.matmul(w2.T, g3).reshape(n, c, ho, wo)
            if stride > 1:
                full = np.zeros_like(xd)
                full[:, :, ::stride, ::stride] = gx
                gx = full
            gw = np.einsum("nop,ncp->oc", g3, flat).reshape(wd.shape)
            return (gx, gw) + ((g.sum(axis=(0, 2, 3)),) if bias is not None else ())

    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        out = (cols @ w2.T).reshape(n, ho, wo, co).transpose(0, 3, 1, 2)

        def bw(g):
            g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
            gw = (g2.T @ cols).reshape(wd.shape)
            dcols = (g2 @ w2).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
            return (np.ascontiguousarray(gx), gw) + ((g.sum(axis=(0, 2, 3)),) if bias is not None else ())

    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bw)


def maxpool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    """Window maximum; the gradient goes to the first maximum in row-major scan order."""
    _check4(x, "maxpool2d")
    if stride < 1 or pad < 0:
        raise ParameterError(f"maxpool2d: need stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    n, c, h, w = x.shape
    ho = _out_size(h, k, stride, pad, "maxpool2d", "height")
    wo = _out_size(w, k, stride, pad, "maxpool2d", "width")
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    win = win.reshape(n, c, ho, wo, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=xd.dtype)
        for idx in range(k * k):
            i, j = divmod(idx, k)
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.where(arg == idx, g, 0)
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return (np.ascontiguousarray(gx),)

    return _result(np.ascontiguousarray(out), (x,), bw)


def avg_pool2d(x: Tensor, kh: int, kw: int) -> Tensor:
    """Non-overlapping average pooling with a (kh, kw) window."""
    _check4(x, "avg_pool2d")
    n, c, h, w = x.shape
    if h % kh or w % kw:
        raise ShapeError(f"avg_pool2d: window {kh}x{kw} does not tile input {h}x{w}")
    ho, wo = h // kh, w // kw
    out = x.data.reshape(n, c, ho, kh, wo, kw).mean(axis=(3, 5))

    def bw(g):
        g6 = np.broadcast_to(g[:, :, :, None, :, None] / (kh * kw), (n, c, ho, kh, wo, kw))
        return (g6.reshape(n, c, h, w).copy(),)

    return _result(out, (x,), bw)


# ---------------------------------------------------------------- interpolation


def _interp_axis(size: int, factor: int):
    t = np.arange(size * factor, dtype=np.float64)
    s = np.clip((t + 0.5) / factor - 0.5, 0.0, size - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, size - 1)
    return i0, i1, s - i0


def _interp_matrix(size: int, factor: int, dtype) -> np.ndarray:
    i0, i1, wt = _interp_axis(size, factor)
    m = np.zeros((size * factor, size), dtype=dtype)
    rows = np.arange(size * factor)
    np.add.at(m, (rows, i0), 1.0 - wt)
    np.add.at(m, (rows, i1), wt)
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling with half-pixel centers and edge clamping.

    Target index ``t`` samples source coordinate ``(t + 0.5) / factor - 0.5``
    clamped to ``[0, size - 1]``.
    """
    if factor not in (1, 2, 4):
        raise ParameterError(f"bilinear_upsample: factor must be 1, 2 or 4, got {factor}")
    if factor == 1:
        return x
    _check4(x, "bilinear_upsample")
    n, c, h, w = x.shape
    xd = x.data
    dt = xd.dtype
    r0, r1, rw = _interp_axis(h, factor)
    c0, c1, cw = _interp_axis(w, factor)
    rw = rw.astype(dt)[:, None]
    cw = cw.astype(dt)
    tmp = xd[:, :, r0, :] * (1 - rw) + xd[:, :, r1, :] * rw
    out = tmp[:, :, :, c0] * (1 - cw) + tmp[:, :, :, c1] * cw

    def bw(g):
        mh = _interp_matrix(h, factor, g.dtype)
        mw = _interp_matrix(w, factor, g.dtype)
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return _result(out, (x,), bw)


# ---------------------------------------------------------------- batchnorm


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    batches: int = 0

    @classmethod
    def identity(cls, c: int, dtype=np.float64) -> "RunningStats":
        return cls(np.zeros(c, dtype=dtype), np.ones(c, dtype=dtype))


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: RunningStats,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel batch normalization.

    In train mode the batch mean/biased variance normalize the input and the
    running statistics move by ``momentum`` toward the batch mean and the
    unbiased batch variance. Eval mode normalizes with the running statistics.
    """
    _check4(x, "batchnorm2d")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: gamma/beta must have length {c}, got {gamma.shape} and {beta.shape}")
    if eps <= 0:
        raise ParameterError("batchnorm2d: eps must be positive")
    xd = x.data
    gd = gamma.data.reshape(1, c, 1, 1)
    m = n * h * w
    if mode == "train":
        if m == 1:
            raise DegenerateStatisticsError("batchnorm2d: train mode needs more than one value per channel")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        state.mean = ((1 - momentum) * state.mean + momentum * mu).astype(state.mean.dtype)
        state.var = ((1 - momentum) * state.var + momentum * var * m / (m - 1)).astype(state.var.dtype)
        state.batches += 1
    elif mode == "eval":
        mu, var = state.mean.astype(xd.dtype), state.var.astype(xd.dtype)
    else:
        raise ParameterError(f"batchnorm2d: mode must be 'train' or 'eval', got {mode!r}")
    invstd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype).reshape(1, c, 1, 1)
    xhat = (xd - mu.reshape(1, c, 1, 1)) * invstd
    out = xhat * gd + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        dxhat = g * gd
        if mode == "train":
            gx = invstd / m * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = dxhat * invstd
        return gx, gg, gb

    return _result(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------- oracle


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|).

    ``x`` must require grad; its ``.grad`` is reset. ``indices`` restricts the
    comparison to a subset of flat coordinates (useful for large inputs).
    """
    if not x.requires_grad:
        raise ContractError("finite_diff_check: x must require grad")
    x.grad = None
    out = f(x)
    backward(out)
    analytic = x.grad.reshape(-1).copy()
    x.grad = None

    base = x.data.copy()
    flat = base.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    worst = 0.0
    with no_grad():
        for i in coords:
            orig = flat[i]
            probe = flat.copy()
            probe[i] = orig + h
            x.data = probe.reshape(base.shape)
            fp = f(x).item()
            probe[i] = orig - h
            x.data = probe.reshape(base.shape)
            fm = f(x).item()
            fd = (fp - fm) / (2 * h)
            err = np.abs(analytic[i] - fd) / max(1.0, np.abs(fd))
            worst = max(worst, float(err))
    x.data = base
    return worst
