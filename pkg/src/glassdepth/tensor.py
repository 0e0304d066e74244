"""Minimal N-dimensional tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous row-major float array.  Operations
execute eagerly in numpy; while a :class:`Tape` is active, every operation
that touches a gradient-requiring tensor records a backward rule onto the
tape.  ``Tape.backward`` replays the records in reverse and deposits
``dLoss/dLeaf`` into the ``.grad`` buffer of every gradient-requiring leaf.

Compute defaults to float32.  Passing float64 arrays builds a float64
graph; that path exists for high-precision reference checks (finite
differences) and is otherwise identical.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.special import erf as _erf, expit as _expit

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "add", "sub", "mul", "div", "scale", "add_scalar", "matmul",
    "relu", "gelu", "sigmoid", "sqrt", "tsum", "tmean",
    "reshape", "transpose", "concat", "take_rows", "roll", "softmax", "layer_norm",
    "conv2d", "global_avg_pool", "upsample2x",
    "set_num_threads",
]

_ACTIVE_TAPE: Optional["Tape"] = None

# Flipped by the self-check fault-injection hook; negates one backward rule
# so that gradient checks demonstrably catch a broken rule.
_FAULT_INJECT = False

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def set_num_threads(n: int) -> None:
    """Best-effort cap on BLAS threads (determinism / benchmarking aid)."""
    try:
        from threadpoolctl import threadpool_limits  # type: ignore

        threadpool_limits(limits=n)
    except Exception:
        import os

        os.environ.setdefault("OMP_NUM_THREADS", str(n))


class Tensor:
    """Dense float array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        # Compute defaults to float32; float64 must be requested explicitly
        # (the high-precision reference path used by gradient checks).
        if dtype is None:
            dtype = np.float32
        dtype = np.dtype(dtype)
        if dtype not in (np.float32, np.float64):
            raise TypeError(f"unsupported dtype {dtype}; use float32 or float64")
        self.data: np.ndarray = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        """Detached copy in the requested float dtype (new leaf)."""
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype)

    def __repr__(self) -> str:
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad})"

    # arithmetic sugar; scalars are python floats/ints
    def __add__(self, other):
        return add_scalar(self, other) if _is_scalar(other) else add(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_scalar(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        return scale(self, other) if _is_scalar(other) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __truediv__(self, other):
        return scale(self, 1.0 / other) if _is_scalar(other) else div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return _slice(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating))


class _Record:
    __slots__ = ("out_id", "in_ids", "backward")

    def __init__(self, out_id, in_ids, backward):
        self.out_id = out_id
        self.in_ids = in_ids
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations for one forward pass.

    Records are appended in execution order, which is already topological.
    ``backward`` may run exactly once per tape; a second call raises
    :class:`ContractError` so silent gradient accumulation bugs cannot hide.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._ids: dict[int, int] = {}
        self._keep: list[Tensor] = []
        self._leaves: dict[int, Tensor] = {}
        self._next_id = 0
        self._used = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _register(self, t: Tensor, leaf: bool) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = self._next_id
            self._next_id += 1
            self._ids[id(t)] = nid
            self._keep.append(t)
            t.node_id = nid
            if leaf and t.requires_grad:
                self._leaves[nid] = t
        return nid

    def record(self, out: Tensor, inputs: Sequence[Tensor],
               backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> None:
        in_ids = [self._register(t, leaf=True) for t in inputs]
        out_id = self._register(out, leaf=False)
        self._records.append(_Record(out_id, in_ids, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate dLoss/dLeaf into every gradient-requiring leaf's .grad."""
        if self._used:
            raise ContractError("backward already ran on this tape; build a new tape")
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        self._used = True
        loss_id = self._ids.get(id(loss))
        if loss_id is None:
            raise ContractError("loss tensor was not recorded on this tape")

        grads: dict[int, np.ndarray] = {loss_id: np.ones_like(loss.data)}
        for rec in reversed(self._records):
            g = grads.pop(rec.out_id, None)
            if g is None:
                continue
            for nid, ig in zip(rec.in_ids, rec.backward(g)):
                if ig is None:
                    continue
                acc = grads.get(nid)
                grads[nid] = ig if acc is None else acc + ig

        for nid, leaf in self._leaves.items():
            g = grads.get(nid)
            if g is None:
                g = np.zeros_like(leaf.data)
            elif g.shape != leaf.data.shape:
                g = np.broadcast_to(g, leaf.data.shape).copy()
            if leaf.grad is None:
                leaf.grad = np.array(g, dtype=leaf.data.dtype, copy=True)
            else:
                leaf.grad += g


def _apply(out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(out_data, dtype=np.asarray(out_data).dtype)
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def _check_same_dtype(*tensors: Tensor) -> None:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise TypeError(f"mixed dtypes in one graph: {dt} vs {t.data.dtype}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting, gradients unbroadcast)

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    ra, rb = a.requires_grad, b.requires_grad
    sa, sb = a.shape, b.shape

    def backward(g):
        return (_unbroadcast(g, sa) if ra else None,
                _unbroadcast(g, sb) if rb else None)

    return _apply(a.data + b.data, [a, b], backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    ra, rb = a.requires_grad, b.requires_grad
    sa, sb = a.shape, b.shape

    def backward(g):
        return (_unbroadcast(g, sa) if ra else None,
                _unbroadcast(-g, sb) if rb else None)

    return _apply(a.data - b.data, [a, b], backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    ra, rb = a.requires_grad, b.requires_grad
    da, db = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * db, da.shape) if ra else None,
                _unbroadcast(g * da, db.shape) if rb else None)

    return _apply(da * db, [a, b], backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    ra, rb = a.requires_grad, b.requires_grad
    da, db = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g / db, da.shape) if ra else None
        gb = _unbroadcast(-g * da / (db * db), db.shape) if rb else None
        return ga, gb

    return _apply(da / db, [a, b], backward)


def scale(a: Tensor, s) -> Tensor:
    s = float(s)
    ra = a.requires_grad

    def backward(g):
        return (g * s if ra else None,)

    return _apply(a.data * s, [a], backward)


def add_scalar(a: Tensor, c) -> Tensor:
    ra = a.requires_grad

    def backward(g):
        return (g if ra else None,)

    return _apply(a.data + float(c), [a], backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes broadcast as a batch."""
    _check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    ra, rb = a.requires_grad, b.requires_grad
    da, db = a.data, b.data

    if db.ndim == 2:
        # stacked tokens hitting one weight matrix: run a single flat gemm
        k, n = db.shape
        flat = da.reshape(-1, k)
        out = (flat @ db).reshape(da.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ db.T).reshape(da.shape) if ra else None
            gb = flat.T @ g2 if rb else None
            return ga, gb

        return _apply(out, [a, b], backward)

    def backward(g):
        ga = _unbroadcast(g @ db.swapaxes(-1, -2), da.shape) if ra else None
        gb = _unbroadcast(da.swapaxes(-1, -2) @ g, db.shape) if rb else None
        return ga, gb

    return _apply(da @ db, [a, b], backward)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a: Tensor) -> Tensor:
    ra = a.requires_grad
    da = a.data

    def backward(g):
        return (g * (da > 0) if ra else None,)

    return _apply(np.maximum(da, 0), [a], backward)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    ra = a.requires_grad
    da = a.data
    cdf = 0.5 * (1.0 + _erf(da * _INV_SQRT2))

    def backward(g):
        if not ra:
            return (None,)
        pdf = _INV_SQRT2PI * np.exp(-0.5 * da * da)
        return (g * (cdf + da * pdf),)

    return _apply(da * cdf, [a], backward)


def sigmoid(a: Tensor) -> Tensor:
    ra = a.requires_grad
    y = _expit(a.data)

    def backward(g):
        if not ra:
            return (None,)
        gy = g * y * (1.0 - y)
        if _FAULT_INJECT:
            gy = -gy
        return (gy,)

    return _apply(y, [a], backward)


def sqrt(a: Tensor) -> Tensor:
    ra = a.requires_grad
    y = np.sqrt(a.data)

    def backward(g):
        return (g * (0.5 / y) if ra else None,)

    return _apply(y, [a], backward)


# ---------------------------------------------------------------------------
# reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ra = a.requires_grad
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)
    kd_shape = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        if not ra:
            return (None,)
        return (np.broadcast_to(g.reshape(kd_shape), shape).copy(),)

    return _apply(a.data.sum(axis=axes, keepdims=keepdims), [a], backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a: Tensor, shape) -> Tensor:
    ra = a.requires_grad
    old = a.shape

    def backward(g):
        return (g.reshape(old) if ra else None,)

    return _apply(a.data.reshape(shape), [a], backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    ra = a.requires_grad
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)) if ra else None,)

    return _apply(np.ascontiguousarray(a.data.transpose(axes)), [a], backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    _check_same_dtype(*tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    flags = [t.requires_grad for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, offsets, axis=axis)
        return [p if f else None for p, f in zip(parts, flags)]

    return _apply(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def _slice(a: Tensor, key) -> Tensor:
    ra = a.requires_grad
    shape = a.shape
    out = a.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=a.data.dtype)

    def backward(g):
        if not ra:
            return (None,)
        ga = np.zeros(shape, dtype=g.dtype)
        ga[key] = g
        return (ga,)

    return _apply(out, [a], backward)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor by integer index (repeats allowed)."""
    if a.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D table, got {a.shape}")
    idx = np.asarray(indices, dtype=np.intp).ravel()
    ra = a.requires_grad
    shape = a.shape

    def backward(g):
        if not ra:
            return (None,)
        ga = np.zeros(shape, dtype=g.dtype)
        np.add.at(ga, idx, g)
        return (ga,)

    return _apply(a.data[idx], [a], backward)


def roll(a: Tensor, shifts, axes) -> Tensor:
    """Toroidal roll along the given axes (differentiable np.roll)."""
    shifts = tuple(shifts)
    axes = tuple(axes)
    ra = a.requires_grad

    def backward(g):
        if not ra:
            return (None,)
        return (np.roll(g, tuple(-s for s in shifts), axis=axes),)

    return _apply(np.roll(a.data, shifts, axis=axes), [a], backward)


# ---------------------------------------------------------------------------
# neural-network primitives

def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    ra = a.requires_grad
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if not ra:
            return (None,)
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _apply(y, [a], backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then scale/shift."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm expects gamma/beta of shape ({c},), got {gamma.shape} and {beta.shape}")
    _check_same_dtype(x, gamma, beta)
    rx, rg, rb = x.requires_grad, gamma.requires_grad, beta.requires_grad

    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = centered * inv_std
    gdata = gamma.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if rg else None
        gbeta = g.sum(axis=lead) if rb else None
        if rx:
            gxhat = g * gdata
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            gx = (gxhat - m1 - xhat * m2) * inv_std
        else:
            gx = None
        return gx, ggamma, gbeta

    return _apply(xhat * gdata + beta.data, [x, gamma, beta], backward)


def _conv_geometry(extent: int, k: int, stride: int, padding: int) -> int:
    num = extent + 2 * padding - k
    if num < 0 or num % stride != 0:
        raise ShapeError(
            f"conv2d output extent not integral: extent={extent} kernel={k} "
            f"stride={stride} padding={padding}")
    return num // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    # x: (B, C, H, W) -> cols (B, C*k*k, H_out*W_out)
    b, c, h, w = x.shape
    h_out = _conv_geometry(h, k, stride, padding)
    w_out = _conv_geometry(w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, H_out, W_out, k, k)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, h_out * w_out)
    return np.ascontiguousarray(cols), h_out, w_out


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is (C_in, H, W) or batched (B, C_in, H, W); ``kernel`` is
    (C_out, C_in, k, k) with square kernels.  Output extents must come out
    integral for the given stride/padding, else :class:`ShapeError`.
    """
    _check_same_dtype(x, kernel)
    if kernel.ndim != 4 or kernel.shape[-1] != kernel.shape[-2]:
        raise ShapeError(f"kernel must be (C_out, C_in, k, k), got {kernel.shape}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d input must be (C,H,W) or (B,C,H,W), got {x.shape}")
    c_out, c_in, k, _ = kernel.shape
    if x.shape[-3] != c_in:
        raise ShapeError(f"input channels {x.shape} do not match kernel {kernel.shape}")

    xd = x.data if batched else x.data[None]
    b = xd.shape[0]
    h, w = xd.shape[2], xd.shape[3]
    cols, h_out, w_out = _im2col(xd, k, stride, padding)
    w_mat = kernel.data.reshape(c_out, c_in * k * k)
    out = np.matmul(w_mat, cols).reshape(b, c_out, h_out, w_out)
    if not batched:
        out = out[0]
    rx, rk = x.requires_grad, kernel.requires_grad

    def backward(g):
        gm = g.reshape(b, c_out, h_out * w_out) if batched else g.reshape(1, c_out, -1)
        gk = None
        if rk:
            gk = np.matmul(gm, cols.swapaxes(1, 2)).sum(axis=0).reshape(kernel.shape)
        gx = None
        if rx:
            gcols = np.matmul(w_mat.T, gm)  # (B, C_in*k*k, L)
            gcols = gcols.reshape(b, c_in, k, k, h_out, w_out)
            gx_pad = np.zeros((b, c_in, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
            for ki in range(k):
                for kj in range(k):
                    gx_pad[:, :,
                           ki:ki + stride * (h_out - 1) + 1:stride,
                           kj:kj + stride * (w_out - 1) + 1:stride] += gcols[:, :, ki, kj]
            gx = gx_pad[:, :, padding:padding + h, padding:padding + w]
            if not batched:
                gx = gx[0]
        return gx, gk

    return _apply(out, [x, kernel], backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean of a (C, H, W) or (B, C, H, W) map -> (C,) or (B, C)."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool expects (C,H,W) or (B,C,H,W), got {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    ra = x.requires_grad
    inv = 1.0 / (h * w)
    shape = x.shape

    def backward(g):
        if not ra:
            return (None,)
        return (np.broadcast_to((g * inv)[..., None, None], shape).copy(),)

    return _apply(x.data.mean(axis=(-2, -1)), [x], backward)


_LERP_CACHE: dict = {}


def _lerp_matrix(n: int, dtype) -> np.ndarray:
    """(2n, n) interpolation matrix: align-corners-false 2x, borders clamped."""
    key = (n, np.dtype(dtype).str)
    cached = _LERP_CACHE.get(key)
    if cached is not None:
        return cached
    src = np.arange(2 * n) / 2.0 - 0.25
    i0f = np.floor(src)
    frac = src - i0f
    i0 = np.clip(i0f, 0, n - 1).astype(np.intp)
    i1 = np.clip(i0f + 1, 0, n - 1).astype(np.intp)
    u = np.zeros((2 * n, n), dtype=dtype)
    u[np.arange(2 * n), i0] += (1.0 - frac).astype(dtype)
    u[np.arange(2 * n), i1] += frac.astype(dtype)
    _LERP_CACHE[key] = u
    return u


def upsample2x(x: Tensor, mode: str = "nearest") -> Tensor:
    """Double the last two axes; ``nearest`` or ``bilinear`` (align corners false)."""
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown upsample mode {mode!r}")
    if x.ndim < 2:
        raise ShapeError(f"upsample2x needs at least 2 axes, got {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    ra = x.requires_grad

    if mode == "nearest":
        out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

        def backward(g):
            if not ra:
                return (None,)
            gshape = g.shape[:-2] + (h, 2, w, 2)
            return (g.reshape(gshape).sum(axis=(-3, -1)),)

        return _apply(out, [x], backward)

    # separable interpolation as two gemms; the adjoint is the transpose pair
    uh = _lerp_matrix(h, x.dtype)
    uw = _lerp_matrix(w, x.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def backward(g):
        if not ra:
            return (None,)
        return (np.matmul(np.matmul(uh.T, g), uw),)

    return _apply(out, [x], backward)
