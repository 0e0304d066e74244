"""Windowed multi-head self-attention with shifted windows.

Feature maps are laid out (H, W, C) or batched (B, H, W, C).  Attention is
computed inside non-overlapping square windows; every second attention
layer first rolls the map by half a window so information crosses window
borders, with an additive mask blocking pairs that were not neighbours
before the roll.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

MASK_OFF = -1e9  # finite stand-in for -inf on blocked attention pairs


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std, sampled by inverse CDF."""
    from scipy.special import ndtr, ndtri

    lo, hi = ndtr(-2.0), ndtr(2.0)
    u = rng.uniform(lo, hi, size=shape)
    return (ndtri(u) * std).astype(np.float32)


@dataclass(frozen=True)
class WindowGrid:
    """Window geometry for one feature map: extents, window edge, roll amount."""

    height: int
    width: int
    window: int
    shift: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.height % self.window or self.width % self.window:
            raise ShapeError(
                f"window {self.window} does not divide extents "
                f"{self.height}x{self.width}")
        if not 0 <= self.shift < self.window:
            raise ConfigError(f"shift must lie in [0, window), got {self.shift}")

    @property
    def n_windows(self) -> int:
        return (self.height // self.window) * (self.width // self.window)

    @property
    def tokens_per_window(self) -> int:
        return self.window * self.window


def window_partition(x: Tensor, window: int) -> Tensor:
    """(H, W, C) -> (nWin, window^2, C); batched input stacks along nWin.

    Windows are ordered row-major over the map and tokens row-major within
    each window, so ``window_reverse`` is an exact inverse.
    """
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected (H,W,C) or (B,H,W,C), got {x.shape}")
    h, w, c = x.shape[-3], x.shape[-2], x.shape[-1]
    if h % window or w % window:
        raise ShapeError(f"window {window} does not divide extents {h}x{w}")
    b = x.shape[0] if batched else 1
    x4 = x if batched else T.reshape(x, (1, h, w, c))
    x4 = T.reshape(x4, (b, h // window, window, w // window, window, c))
    x4 = T.transpose(x4, (0, 1, 3, 2, 4, 5))
    return T.reshape(x4, (b * (h // window) * (w // window), window * window, c))


def window_reverse(windows: Tensor, window: int, height: int, width: int,
                   batch: Optional[int] = None) -> Tensor:
    """Inverse of :func:`window_partition`."""
    n_win = (height // window) * (width // window)
    if windows.shape[0] % n_win:
        raise ShapeError(
            f"{windows.shape[0]} windows do not tile a {height}x{width} map "
            f"with window {window}")
    b = windows.shape[0] // n_win
    c = windows.shape[-1]
    x = T.reshape(windows, (b, height // window, width // window, window, window, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    x = T.reshape(x, (b, height, width, c))
    if batch is None and b == 1:
        return T.reshape(x, (height, width, c))
    return x


def cyclic_shift(x: Tensor, shift: int) -> Tensor:
    """Toroidal roll of the two spatial axes by (-shift, -shift)."""
    h, w = x.shape[-3], x.shape[-2]
    if not 0 <= shift < min(h, w):
        raise ConfigError(f"shift {shift} out of range for {h}x{w} map")
    if shift == 0:
        return x
    ax = (x.ndim - 3, x.ndim - 2)
    return T.roll(x, (-shift, -shift), ax)


def cyclic_unshift(x: Tensor, shift: int) -> Tensor:
    """Inverse roll, restoring the original layout exactly."""
    if shift == 0:
        return x
    ax = (x.ndim - 3, x.ndim - 2)
    return T.roll(x, (shift, shift), ax)


def _axis_groups(n: int, window: int, shift: int) -> np.ndarray:
    # pre-shift region bands along one axis: [0, n-window), [n-window, n-shift), rest
    g = np.zeros(n, dtype=np.int64)
    g[n - window:] = 1
    g[n - shift:] = 2
    return g


def region_labels(grid: WindowGrid) -> np.ndarray:
    """Label every pixel with its pre-shift region id (H, W int array)."""
    rows = _axis_groups(grid.height, grid.window, grid.shift)
    cols = _axis_groups(grid.width, grid.window, grid.shift)
    return rows[:, None] * 3 + cols[None, :]


def attention_mask(grid: WindowGrid) -> np.ndarray:
    """Additive logit mask (nWin, T, T): 0 for same pre-shift region, -1e9 otherwise.

    For ``shift == 0`` the mask is all-pass (all zeros).
    """
    t = grid.tokens_per_window
    if grid.shift == 0:
        return np.zeros((grid.n_windows, t, t), dtype=np.float32)
    labels = region_labels(grid)
    labels = np.roll(labels, (-grid.shift, -grid.shift), axis=(0, 1))
    w = grid.window
    lab = labels.reshape(grid.height // w, w, grid.width // w, w)
    lab = lab.transpose(0, 2, 1, 3).reshape(grid.n_windows, t)
    same = lab[:, :, None] == lab[:, None, :]
    return np.where(same, 0.0, MASK_OFF).astype(np.float32)


def relative_position_index(window: int) -> np.ndarray:
    """(T, T) index into a (2*window-1)^2 bias table, keyed by token offset."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window),
                                  indexing="ij"), axis=-1).reshape(-1, 2)
    rel = coords[:, None, :] - coords[None, :, :]  # (T, T, 2) in [-(w-1), w-1]
    return ((rel[..., 0] + window - 1) * (2 * window - 1)
            + (rel[..., 1] + window - 1)).astype(np.intp)


class AttentionParams:
    """Projection weights and the learned relative-position bias for one layer."""

    def __init__(self, w_q: Tensor, w_k: Tensor, w_v: Tensor, w_out: Tensor,
                 bias_table: Tensor, heads: int, window: int):
        c = w_q.shape[0]
        if c % heads:
            raise ConfigError(f"channels {c} not divisible by {heads} heads")
        expected = ((2 * window - 1) ** 2, heads)
        if bias_table.shape != expected:
            raise ConfigError(
                f"bias table shape {bias_table.shape} != {expected} for "
                f"window {window}, heads {heads}")
        self.w_q, self.w_k, self.w_v, self.w_out = w_q, w_k, w_v, w_out
        self.bias_table = bias_table
        self.heads = heads
        self.window = window
        self.head_dim = c // heads
        self._rel_index = relative_position_index(window)

    @classmethod
    def create(cls, channels: int, heads: int, window: int,
               rng: np.random.Generator) -> "AttentionParams":
        def w():
            return Tensor(trunc_normal(rng, (channels, channels)), requires_grad=True)

        table = Tensor(trunc_normal(rng, ((2 * window - 1) ** 2, heads)),
                       requires_grad=True)
        return cls(w(), w(), w(), w(), table, heads, window)

    def named(self, prefix: str) -> Iterator[tuple]:
        yield f"{prefix}.w_q", self.w_q
        yield f"{prefix}.w_k", self.w_k
        yield f"{prefix}.w_v", self.w_v
        yield f"{prefix}.w_out", self.w_out
        yield f"{prefix}.bias_table", self.bias_table


def multi_head_attention(tokens: Tensor, params: AttentionParams,
                         mask: Optional[np.ndarray] = None,
                         capture: Optional[dict] = None) -> Tensor:
    """softmax(Q K^T / sqrt(d) + B [+ mask]) V per head, then output projection.

    ``tokens`` is (nWin, T, C) with T == window^2.  ``mask`` is an additive
    (nWin', T, T) array with nWin' dividing nWin (it repeats over the batch).
    ``capture['probs']`` receives the post-softmax weights when requested.
    """
    n, t, c = tokens.shape
    heads, dh = params.heads, params.head_dim
    if t != params.window ** 2:
        raise ShapeError(f"{t} tokens do not fill a window of edge {params.window}")
    if c != params.w_q.shape[0]:
        raise ConfigError(f"token width {c} != projection width {params.w_q.shape[0]}")

    q = T.reshape(tokens @ params.w_q, (n, t, heads, dh))
    k = T.reshape(tokens @ params.w_k, (n, t, heads, dh))
    v = T.reshape(tokens @ params.w_v, (n, t, heads, dh))
    q = T.transpose(q, (0, 2, 1, 3))  # (n, heads, T, dh)
    k = T.transpose(k, (0, 2, 3, 1))  # (n, heads, dh, T)
    v = T.transpose(v, (0, 2, 1, 3))

    logits = T.scale(q @ k, 1.0 / np.sqrt(dh))
    bias = T.take_rows(params.bias_table, params._rel_index.ravel())  # (T*T, heads)
    bias = T.transpose(T.reshape(bias, (t, t, heads)), (2, 0, 1))
    logits = T.add(logits, T.reshape(bias, (1, heads, t, t)))

    if mask is not None:
        m = np.asarray(mask)
        if m.shape[-2:] != (t, t) or n % m.shape[0]:
            raise ShapeError(f"mask shape {m.shape} incompatible with logits "
                             f"({n}, {heads}, {t}, {t})")
        reps = n // m.shape[0]
        mt = Tensor(m.reshape(1, m.shape[0], 1, t, t), dtype=tokens.dtype)
        logits = T.reshape(logits, (reps, m.shape[0], heads, t, t))
        logits = T.reshape(T.add(logits, mt), (n, heads, t, t))

    probs = T.softmax(logits)
    if capture is not None:
        capture["probs"] = probs.numpy().copy()

    out = probs @ v  # (n, heads, T, dh)
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (n, t, c))
    return out @ params.w_out


class MlpParams:
    """Two dense layers with a GELU between them."""

    def __init__(self, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def create(cls, channels: int, hidden: int, rng: np.random.Generator,
               out_channels: Optional[int] = None) -> "MlpParams":
        out_channels = channels if out_channels is None else out_channels
        return cls(
            Tensor(trunc_normal(rng, (channels, hidden)), requires_grad=True),
            Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True),
            Tensor(trunc_normal(rng, (hidden, out_channels)), requires_grad=True),
            Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True),
        )

    def named(self, prefix: str) -> Iterator[tuple]:
        yield f"{prefix}.fc1.weight", self.w1
        yield f"{prefix}.fc1.bias", self.b1
        yield f"{prefix}.fc2.weight", self.w2
        yield f"{prefix}.fc2.bias", self.b2

    def __call__(self, x: Tensor) -> Tensor:
        h = T.add(x @ self.w1, self.b1)
        return T.add(T.gelu(h) @ self.w2, self.b2)


class NormParams:
    def __init__(self, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
        self.gamma, self.beta, self.eps = gamma, beta, eps

    @classmethod
    def create(cls, channels: int) -> "NormParams":
        return cls(Tensor(np.ones(channels, dtype=np.float32), requires_grad=True),
                   Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True))

    def named(self, prefix: str) -> Iterator[tuple]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


MLP_RATIO = 4  # hidden width multiple inside each transformer MLP


class BlockParams:
    """One two-part transformer unit: plain-window half then shifted half."""

    def __init__(self, norm1, attn1, norm2, mlp1, norm3, attn2, norm4, mlp2):
        self.norm1, self.attn1, self.norm2, self.mlp1 = norm1, attn1, norm2, mlp1
        self.norm3, self.attn2, self.norm4, self.mlp2 = norm3, attn2, norm4, mlp2

    @classmethod
    def create(cls, channels: int, heads: int, window: int,
               rng: np.random.Generator) -> "BlockParams":
        hidden = MLP_RATIO * channels
        return cls(
            NormParams.create(channels),
            AttentionParams.create(channels, heads, window, rng),
            NormParams.create(channels),
            MlpParams.create(channels, hidden, rng),
            NormParams.create(channels),
            AttentionParams.create(channels, heads, window, rng),
            NormParams.create(channels),
            MlpParams.create(channels, hidden, rng),
        )

    def named(self, prefix: str) -> Iterator[tuple]:
        for sub, name in ((self.norm1, "norm1"), (self.attn1, "attn1"),
                          (self.norm2, "norm2"), (self.mlp1, "mlp1"),
                          (self.norm3, "norm3"), (self.attn2, "attn2"),
                          (self.norm4, "norm4"), (self.mlp2, "mlp2")):
            yield from sub.named(f"{prefix}.{name}")


def _windowed_attention(x: Tensor, norm: NormParams, attn: AttentionParams,
                        grid: WindowGrid, shift: int,
                        capture: Optional[dict] = None) -> Tensor:
    y = norm(x)
    if shift:
        y = cyclic_shift(y, shift)
    windows = window_partition(y, grid.window)
    mask = attention_mask(WindowGrid(grid.height, grid.width, grid.window, shift)) \
        if shift else None
    out = multi_head_attention(windows, attn, mask=mask, capture=capture)
    y = window_reverse(out, grid.window, grid.height, grid.width,
                       batch=x.shape[0] if x.ndim == 4 else None)
    if shift:
        y = cyclic_unshift(y, shift)
    return y


def swin_block(x: Tensor, params: BlockParams, grid: WindowGrid,
               capture: Optional[dict] = None) -> Tensor:
    """Window attention, MLP, shifted-window attention, MLP; all residual.

    ``grid.shift`` applies to the second attention half; the first always
    runs unshifted.  Output shape equals input shape.
    """
    h, w = x.shape[-3], x.shape[-2]
    if (h, w) != (grid.height, grid.width):
        raise ShapeError(f"grid {grid.height}x{grid.width} does not match map {h}x{w}")
    cap1 = {} if capture is not None else None
    x = T.add(x, _windowed_attention(x, params.norm1, params.attn1, grid, 0, cap1))
    x = T.add(x, params.mlp1(params.norm2(x)))
    cap2 = {} if capture is not None else None
    x = T.add(x, _windowed_attention(x, params.norm3, params.attn2, grid,
                                     grid.shift, cap2))
    x = T.add(x, params.mlp2(params.norm4(x)))
    if capture is not None:
        capture["probs_wmsa"] = cap1["probs"]
        capture["probs_swmsa"] = cap2["probs"]
    return x
