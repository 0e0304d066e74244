"""The depth-completion network.

Pipeline: strided-conv patch embedding, four windowed-attention encoder
stages with 2x2 patch merging between them, optional squeeze-excite gating
that scales each stage's features by a pooled summary of the previous one,
and a four-stage convolutional decoder with skip connections that
reassembles a full-resolution depth map.

Feature maps move through the encoder as (B, H, W, C) token grids and
through the decoder as (B, C, H, W) convolution stacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .attention import (BlockParams, MlpParams, NormParams, WindowGrid,
                        swin_block, trunc_normal)
from .errors import ConfigError, ShapeError
from .tensor import Tensor

MODALITY_CHANNELS = {"rgbd": 4, "rgb": 3, "depth": 1}
N_STAGES = 4


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults fit a 320x240 input."""

    modality: str = "rgbd"
    embed_dim: int = 32
    stage_depths: Tuple[int, ...] = (2, 2, 2, 2)
    heads: Tuple[int, ...] = (2, 4, 8, 16)
    window: int = 5
    use_ffm: bool = True
    ffm_reduction: int = 4
    height: int = 240
    width: int = 320
    max_depth: float = 10.0

    def __post_init__(self):
        if self.modality not in MODALITY_CHANNELS:
            raise ConfigError(f"unknown modality {self.modality!r}; "
                              f"choose from {sorted(MODALITY_CHANNELS)}")
        if len(self.stage_depths) != N_STAGES or len(self.heads) != N_STAGES:
            raise ConfigError("stage_depths and heads must list exactly "
                              f"{N_STAGES} stages")
        if self.embed_dim < 1 or self.window < 1 or self.ffm_reduction < 1:
            raise ConfigError("embed_dim, window and ffm_reduction must be positive")
        if self.max_depth <= 0:
            raise ConfigError("max_depth must be positive")
        scale = 2 ** N_STAGES
        if self.height % scale or self.width % scale:
            raise ConfigError(
                f"input extents must be multiples of {scale}, "
                f"got {self.width}x{self.height}")
        for i in range(N_STAGES):
            c = self.embed_dim * (2 ** i)
            if c % self.heads[i]:
                raise ConfigError(
                    f"stage {i}: {c} channels not divisible by {self.heads[i]} heads")
            if self.stage_depths[i] < 0:
                raise ConfigError("stage depths must be non-negative")

    @property
    def in_channels(self) -> int:
        return MODALITY_CHANNELS[self.modality]


@dataclass(frozen=True)
class StagePlan:
    """Resolved geometry of one encoder stage."""

    height: int
    width: int
    channels: int
    heads: int
    depth: int
    window: int
    shift: int

    @property
    def grid(self) -> WindowGrid:
        return WindowGrid(self.height, self.width, self.window, self.shift)


def effective_window(height: int, width: int, requested: int) -> int:
    """Largest window edge <= requested that tiles both extents exactly."""
    g = math.gcd(height, width)
    for cand in range(min(requested, g), 0, -1):
        if g % cand == 0:
            return cand
    return 1


def stage_plan(config: ModelConfig) -> List[StagePlan]:
    plans = []
    for i in range(N_STAGES):
        h = config.height // (2 ** (i + 1))
        w = config.width // (2 ** (i + 1))
        win = effective_window(h, w, config.window)
        shift = win // 2 if win < min(h, w) else 0
        plans.append(StagePlan(h, w, config.embed_dim * (2 ** i),
                               config.heads[i], config.stage_depths[i], win, shift))
    return plans


def _conv_param(rng, c_out, c_in, k):
    return (Tensor(trunc_normal(rng, (c_out, c_in, k, k)), requires_grad=True),
            Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True))


class PatchEmbedParams:
    def __init__(self, weight, bias, norm):
        self.weight, self.bias, self.norm = weight, bias, norm

    @classmethod
    def create(cls, in_channels, embed_dim, rng):
        w, b = _conv_param(rng, embed_dim, in_channels, 2)
        return cls(w, b, NormParams.create(embed_dim))

    def named(self, prefix):
        yield f"{prefix}.conv.weight", self.weight
        yield f"{prefix}.conv.bias", self.bias
        yield from self.norm.named(f"{prefix}.norm")


class StageParams:
    def __init__(self, blocks, merge_weight=None):
        self.blocks = blocks
        self.merge_weight = merge_weight  # (4C, 2C) projection, absent after stage 3

    @classmethod
    def create(cls, plan: StagePlan, merge: bool, rng):
        blocks = [BlockParams.create(plan.channels, plan.heads, plan.window, rng)
                  for _ in range(plan.depth)]
        mw = None
        if merge:
            mw = Tensor(trunc_normal(rng, (4 * plan.channels, 2 * plan.channels)),
                        requires_grad=True)
        return cls(blocks, mw)

    def named(self, prefix):
        for j, blk in enumerate(self.blocks):
            yield from blk.named(f"{prefix}.block{j}")
        if self.merge_weight is not None:
            yield f"{prefix}.merge.weight", self.merge_weight


class FfmGateParams:
    """Squeeze-excite bottleneck: pooled C_in -> C_in/r -> C_out gate."""

    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def create(cls, c_in, c_out, reduction, rng):
        hidden = max(1, c_in // reduction)
        return cls(
            Tensor(trunc_normal(rng, (c_in, hidden)), requires_grad=True),
            Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True),
            Tensor(trunc_normal(rng, (hidden, c_out)), requires_grad=True),
            Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True),
        )

    def named(self, prefix):
        yield f"{prefix}.fc1.weight", self.w1
        yield f"{prefix}.fc1.bias", self.b1
        yield f"{prefix}.fc2.weight", self.w2
        yield f"{prefix}.fc2.bias", self.b2

    def __call__(self, pooled: Tensor) -> Tensor:
        h = T.relu(T.add(pooled @ self.w1, self.b1))
        return T.sigmoid(T.add(h @ self.w2, self.b2))


class DecoderStageParams:
    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def create(cls, c_in, c_out, rng):
        w1, b1 = _conv_param(rng, c_out, c_in, 3)
        w2, b2 = _conv_param(rng, c_out, c_out, 3)
        return cls(w1, b1, w2, b2)

    def named(self, prefix):
        yield f"{prefix}.conv1.weight", self.w1
        yield f"{prefix}.conv1.bias", self.b1
        yield f"{prefix}.conv2.weight", self.w2
        yield f"{prefix}.conv2.bias", self.b2

    def __call__(self, x: Tensor) -> Tensor:
        y = T.relu(_conv_bias(x, self.w1, self.b1, padding=1))
        return T.relu(_conv_bias(y, self.w2, self.b2, padding=1))


class DecoderParams:
    def __init__(self, stages, head_weight, head_bias):
        self.stages = stages
        self.head_weight, self.head_bias = head_weight, head_bias

    @classmethod
    def create(cls, embed_dim, rng):
        c = embed_dim
        # concat(deepest, deepest) in; then up+skip at 1/8 and 1/4; plain at 1/2
        widths = [(16 * c, 4 * c), (8 * c, 2 * c), (4 * c, c), (c, c)]
        stages = [DecoderStageParams.create(ci, co, rng) for ci, co in widths]
        hw, hb = _conv_param(rng, 1, c, 1)
        return cls(stages, hw, hb)

    def named(self, prefix):
        for i, st in enumerate(self.stages):
            yield from st.named(f"{prefix}.stage{i}")
        yield f"{prefix}.head.weight", self.head_weight
        yield f"{prefix}.head.bias", self.head_bias


class ModelParams:
    """Every learnable tensor of the network, addressable by name."""

    def __init__(self, config, patch_embed, stages, ffm, decoder):
        self.config = config
        self.patch_embed = patch_embed
        self.stages = stages
        self.ffm = ffm
        self.decoder = decoder

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        plans = stage_plan(config)
        pe = PatchEmbedParams.create(config.in_channels, config.embed_dim, rng)
        stages = [StageParams.create(p, merge=(i < N_STAGES - 1), rng=rng)
                  for i, p in enumerate(plans)]
        ffm = None
        if config.use_ffm:
            ffm = [FfmGateParams.create(plans[i - 1].channels, plans[i].channels,
                                        config.ffm_reduction, rng)
                   for i in range(1, N_STAGES)]
        dec = DecoderParams.create(config.embed_dim, rng)
        return cls(config, pe, stages, ffm, dec)

    def named_parameters(self) -> Iterator[tuple]:
        yield from self.patch_embed.named("patch_embed")
        for i, st in enumerate(self.stages):
            yield from st.named(f"encoder.stage{i}")
        if self.ffm is not None:
            for i, gate in enumerate(self.ffm, start=1):
                yield from gate.named(f"ffm.gate{i}")
        yield from self.decoder.named("decoder")

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grads(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def state_dict(self) -> dict:
        return {name: t.numpy() for name, t in self.named_parameters()}

    def load_state(self, state: dict) -> None:
        """Copy arrays into the model; names and shapes must match exactly."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unknown = sorted(set(state) - set(own))
        if missing or unknown:
            raise ConfigError(
                f"checkpoint does not match the model: missing={missing[:4]} "
                f"unknown={unknown[:4]}")
        for name, t in own.items():
            arr = state[name]
            if tuple(arr.shape) != t.shape:
                raise ConfigError(
                    f"parameter {name}: checkpoint shape {tuple(arr.shape)} "
                    f"!= model shape {t.shape}")
            t.data[...] = arr.astype(t.data.dtype)


def _conv_bias(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
               padding: int = 0) -> Tensor:
    out = T.conv2d(x, w, stride=stride, padding=padding)
    return T.add(out, T.reshape(b, (b.shape[0], 1, 1)))


def _to_tokens(x: Tensor) -> Tensor:
    # (B, C, H, W) -> (B, H, W, C)
    return T.transpose(x, (0, 2, 3, 1))


def _to_chw(x: Tensor) -> Tensor:
    # (B, H, W, C) -> (B, C, H, W)
    return T.transpose(x, (0, 3, 1, 2))


def patch_embed(x: Tensor, params: PatchEmbedParams) -> Tensor:
    """Project 2x2 pixel patches to tokens: (B,C,H,W) -> (B,H/2,W/2,embed)."""
    h, w = x.shape[-2], x.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"patch embedding needs even extents, got {h}x{w}")
    y = _conv_bias(x, params.weight, params.bias, stride=2)
    return params.norm(_to_tokens(y))


def patch_merge(x: Tensor, weight: Tensor) -> Tensor:
    """Concatenate each 2x2 token neighbourhood, project 4C -> 2C.

    Neighbourhood order is row-major: (0,0), (0,1), (1,0), (1,1).
    """
    h, w = x.shape[-3], x.shape[-2]
    if h % 2 or w % 2:
        raise ShapeError(f"patch merging needs even extents, got {h}x{w}")
    quads = [x[..., 0::2, 0::2, :], x[..., 0::2, 1::2, :],
             x[..., 1::2, 0::2, :], x[..., 1::2, 1::2, :]]
    return T.concat(quads, axis=-1) @ weight


def encode(x: Tensor, params: ModelParams) -> List[Tensor]:
    """Run the four encoder stages; returns one (H,W,C) map per stage.

    ``x`` is (C,H,W) or batched (B,C,H,W); batched input yields (B,H,W,C)
    pyramid entries.
    """
    batched = x.ndim == 4
    if not batched:
        x = T.reshape(x, (1,) + x.shape)
    plans = stage_plan(params.config)
    tokens = patch_embed(x, params.patch_embed)
    pyramid = []
    for plan, stage in zip(plans, params.stages):
        grid = plan.grid
        for blk in stage.blocks:
            tokens = swin_block(tokens, blk, grid)
        pyramid.append(tokens)
        if stage.merge_weight is not None:
            tokens = patch_merge(tokens, stage.merge_weight)
    if not batched:
        pyramid = [T.reshape(p, p.shape[1:]) for p in pyramid]
    return pyramid


def ffm_fuse(pyramid: List[Tensor], params: ModelParams) -> List[Tensor]:
    """Scale stage i by a sigmoid gate computed from pooled stage i-1."""
    if params.ffm is None:
        raise ConfigError("model was built without the fusion module")
    fused = [pyramid[0]]
    for i in range(1, N_STAGES):
        prev = pyramid[i - 1]
        pooled = T.tmean(prev, axis=(-3, -2))       # (B, C) or (C,)
        if pooled.ndim == 1:
            pooled = T.reshape(pooled, (1, pooled.shape[0]))
        gate = params.ffm[i - 1](pooled)            # (B, C_i) in (0, 1)
        if pyramid[i].ndim == 4:
            gate = T.reshape(gate, (gate.shape[0], 1, 1, gate.shape[-1]))
        else:
            gate = T.reshape(gate, (1, 1, gate.shape[-1]))
        fused.append(T.mul(pyramid[i], gate))
    return fused


def decode(pyramid: List[Tensor], params: ModelParams) -> Tensor:
    """Assemble the depth map: deepest feature in, full-resolution map out."""
    batched = pyramid[0].ndim == 4
    if not batched:
        pyramid = [T.reshape(p, (1,) + p.shape) for p in pyramid]
    skips = [pyramid[3], pyramid[2], pyramid[1]]  # matching-resolution features
    x = _to_chw(pyramid[3])
    for i, stage in enumerate(params.decoder.stages):
        if i < len(skips):
            skip = _to_chw(skips[i])
            if skip.shape[-2:] != x.shape[-2:]:
                raise ShapeError(
                    f"decoder stage {i}: skip extents {skip.shape} do not match "
                    f"incoming {x.shape}")
            x = T.concat([x, skip], axis=-3)
        x = stage(x)
        x = T.upsample2x(x, mode="bilinear")
    x = _conv_bias(x, params.decoder.head_weight, params.decoder.head_bias)
    depth = T.reshape(x, (x.shape[0],) + x.shape[-2:])  # drop the single channel
    if not batched:
        depth = T.reshape(depth, depth.shape[1:])
    return depth


def forward(x: Tensor, params: ModelParams) -> Tensor:
    """Full network: (C_in,H,W) -> (H,W) metres, or batched with a lead axis."""
    cfg = params.config
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ConfigError(f"input must be (C,H,W) or (B,C,H,W), got {x.shape}")
    if x.shape[-3] != cfg.in_channels or x.shape[-2:] != (cfg.height, cfg.width):
        raise ConfigError(
            f"input shape {x.shape} does not match modality {cfg.modality!r} "
            f"at {cfg.width}x{cfg.height}")
    if not batched:
        x = T.reshape(x, (1,) + x.shape)
    pyramid = encode(x, params)
    if cfg.use_ffm:
        pyramid = ffm_fuse(pyramid, params)
    depth = T.scale(decode(pyramid, params), cfg.max_depth)
    if not batched:
        depth = T.reshape(depth, depth.shape[1:])
    return depth


def predict_depth(sample, params: ModelParams) -> np.ndarray:
    """Run inference on one RGB-D sample; returns (H, W) metres as float32."""
    x = prepare_input(sample.rgb, sample.raw_depth, params.config)
    return forward(Tensor(x), params).numpy()


def prepare_input(rgb: np.ndarray, raw_depth: np.ndarray,
                  config: ModelConfig) -> np.ndarray:
    """Assemble the network input planes for the configured modality.

    RGB bytes scale to [0,1]; depth divides by ``max_depth`` with missing
    pixels staying 0.  Returns (C_in, H, W) float32.
    """
    if rgb.shape[:2] != raw_depth.shape:
        raise ShapeError(f"rgb {rgb.shape} and depth {raw_depth.shape} disagree")
    planes = []
    if config.modality in ("rgbd", "rgb"):
        planes.extend(np.transpose(rgb.astype(np.float32) / 255.0, (2, 0, 1)))
    if config.modality in ("rgbd", "depth"):
        planes.append(raw_depth.astype(np.float32) / config.max_depth)
    return np.stack(planes, axis=0)
