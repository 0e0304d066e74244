"""Training objective: squared depth error plus a surface-normal penalty.

The normal term compares, per pixel, the cross product of depth-gradient
tangent vectors between prediction and ground truth; both sides use the
same convention, so the cosine is insensitive to the chosen tangent order.
A masked variant weights transparent-region pixels separately from the
full image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

NORMAL_EPS = 1e-8  # keeps the cosine denominator away from zero


@dataclass(frozen=True)
class LossConfig:
    beta_normal: float = 0.01    # weight of the normal-consistency term
    alpha_masked: float = 1.0    # weight of the transparent-region loss
    beta_unmasked: float = 0.1   # weight of the whole-image loss

    def __post_init__(self):
        if min(self.beta_normal, self.alpha_masked, self.beta_unmasked) < 0:
            raise ConfigError("loss weights must be non-negative")


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=like.dtype)


def depth_gradients(d: Tensor):
    """Forward differences along rows and columns; zero at the far border."""
    h, w = d.shape
    if h < 2 or w < 2:
        raise ShapeError(f"need at least a 2x2 map, got {h}x{w}")
    zrow = Tensor(np.zeros((1, w)), dtype=d.dtype)
    zcol = Tensor(np.zeros((h, 1)), dtype=d.dtype)
    gh = T.concat([T.sub(d[1:, :], d[:-1, :]), zrow], axis=0)
    gw = T.concat([T.sub(d[:, 1:], d[:, :-1]), zcol], axis=1)
    return gh, gw


def normal_from_depth(d: Tensor) -> Tensor:
    """Unit surface normals (H, W, 3) from depth tangent vectors.

    The cross product of the row tangent (0, 1, gh) and the column tangent
    (1, 0, gw) gives (gw, gh, -1), which is then L2-normalized.
    """
    gh, gw = depth_gradients(d)
    h, w = d.shape
    nx = T.reshape(gw, (h, w, 1))
    ny = T.reshape(gh, (h, w, 1))
    nz = Tensor(np.full((h, w, 1), -1.0), dtype=d.dtype)
    n = T.concat([nx, ny, nz], axis=2)
    norm = T.sqrt(T.tsum(T.mul(n, n), axis=2, keepdims=True))
    return T.div(n, T.add_scalar(norm, NORMAL_EPS))


def _normal_misalignment(pred: Tensor, gt: Tensor) -> Tensor:
    """(H, W) map of 1 - cos(angle between predicted and true normals)."""
    cos = T.tsum(T.mul(normal_from_depth(pred), normal_from_depth(gt)), axis=2)
    return T.add_scalar(T.scale(cos, -1.0), 1.0)


def depth_loss(pred: Tensor, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean squared depth error plus the weighted mean normal misalignment."""
    gt = _as_tensor(gt, pred)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} disagree")
    diff = T.sub(pred, gt)
    mse = T.tmean(T.mul(diff, diff))
    normal = T.tmean(_normal_misalignment(pred, gt))
    return T.add(mse, T.scale(normal, cfg.beta_normal))


def final_loss(pred: Tensor, gt, mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """Masked-region loss plus a down-weighted whole-image loss.

    ``mask`` is binary (1 = transparent pixel); the masked term averages
    over masked pixels only and requires at least one of them whenever
    ``alpha_masked`` is positive.
    """
    gt = _as_tensor(gt, pred)
    mask_arr = np.asarray(mask)
    if not np.isin(mask_arr, (0, 1)).all():
        raise ContractError("mask must be binary")
    if pred.shape != gt.shape or pred.shape != mask_arr.shape:
        raise ShapeError(
            f"shapes disagree: pred {pred.shape}, gt {gt.shape}, mask {mask_arr.shape}")
    count = float(mask_arr.sum())
    if cfg.alpha_masked > 0 and count == 0:
        raise ContractError("mask selects no pixels but alpha_masked > 0")

    total = T.scale(depth_loss(pred, gt, cfg), cfg.beta_unmasked)
    if cfg.alpha_masked > 0:
        m = Tensor(mask_arr.astype(np.float64), dtype=pred.dtype)
        diff = T.sub(pred, gt)
        masked_mse = T.scale(T.tsum(T.mul(T.mul(diff, diff), m)), 1.0 / count)
        masked_normal = T.scale(T.tsum(T.mul(_normal_misalignment(pred, gt), m)),
                                1.0 / count)
        masked = T.add(masked_mse, T.scale(masked_normal, cfg.beta_normal))
        total = T.add(total, T.scale(masked, cfg.alpha_masked))
    return total
