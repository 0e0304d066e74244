"""Optimizer, schedule, training loop and checkpoint serialization.

Training is deterministic for a fixed seed: samples are put in a canonical
content-hash order before the seeded per-epoch shuffle, so the result does
not depend on how the caller happened to order the dataset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import RgbdSample, augment
from .errors import ConfigError, ContractError, FormatError
from .loss import LossConfig, final_loss
from .model import ModelConfig, ModelParams, forward, prepare_input
from .tensor import Tape, Tensor

CHECKPOINT_MAGIC = b"TODE"
CHECKPOINT_VERSION = 1
DTYPE_F32 = 0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.05
    epochs: int = 40
    lr_milestones: Tuple[int, ...] = (15, 30)
    lr_gamma: float = 0.1
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.lr <= 0:
            raise ConfigError("batch size, epochs and lr must be positive")
        if self.weight_decay < 0 or self.lr_gamma <= 0:
            raise ConfigError("weight decay must be >= 0 and lr gamma > 0")
        if list(self.lr_milestones) != sorted(set(self.lr_milestones)):
            raise ConfigError("lr milestones must be strictly increasing")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Multi-step schedule: base lr decayed at each passed milestone."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    passed = sum(1 for m in cfg.lr_milestones if m <= epoch)
    return cfg.lr * (cfg.lr_gamma ** passed)


class AdamW:
    """Adam with decoupled weight decay (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, named_params: Sequence[Tuple[str, Tensor]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self, lr: float, weight_decay: float = 0.0) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif g.shape != p.data.shape:
                raise ContractError(
                    f"{name}: gradient shape {g.shape} != parameter {p.data.shape}")
            if weight_decay:
                p.data -= lr * weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()


@dataclass(frozen=True)
class HistoryRow:
    step: int
    epoch: int
    loss: float


def history_to_csv(history: Sequence[HistoryRow]) -> str:
    lines = ["step,epoch,loss"]
    lines += [f"{r.step},{r.epoch},{r.loss!r}" for r in history]
    return "\n".join(lines) + "\n"


def _batch_loss(batch: List[RgbdSample], params: ModelParams,
                loss_cfg: LossConfig) -> Tensor:
    cfg = params.config
    xs = np.stack([prepare_input(s.rgb, s.raw_depth, cfg) for s in batch])
    preds = forward(Tensor(xs), params)
    total = None
    for b, sample in enumerate(batch):
        one = final_loss(preds[b], Tensor(sample.gt_depth), sample.mask, loss_cfg)
        total = one if total is None else T.add(total, one)
    return T.scale(total, 1.0 / len(batch))


def train(dataset: Sequence[RgbdSample],
          model_cfg: ModelConfig,
          train_cfg: TrainConfig,
          loss_cfg: LossConfig = LossConfig(),
          params: Optional[ModelParams] = None,
          max_steps: Optional[int] = None,
          on_step: Optional[Callable[[int, int, float, ModelParams], bool]] = None,
          ) -> Tuple[ModelParams, List[HistoryRow]]:
    """Seeded mini-batch training; returns the parameters and per-step losses.

    ``on_step(step, epoch, loss, params)`` may return True to stop early;
    ``max_steps`` caps the total number of optimizer steps.
    """
    samples = sorted(dataset, key=lambda s: s.digest())
    if not samples:
        raise ContractError("dataset is empty")
    for s in samples:
        if (s.height, s.width) != (model_cfg.height, model_cfg.width):
            raise ConfigError(
                f"sample extents {s.width}x{s.height} do not match the model "
                f"({model_cfg.width}x{model_cfg.height})")
    if params is None:
        params = ModelParams.create(model_cfg, seed=train_cfg.seed)

    shuffle_ss, augment_ss = np.random.SeedSequence(train_cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    augment_rng = np.random.default_rng(augment_ss)

    opt = AdamW(list(params.named_parameters()))
    history: List[HistoryRow] = []
    step = 0
    for epoch in range(train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        order = shuffle_rng.permutation(len(samples))
        for start in range(0, len(samples), train_cfg.batch_size):
            batch = [samples[i] for i in order[start:start + train_cfg.batch_size]]
            if train_cfg.augment:
                batch = [augment(s, augment_rng) for s in batch]
            opt.zero_grad()
            with Tape() as tape:
                loss = _batch_loss(batch, params, loss_cfg)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise ContractError(
                    f"non-finite loss {loss_value} at step {step} (epoch {epoch})")
            tape.backward(loss)
            opt.step(lr, train_cfg.weight_decay)
            step += 1
            history.append(HistoryRow(step=step, epoch=epoch, loss=loss_value))
            if on_step is not None and on_step(step, epoch, loss_value, params):
                return params, history
            if max_steps is not None and step >= max_steps:
                return params, history
    return params, history


# ---------------------------------------------------------------------------
# checkpoint format: magic "TODE", u32 version, u32 tensor count, then per
# tensor: u16 name length, utf-8 name, u8 dtype code (0 = f32), u8 rank,
# u32 extents, raw little-endian payload.

def save_checkpoint(state, path) -> None:
    if isinstance(state, ModelParams):
        state = state.state_dict()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(state)))
        for name, arr in state.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exactly(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered name -> float32 array mapping."""
    with open(path, "rb") as f:
        magic = _read_exactly(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", _read_exactly(f, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        state: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exactly(f, 2, "name length"))
            name = _read_exactly(f, name_len, "name").decode("utf-8")
            dtype_code, rank = struct.unpack("<BB", _read_exactly(f, 2, "tensor header"))
            if dtype_code != DTYPE_F32:
                raise FormatError(f"{name}: unknown dtype code {dtype_code}")
            shape = struct.unpack(f"<{rank}I", _read_exactly(f, 4 * rank, "extents"))
            n_bytes = 4 * int(np.prod(shape, dtype=np.int64)) if rank else 4
            payload = _read_exactly(f, n_bytes, f"payload of {name}")
            state[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        trailing = f.read(1)
        if trailing:
            raise FormatError("checkpoint has trailing bytes after last tensor")
    return state
