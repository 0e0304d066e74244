"""Embedded self-verification: gradient checks, invariants, format round trips.

Every check returns quickly and is independent of the test suite, so a
deployed build can prove its own numerics (``glassdepth check``).  The
fault-injection mode flips the sign of one backward rule to demonstrate
that the gradient checks actually bite.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List

import numpy as np

from . import tensor as T
from .attention import (AttentionParams, BlockParams, WindowGrid, attention_mask,
                        multi_head_attention, relative_position_index, swin_block)
from .data import SynthConfig, generate_scene, load_sample, write_sample
from .geometry import depth_to_pointcloud, pointcloud_to_depth, read_ply, write_ply
from .gradcheck import gradcheck, gradcheck_params
from .loss import LossConfig, depth_loss, final_loss
from .metrics import aggregate, evaluate
from .model import ModelConfig, ModelParams, forward
from .tensor import Tensor
from .train import load_checkpoint, save_checkpoint


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _op_gradients() -> str:
    rng = np.random.default_rng(0)
    cases = [
        ("matmul", T.matmul,
         [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))]),
        ("conv2d", lambda x, k: T.conv2d(x, k, stride=2, padding=1),
         [rng.standard_normal((2, 5, 5)), rng.standard_normal((3, 2, 3, 3))]),
        ("layer_norm", lambda x, g, b: T.layer_norm(x, g, b, 1e-5),
         [rng.standard_normal((3, 6)), rng.standard_normal(6),
          rng.standard_normal(6)]),
        ("softmax", T.softmax, [rng.standard_normal((3, 5))]),
        ("global_avg_pool", T.global_avg_pool, [rng.standard_normal((2, 3, 4))]),
        ("upsample_nearest", lambda x: T.upsample2x(x, "nearest"),
         [rng.standard_normal((2, 3, 4))]),
        ("upsample_bilinear", lambda x: T.upsample2x(x, "bilinear"),
         [rng.standard_normal((2, 3, 4))]),
        ("relu", T.relu, [rng.standard_normal((3, 4)) + 0.2]),
        ("gelu", T.gelu, [rng.standard_normal((3, 4))]),
        ("sigmoid", T.sigmoid, [rng.standard_normal((3, 4))]),
        ("mul", T.mul, [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))]),
        ("take_rows", lambda t: T.take_rows(t, np.array([0, 2, 2, 1])),
         [rng.standard_normal((4, 3))]),
    ]
    worst = ("", 0.0)
    for name, fn, inputs in cases:
        res = gradcheck(fn, inputs, seed=1)
        if not res.ok:
            raise AssertionError(f"{name}: {res}")
        if res.max_rel_err > worst[1]:
            worst = (name, res.max_rel_err)
    return f"{len(cases)} ops, worst {worst[0]} rel err {worst[1]:.2e}"


def _loss_gradient() -> str:
    rng = np.random.default_rng(2)
    gt = rng.uniform(0.5, 3.0, (8, 8))
    mask = (rng.random((8, 8)) < 0.5).astype(float)
    mask[0, 0] = 1
    res = gradcheck(
        lambda p: final_loss(p, Tensor(gt, dtype=np.float64), mask, LossConfig()),
        [gt + 0.1 * rng.standard_normal((8, 8))], seed=3)
    if not res.ok:
        raise AssertionError(str(res))
    return f"rel err {res.max_rel_err:.2e}"


def _end_to_end_gradient() -> str:
    cfg = ModelConfig(embed_dim=8, stage_depths=(1, 1, 0, 0), heads=(2, 4, 8, 16),
                      window=5, height=32, width=32)
    params = ModelParams.create(cfg, seed=4)
    for _, t in params.named_parameters():
        t.data = t.data.astype(np.float64)
    x = Tensor(np.random.default_rng(5).random((4, 32, 32)), dtype=np.float64)
    proj = Tensor(np.random.default_rng(6).standard_normal((32, 32)),
                  dtype=np.float64)
    named = dict(params.named_parameters())
    picks = {n: named[n] for n in
             ["patch_embed.conv.weight", "encoder.stage0.block0.attn2.w_q",
              "encoder.stage1.block0.mlp1.fc1.weight", "ffm.gate1.fc2.weight",
              "decoder.stage2.conv2.weight", "decoder.head.weight"]}
    res = gradcheck_params(
        lambda: T.tsum(T.mul(forward(x, params), proj)),
        picks, h=1e-5, seed=7, max_coords_per_leaf=3)
    if not res.ok:
        raise AssertionError(str(res))
    return f"6 parameter groups, rel err {res.max_rel_err:.2e}"


def _naive_global_attention(tokens, p: AttentionParams):
    # per-scalar reference, no shared code with the fast path
    n, t, c = tokens.shape
    dh = c // p.heads
    rel = relative_position_index(p.window)
    out = np.zeros_like(tokens)
    for wi in range(n):
        q = tokens[wi] @ p.w_q.numpy()
        k = tokens[wi] @ p.w_k.numpy()
        v = tokens[wi] @ p.w_v.numpy()
        merged = np.zeros((t, c))
        for hd in range(p.heads):
            sl = slice(hd * dh, (hd + 1) * dh)
            logits = q[:, sl] @ k[:, sl].T / np.sqrt(dh) \
                + p.bias_table.numpy()[rel, hd]
            e = np.exp(logits - logits.max(axis=1, keepdims=True))
            merged[:, sl] = (e / e.sum(axis=1, keepdims=True)) @ v[:, sl]
        out[wi] = merged @ p.w_out.numpy()
    return out


def _attention_invariants() -> str:
    rng = np.random.default_rng(8)
    p = AttentionParams.create(8, 2, 2, rng)
    grid = WindowGrid(4, 6, 2, 1)
    x = rng.standard_normal((6, 4, 8)).astype(np.float32)  # (nWin, T, C)
    mask = attention_mask(grid)
    cap = {}
    multi_head_attention(Tensor(x), p, mask=mask, capture=cap)
    probs = cap["probs"]
    row_err = np.abs(probs.sum(axis=-1) - 1.0).max()
    if row_err > 1e-6:
        raise AssertionError(f"attention rows sum to 1 +- {row_err:.2e}")
    cross = probs[np.broadcast_to((mask < 0)[:, None], probs.shape)].sum()
    if cross > 1e-6:
        raise AssertionError(f"cross-region attention mass {cross:.2e}")

    pg = AttentionParams.create(8, 2, 3, rng)
    whole = rng.standard_normal((1, 9, 8)).astype(np.float32)
    fast = multi_head_attention(Tensor(whole), pg).numpy()
    slow = _naive_global_attention(whole.astype(np.float64), pg)
    gap = np.abs(fast - slow).max()
    if gap > 1e-5:
        raise AssertionError(f"windowed vs global attention gap {gap:.2e}")
    return f"rows 1+-{row_err:.1e}, cross mass {cross:.1e}, global gap {gap:.1e}"


def _swin_residual_identity() -> str:
    bp = BlockParams.create(8, 2, 2, np.random.default_rng(9))
    for name, t in bp.named("b"):
        if "gamma" not in name:
            t.data[:] = 0
    x = np.random.default_rng(10).standard_normal((4, 4, 8)).astype(np.float32)
    out = swin_block(Tensor(x), bp, WindowGrid(4, 4, 2, 1)).numpy()
    gap = np.abs(out - x).max()
    if gap > 1e-6:
        raise AssertionError(f"zero-weight block moved the input by {gap:.2e}")
    return f"pure residual gap {gap:.1e}"


def _loss_cases() -> str:
    rng = np.random.default_rng(11)
    gt = rng.uniform(0.5, 3.0, (8, 8))
    zero = depth_loss(Tensor(gt, dtype=np.float64),
                      Tensor(gt, dtype=np.float64)).item()
    if abs(zero) > 1e-7:
        raise AssertionError(f"perfect prediction loss {zero:.2e}")
    off = depth_loss(Tensor(gt + 0.1, dtype=np.float64),
                     Tensor(gt, dtype=np.float64)).item()
    if abs(off - 0.01) > 1e-6:
        raise AssertionError(f"offset loss {off} != 0.01")
    return f"zero case {zero:.1e}, offset error {abs(off - 0.01):.1e}"


def _metric_oracle() -> str:
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(20):
        gt = rng.uniform(0.3, 4.0, (16, 16))
        pred = gt * rng.uniform(0.7, 1.3, (16, 16))
        r = evaluate(pred, gt)
        # scalar re-derivation
        err = pred - gt
        ratio = np.maximum(pred / gt, gt / pred)
        checks = [
            (r.rmse, float(np.sqrt((err ** 2).mean()))),
            (r.rel, float((np.abs(err) / gt).mean())),
            (r.mae, float(np.abs(err).mean())),
            (r.delta_105, 100.0 * float((ratio < 1.05).mean())),
            (r.delta_110, 100.0 * float((ratio < 1.10).mean())),
            (r.delta_125, 100.0 * float((ratio < 1.25).mean())),
        ]
        worst = max(worst, max(abs(a - b) for a, b in checks))
        if not r.delta_105 <= r.delta_110 <= r.delta_125:
            raise AssertionError("delta thresholds are not monotone")
        halves = aggregate([evaluate(pred[:8], gt[:8]), evaluate(pred[8:], gt[8:])])
        worst = max(worst, abs(halves.rmse - r.rmse))
    if worst > 1e-9:
        raise AssertionError(f"metric oracle gap {worst:.2e}")
    return f"20 trials, worst gap {worst:.1e}"


def _geometry_roundtrip() -> str:
    rng = np.random.default_rng(13)
    worst = 0.0
    for seed in range(5):
        r = np.random.default_rng(seed)
        from .data import CameraIntrinsics
        intr = CameraIntrinsics(fx=r.uniform(20, 90), fy=r.uniform(20, 90),
                                cx=r.uniform(8, 24), cy=r.uniform(6, 18))
        depth = r.uniform(0.3, 5.0, (24, 32)).astype(np.float32)
        depth[r.random((24, 32)) < 0.3] = 0.0
        pc = depth_to_pointcloud(depth, np.zeros((24, 32, 3), np.uint8), intr)
        back = pointcloud_to_depth(pc, intr, (24, 32))
        hit = depth > 0
        worst = max(worst, float(np.abs(back[hit] - depth[hit]).max()))
    if worst >= 1e-5:
        raise AssertionError(f"depth round-trip error {worst:.2e} m")
    return f"max round-trip error {worst:.1e} m"


def _format_roundtrips() -> str:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = ModelConfig(embed_dim=8, stage_depths=(1, 0, 0, 0),
                          heads=(2, 4, 8, 16), height=32, width=32)
        params = ModelParams.create(cfg, seed=14)
        save_checkpoint(params, tmp / "m.ckpt")
        state = load_checkpoint(tmp / "m.ckpt")
        for name, t in params.named_parameters():
            if not np.array_equal(state[name], t.numpy()):
                raise AssertionError(f"checkpoint round trip altered {name}")

        sample = generate_scene(SynthConfig(height=32, width=32, seed=15))
        write_sample(sample, tmp / "s")
        back = load_sample(tmp / "s")
        mm = np.round(sample.gt_depth.astype(np.float64) * 1000) / 1000
        if not np.allclose(back.gt_depth, mm, atol=1e-9):
            raise AssertionError("dataset depth round trip exceeded quantization")

        pc = depth_to_pointcloud(sample.gt_depth, sample.rgb, sample.intrinsics)
        write_ply(pc, tmp / "c.ply")
        reread = read_ply(tmp / "c.ply")
        if len(reread) != len(pc) or not np.array_equal(reread.points, pc.points):
            raise AssertionError("PLY re-parse mismatch")
    return "checkpoint bitwise, dataset at mm quantization, PLY bitwise"


CHECKS: List[tuple] = [
    ("op_gradients", _op_gradients),
    ("loss_gradient", _loss_gradient),
    ("end_to_end_gradient", _end_to_end_gradient),
    ("attention_invariants", _attention_invariants),
    ("swin_residual_identity", _swin_residual_identity),
    ("loss_cases", _loss_cases),
    ("metric_oracle", _metric_oracle),
    ("geometry_roundtrip", _geometry_roundtrip),
    ("format_roundtrips", _format_roundtrips),
]


def run_checks(inject_fault: bool = False) -> List[CheckResult]:
    """Run every embedded check; fault injection breaks one backward rule."""
    results = []
    T._FAULT_INJECT = bool(inject_fault)
    try:
        for name, fn in CHECKS:
            t0 = time.perf_counter()
            try:
                detail = fn()
                ok = True
            except AssertionError as exc:
                detail, ok = str(exc), False
            results.append(CheckResult(name, ok, detail,
                                       time.perf_counter() - t0))
    finally:
        T._FAULT_INJECT = False
    return results
