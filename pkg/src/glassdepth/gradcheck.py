"""Finite-difference verification of backward rules.

The analytic path under test is the tape's reverse sweep; the reference is
a central-difference quotient of the same forward function evaluated in
float64.  The two paths share no code beyond the forward op itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T

__all__ = ["GradCheckResult", "gradcheck", "gradcheck_params"]


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_input: int
    worst_coord: tuple
    n_coords: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < 1e-3

    def __str__(self) -> str:
        return (f"max rel err {self.max_rel_err:.3e} over {self.n_coords} coords "
                f"(worst: input {self.worst_input} at {self.worst_coord})")


def _rel_err(a: float, fd: float) -> float:
    denom = max(abs(a), abs(fd), 1e-6)
    return abs(a - fd) / denom


def gradcheck(fn: Callable[..., "T.Tensor"],
              inputs: Sequence[np.ndarray],
              wrt: Optional[Sequence[int]] = None,
              h: float = 1e-4,
              seed: int = 0,
              max_coords_per_input: Optional[int] = None) -> GradCheckResult:
    """Compare tape gradients of ``sum(fn(*inputs) * R)`` with central differences.

    ``inputs`` are converted to float64; ``wrt`` selects which inputs get
    gradients (default: all).  ``max_coords_per_input`` caps how many
    coordinates are probed per input (random subset, seeded); None probes all.
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    if wrt is None:
        wrt = list(range(len(arrays)))
    rng = np.random.default_rng(seed)

    def run(arrs):
        tensors = [T.Tensor(a, requires_grad=(i in wrt), dtype=np.float64)
                   for i, a in enumerate(arrs)]
        out = fn(*tensors)
        return tensors, out

    tensors, out = run(arrays)
    proj = rng.standard_normal(out.shape)

    with T.Tape() as tape:
        tensors, out = run(arrays)
        loss = T.tsum(T.mul(out, T.Tensor(proj, dtype=np.float64)))
    tape.backward(loss)
    analytic = [tensors[i].grad for i in wrt]

    def loss_at(arrs) -> float:
        _, o = run(arrs)
        return float((o.data * proj).sum())

    worst = 0.0
    worst_input = -1
    worst_coord = ()
    n_coords = 0
    for slot, i in enumerate(wrt):
        flat_n = arrays[i].size
        coords = np.arange(flat_n)
        if max_coords_per_input is not None and flat_n > max_coords_per_input:
            coords = rng.choice(flat_n, size=max_coords_per_input, replace=False)
        base = arrays[i]
        for c in coords:
            idx = np.unravel_index(c, base.shape)
            a = float(analytic[slot][idx])
            err = _probe_coordinate(
                lambda: loss_at(arrays), base, idx, a, h)
            n_coords += 1
            if err > worst:
                worst, worst_input, worst_coord = err, i, idx
    return GradCheckResult(worst, worst_input, worst_coord, n_coords)


def _probe_coordinate(loss_fn: Callable[[], float], base: np.ndarray, idx,
                      analytic: float, h: float) -> float:
    """Central difference at idx, refining the step when it straddles a kink.

    Piecewise-smooth networks (ReLU) make a single step size unreliable: a
    step crossing a kink yields a one-sided slope.  A genuinely wrong
    gradient stays wrong at every step size, so the best error over a short
    refinement ladder is reported.
    """
    best = np.inf
    for step in (h, h / 4.0, h / 16.0):
        saved = base[idx]
        base[idx] = saved + step
        lp = loss_fn()
        base[idx] = saved - step
        lm = loss_fn()
        base[idx] = saved
        fd = (lp - lm) / (2.0 * step)
        best = min(best, _rel_err(analytic, fd))
        if best < 1e-3:
            break
    return best


def gradcheck_params(loss_fn: Callable[[], "T.Tensor"],
                     leaves: dict,
                     h: float = 1e-4,
                     seed: int = 0,
                     max_coords_per_leaf: Optional[int] = None) -> GradCheckResult:
    """Finite-difference check against live leaf tensors.

    ``loss_fn`` rebuilds a scalar loss from the current contents of the
    ``leaves`` (name -> float64 Tensor with requires_grad).  The leaves are
    perturbed in place for the difference quotients, so the same function
    body serves both paths.
    """
    names = list(leaves)
    rng = np.random.default_rng(seed)
    for t in leaves.values():
        if t.dtype != np.float64:
            raise TypeError("gradcheck_params requires float64 leaves")
        t.zero_grad()

    with T.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {n: leaves[n].grad.copy() for n in names}

    worst = 0.0
    worst_slot = -1
    worst_coord = ()
    n_coords = 0
    for slot, name in enumerate(names):
        base = leaves[name].data
        coords = np.arange(base.size)
        if max_coords_per_leaf is not None and base.size > max_coords_per_leaf:
            coords = rng.choice(base.size, size=max_coords_per_leaf, replace=False)
        for c in coords:
            idx = np.unravel_index(c, base.shape)
            err = _probe_coordinate(
                lambda: loss_fn().item(), base, idx,
                float(analytic[name][idx]), h)
            n_coords += 1
            if err > worst:
                worst, worst_slot, worst_coord = err, slot, idx
    return GradCheckResult(worst, worst_slot, worst_coord, n_coords)
