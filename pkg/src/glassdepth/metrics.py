"""Masked depth-error metrics: RMSE, REL, MAE and ratio thresholds."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, ShapeError

DELTA_THRESHOLDS = (1.05, 1.10, 1.25)


@dataclass(frozen=True)
class MetricReport:
    rmse: float          # metres
    rel: float           # dimensionless
    mae: float           # metres
    delta_105: float     # percent of pixels with ratio < 1.05
    delta_110: float
    delta_125: float
    pixel_count: int

    def __post_init__(self):
        if not (self.delta_105 <= self.delta_110 + 1e-12
                and self.delta_110 <= self.delta_125 + 1e-12):
            raise ContractError("delta percentages must be monotone")


def evaluate(pred: np.ndarray, gt: np.ndarray,
             mask: Optional[np.ndarray] = None) -> MetricReport:
    """Compare depth maps over the masked pixels (all pixels when mask is None).

    Ground truth must be strictly positive wherever evaluated; the ratio
    thresholds treat non-positive predictions as failing.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} disagree")
    if mask is None:
        sel = np.ones(pred.shape, dtype=bool)
    else:
        mask = np.asarray(mask)
        if mask.shape != pred.shape:
            raise ShapeError(f"mask {mask.shape} does not match maps {pred.shape}")
        sel = mask.astype(bool)
    if not sel.any():
        raise ContractError("evaluation mask selects no pixels")
    d, dstar = pred[sel], gt[sel]
    if (dstar <= 0).any():
        raise ContractError("ground truth must be positive on evaluated pixels")

    err = d - dstar
    ratio = np.where(d > 0, np.maximum(d / dstar, dstar / d), np.inf)
    deltas = [100.0 * float((ratio < t).mean()) for t in DELTA_THRESHOLDS]
    return MetricReport(
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rel=float(np.mean(np.abs(err) / dstar)),
        mae=float(np.mean(np.abs(err))),
        delta_105=deltas[0], delta_110=deltas[1], delta_125=deltas[2],
        pixel_count=int(sel.sum()),
    )


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    """Pixel-count-weighted recombination; equals evaluating all pixels at once."""
    reports = list(reports)
    if not reports:
        raise ContractError("cannot aggregate an empty report list")
    n = np.array([r.pixel_count for r in reports], dtype=np.float64)
    total = n.sum()

    def wmean(values):
        return float(np.dot(n, values) / total)

    return MetricReport(
        rmse=float(np.sqrt(wmean([r.rmse ** 2 for r in reports]))),
        rel=wmean([r.rel for r in reports]),
        mae=wmean([r.mae for r in reports]),
        delta_105=wmean([r.delta_105 for r in reports]),
        delta_110=wmean([r.delta_110 for r in reports]),
        delta_125=wmean([r.delta_125 for r in reports]),
        pixel_count=int(total),
    )


def report_lines(report: MetricReport, prefix: str = "") -> List[str]:
    """Machine-readable ``name=value`` lines, one per metric."""
    out = []
    for f in fields(MetricReport):
        value = getattr(report, f.name)
        text = str(value) if f.name == "pixel_count" else f"{value:.9g}"
        out.append(f"{prefix}{f.name}={text}")
    return out


def format_table(rows: Sequence[Tuple[str, MetricReport]]) -> str:
    """Plain-text metric table with one row per labelled report."""
    header = f"{'sample':<16}{'RMSE':>9}{'REL':>9}{'MAE':>9}" \
             f"{'d1.05':>8}{'d1.10':>8}{'d1.25':>8}{'pixels':>9}"
    lines = [header, "-" * len(header)]
    for label, r in rows:
        lines.append(
            f"{label:<16}{r.rmse:>9.4f}{r.rel:>9.4f}{r.mae:>9.4f}"
            f"{r.delta_105:>8.2f}{r.delta_110:>8.2f}{r.delta_125:>8.2f}"
            f"{r.pixel_count:>9d}")
    return "\n".join(lines)
