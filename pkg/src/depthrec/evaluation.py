"""Depth-completion metrics and analysis artifacts.

Errors are reported in millimeters (rmse/mae) and inverse kilometers
(irmse/imae), the conventional units of the benchmark leaderboards.
Analysis artifacts: per-block error-difference maps rendered through the
Turbo colormap, and per-frame RMSE curves as CSV.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .geometry import DepthMap


def _turbo_table():
    # deferred: matplotlib startup is slow and only rendering needs it
    from matplotlib import colormaps

    return colormaps["turbo"]


@dataclass(frozen=True)
class MetricsReport:
    """Four benchmark errors over the valid ground-truth pixels."""

    rmse: float  # mm
    mae: float  # mm
    irmse: float  # 1/km
    imae: float  # 1/km
    valid_count: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "rmse_mm": self.rmse,
            "mae_mm": self.mae,
            "irmse_per_km": self.irmse,
            "imae_per_km": self.imae,
            "valid_count": self.valid_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _error_sums(pred: DepthMap, gt: DepthMap) -> Tuple[float, float, float, float, int]:
    if pred.values.shape != gt.values.shape:
        raise ValueError(
            f"prediction shape {pred.values.shape} != ground truth "
            f"{gt.values.shape}"
        )
    mask = gt.values > 0
    n = int(mask.sum())
    if n == 0:
        raise ValueError("ground truth has no valid pixels")
    p = pred.values[mask]
    g = gt.values[mask]
    if (p <= 0).any():
        raise ValueError(
            "prediction has holes at valid ground-truth pixels; metrics "
            "require a dense prediction"
        )
    diff = p - g
    idiff = 1.0 / p - 1.0 / g
    return (
        float((diff * diff).sum()),
        float(np.abs(diff).sum()),
        float((idiff * idiff).sum()),
        float(np.abs(idiff).sum()),
        n,
    )


def _report_from_sums(se, ae, ise, iae, n) -> MetricsReport:
    return MetricsReport(
        rmse=1000.0 * math.sqrt(se / n),
        mae=1000.0 * ae / n,
        irmse=1000.0 * math.sqrt(ise / n),
        imae=1000.0 * iae / n,
        valid_count=n,
    )


def metrics(pred: DepthMap, gt: DepthMap) -> MetricsReport:
    """Benchmark errors over pixels where gt > 0 (depths in meters)."""
    return _report_from_sums(*_error_sums(pred, gt))


def pooled_metrics(pairs: Iterable[Tuple[DepthMap, DepthMap]]) -> MetricsReport:
    """Metrics pooled over many frames: sums of counts and (squared) errors."""
    se = ae = ise = iae = 0.0
    n = 0
    for pred, gt in pairs:
        d_se, d_ae, d_ise, d_iae, d_n = _error_sums(pred, gt)
        se += d_se
        ae += d_ae
        ise += d_ise
        iae += d_iae
        n += d_n
    if n == 0:
        raise ValueError("no frames to evaluate")
    return _report_from_sums(se, ae, ise, iae, n)


def metrics_table(reports: Mapping[str, MetricsReport]) -> str:
    """Aligned text table, one row per labeled report."""
    header = f"{'name':<20} {'rmse_mm':>10} {'mae_mm':>10} {'irmse_1/km':>11} {'imae_1/km':>10} {'pixels':>9}"
    rows = [header, "-" * len(header)]
    for name, r in reports.items():
        rows.append(
            f"{name:<20} {r.rmse:>10.2f} {r.mae:>10.2f} {r.irmse:>11.3f} "
            f"{r.imae:>10.3f} {r.valid_count:>9d}"
        )
    return "\n".join(rows)


# --------------------------------------------------------------------------
# block error-difference maps


@dataclass(frozen=True)
class BlockDiffMap:
    """Per-block MAE(A) - MAE(B) in mm; empty blocks carry no value."""

    diff: np.ndarray  # (ceil(H/block), ceil(W/block)) float64, mm
    nonempty: np.ndarray  # same shape, bool
    block: int


def _block_mae(err_sum: np.ndarray, counts: np.ndarray) -> np.ndarray:
    out = np.zeros_like(err_sum)
    np.divide(err_sum, counts, out=out, where=counts > 0)
    return out


def _block_reduce_sum(a: np.ndarray, block: int) -> np.ndarray:
    h, w = a.shape
    gh, gw = math.ceil(h / block), math.ceil(w / block)
    padded = np.zeros((gh * block, gw * block))
    padded[:h, :w] = a
    return padded.reshape(gh, block, gw, block).sum(axis=(1, 3))


def block_error_diff(
    pred_a: DepthMap, pred_b: DepthMap, gt: DepthMap, block: int = 8
) -> BlockDiffMap:
    """MAE difference of two predictions per block of valid gt pixels."""
    if not (pred_a.values.shape == pred_b.values.shape == gt.values.shape):
        raise ValueError("prediction and ground-truth shapes differ")
    if block < 1:
        raise ValueError("block size must be >= 1")
    mask = gt.values > 0
    counts = _block_reduce_sum(mask.astype(np.float64), block)
    err_a = _block_reduce_sum(np.where(mask, np.abs(pred_a.values - gt.values), 0.0), block)
    err_b = _block_reduce_sum(np.where(mask, np.abs(pred_b.values - gt.values), 0.0), block)
    nonempty = counts > 0
    diff = 1000.0 * (_block_mae(err_a, counts) - _block_mae(err_b, counts))
    diff[~nonempty] = 0.0
    return BlockDiffMap(diff=diff, nonempty=nonempty, block=block)


def aggregate_block_diffs(maps: Sequence[BlockDiffMap]) -> BlockDiffMap:
    """Average per-block values over the frames where the block is nonempty."""
    if not maps:
        raise ValueError("nothing to aggregate")
    shape = maps[0].diff.shape
    block = maps[0].block
    for m in maps:
        if m.diff.shape != shape or m.block != block:
            raise ValueError("block maps have mismatched geometry")
    total = np.zeros(shape)
    hits = np.zeros(shape)
    for m in maps:
        total[m.nonempty] += m.diff[m.nonempty]
        hits[m.nonempty] += 1.0
    nonempty = hits > 0
    diff = np.zeros(shape)
    np.divide(total, hits, out=diff, where=nonempty)
    return BlockDiffMap(diff=diff, nonempty=nonempty, block=block)


# --------------------------------------------------------------------------
# per-frame curves


def per_frame_rmse(
    runs: Sequence[Sequence[MetricsReport]],
) -> List[Tuple[int, float]]:
    """RMSE by frame position averaged across sequences (frames count from 1).

    Ragged sequences contribute to the positions they cover.
    """
    if not runs:
        raise ValueError("need at least one sequence of reports")
    length = max(len(run) for run in runs)
    curve = []
    for t in range(length):
        vals = [run[t].rmse for run in runs if len(run) > t]
        curve.append((t + 1, float(np.mean(vals))))
    return curve


def rmse_curve_csv(curve: Sequence[Tuple[int, float]]) -> str:
    lines = ["frame,rmse_mm"]
    lines.extend(f"{frame},{value}" for frame, value in curve)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# colormap rendering


def turbo_colormap(x: Union[float, np.ndarray]) -> np.ndarray:
    """Turbo lookup: [0, 1] (clamped) -> RGB bytes; trailing axis is 3."""
    arr = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    rgba = np.asarray(_turbo_table()(arr))
    return np.rint(rgba[..., :3] * 255.0).astype(np.uint8)


def render_diff_png(
    d: BlockDiffMap, path: Union[str, Path], vmax_mm: Optional[float] = None
) -> None:
    """Render a block diff map: 0 at mid-colormap, +-vmax at the ends.

    Empty blocks are drawn black.  Each block expands to block x block
    pixels, so exact-multiple images render at their original size.
    """
    if vmax_mm is None:
        present = np.abs(d.diff[d.nonempty]) if d.nonempty.any() else np.array([])
        vmax_mm = float(present.max()) if present.size else 0.0
    if vmax_mm <= 0:
        vmax_mm = 1.0
    rgb = turbo_colormap(0.5 + d.diff / (2.0 * vmax_mm))
    rgb[~d.nonempty] = 0
    full = np.repeat(np.repeat(rgb, d.block, axis=0), d.block, axis=1)
    Image.fromarray(full, mode="RGB").save(path)
