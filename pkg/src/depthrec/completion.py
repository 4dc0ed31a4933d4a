"""Non-learned temporal depth completion.

Per frame: fuse the sparse lidar input with the warped previous prediction
(weighted by an age-decayed confidence channel), densify by inverse-distance
interpolation, refine by guide-driven neighborhood propagation anchored on
the lidar samples, then warp prediction and confidence forward to the next
frame.  With an empty state the same operators form the non-temporal
baseline, which makes the two modes bit-comparable on frame 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import tomli
from PIL import Image
from scipy.spatial import cKDTree

from .evaluation import MetricsReport, metrics
from .geometry import DepthMap, Intrinsics, RigidTransform, warp_depth
from .kitti_io import SequenceIndex, read_depth_png

FUSE_MODES = ("sparse-overrides", "confidence-blend")


@dataclass(frozen=True)
class PipelineConfig:
    fuse_mode: str = "sparse-overrides"
    fill_radius: int = 8
    iterations: int = 12
    bandwidth: float = 0.1
    decay: float = 0.9

    def __post_init__(self) -> None:
        if self.fuse_mode not in FUSE_MODES:
            raise ValueError(f"fuse_mode must be one of {FUSE_MODES}")
        if self.fill_radius < 1:
            raise ValueError("fill_radius must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: Dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> "PipelineConfig":
        with open(path, "rb") as f:
            return cls.from_dict(tomli.load(f))

    def to_dict(self) -> Dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class TemporalState:
    """Warped previous prediction plus its per-pixel confidence in [0, 1].

    Confidence is zero exactly at the warp holes, so downstream fusion can
    treat the two channels as one optional signal.
    """

    warped_prev: DepthMap
    confidence: np.ndarray

    def __post_init__(self) -> None:
        conf = np.asarray(self.confidence, dtype=np.float64)
        object.__setattr__(self, "confidence", conf)
        if conf.shape != self.warped_prev.values.shape:
            raise ValueError("confidence shape differs from warped depth")
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if not np.array_equal(conf > 0, self.warped_prev.values > 0):
            raise ValueError(
                "confidence must be positive exactly where warped depth is"
            )


def fuse_temporal(
    sparse: DepthMap, state: Optional[TemporalState], cfg: PipelineConfig
) -> Tuple[DepthMap, np.ndarray]:
    """Merge fresh lidar with the carried history; returns (seed, weights).

    Lidar pixels carry weight 1; history pixels carry their confidence.  In
    confidence-blend mode overlapping pixels mix the two values by those
    weights instead of discarding the history.
    """
    if state is None:
        return DepthMap(sparse.values.copy()), (sparse.values > 0).astype(np.float64)
    if state.warped_prev.values.shape != sparse.values.shape:
        raise ValueError("state shape differs from the frame")
    has_sparse = sparse.values > 0
    if cfg.fuse_mode == "sparse-overrides":
        vals = np.where(has_sparse, sparse.values, state.warped_prev.values)
        weights = np.where(has_sparse, 1.0, state.confidence)
    else:
        ws = has_sparse.astype(np.float64)
        denom = ws + state.confidence
        num = ws * sparse.values + state.confidence * state.warped_prev.values
        vals = np.zeros_like(num)
        np.divide(num, denom, out=vals, where=denom > 0)
        weights = np.minimum(denom, 1.0)
    return DepthMap(vals), weights


def spatial_complete(
    seed: DepthMap, weights: np.ndarray, cfg: PipelineConfig
) -> Tuple[DepthMap, np.ndarray]:
    """Fill every hole from its nearest valid pixels; returns dense map+weights.

    Values use confidence-scaled inverse-distance weights (plain inverse
    distance when every donor has zero confidence); the returned weight grid
    is the inverse-distance average of donor confidences, so filled pixels
    inherit a positive confidence from any trusted donor.
    """
    vals = seed.values
    mask = vals > 0
    if not mask.any():
        raise ValueError("cannot complete a fully empty depth map")
    out_vals = vals.copy()
    out_w = np.where(mask, np.asarray(weights, dtype=np.float64), 0.0)
    if mask.all():
        return DepthMap(out_vals), out_w

    donors_rc = np.argwhere(mask)
    donor_vals = vals[mask]
    donor_conf = out_w[mask]
    tree = cKDTree(donors_rc)
    targets = np.argwhere(~mask)
    k_n = min(8, len(donors_rc))

    fill_vals = np.zeros(len(targets))
    fill_w = np.zeros(len(targets))
    todo = np.ones(len(targets), dtype=bool)
    radius = float(cfg.fill_radius)
    while todo.any():
        dist, idx = tree.query(
            targets[todo], k=k_n, distance_upper_bound=radius
        )
        dist = np.atleast_2d(dist.T).T if dist.ndim == 1 else dist
        idx = np.atleast_2d(idx.T).T if idx.ndim == 1 else idx
        found = np.isfinite(dist[:, 0])
        if found.any():
            d = dist[found]
            i = idx[found]
            present = np.isfinite(d)
            d_safe = np.where(present, d, 1.0)
            i_safe = np.where(present, i, 0)
            inv = np.where(present, 1.0 / d_safe, 0.0)
            conf = donor_conf[i_safe]
            vals_k = donor_vals[i_safe]
            w_conf = conf * inv
            num = (w_conf * vals_k).sum(axis=1)
            den = w_conf.sum(axis=1)
            plain_num = (inv * vals_k).sum(axis=1)
            plain_den = inv.sum(axis=1)
            value = np.where(den > 0, num / np.where(den > 0, den, 1.0),
                             plain_num / plain_den)
            w_out = (w_conf).sum(axis=1) / plain_den
            rows = np.nonzero(todo)[0][found]
            fill_vals[rows] = value
            fill_w[rows] = w_out
            remaining = todo.copy()
            remaining[rows] = False
            todo = remaining
        radius *= 2.0

    out_vals[~mask] = fill_vals
    out_w[~mask] = fill_w
    return DepthMap(out_vals), out_w


def _shifted(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """a sampled at (y+dy, x+dx), zero outside the image."""
    h, w = a.shape
    out = np.zeros_like(a)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(max(0, dy), min(h, h + dy))
    xs_src = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = a[ys_src, xs_src]
    return out


_NEIGHBORS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def cspn_refine(
    coarse: DepthMap,
    guide: np.ndarray,
    anchors: DepthMap,
    cfg: PipelineConfig,
) -> DepthMap:
    """Iterative 8-neighborhood propagation with guide-image affinities.

    Per iteration each pixel becomes the affinity-normalized convex
    combination of itself (weight 1) and its in-bounds neighbors with
    weights exp(-(guide difference)^2 / bandwidth^2); anchor pixels are
    reset to their values after every iteration.
    """
    guide = np.asarray(guide, dtype=np.float64)
    if guide.shape != coarse.values.shape or anchors.values.shape != guide.shape:
        raise ValueError("coarse, guide, and anchor shapes differ")
    out = coarse.values.copy()
    if cfg.iterations == 0:
        return DepthMap(out)

    inv_bw2 = 1.0 / (cfg.bandwidth * cfg.bandwidth)
    affinities = []
    ones = np.ones_like(guide)
    norm = ones.copy()
    for dy, dx in _NEIGHBORS:
        delta = guide - _shifted(guide, dy, dx)
        aff = np.exp(-delta * delta * inv_bw2) * _shifted(ones, dy, dx)
        affinities.append(aff)
        norm += aff

    anchor_mask = anchors.values > 0
    anchor_vals = anchors.values[anchor_mask]
    for _ in range(cfg.iterations):
        acc = out.copy()
        for (dy, dx), aff in zip(_NEIGHBORS, affinities):
            acc += aff * _shifted(out, dy, dx)
        out = acc / norm
        out[anchor_mask] = anchor_vals
    return DepthMap(out)


def step(
    sparse: DepthMap,
    guide: np.ndarray,
    state: Optional[TemporalState],
    pose_to_next: Optional[RigidTransform],
    k: Intrinsics,
    cfg: PipelineConfig,
) -> Tuple[DepthMap, Optional[TemporalState]]:
    """One frame of the loop: fuse, densify, refine, warp forward.

    Returns the dense prediction and the state for the next frame (None when
    no pose is given, i.e. at a sequence end).
    """
    fused, weights = fuse_temporal(sparse, state, cfg)
    coarse, dense_w = spatial_complete(fused, weights, cfg)
    prediction = cspn_refine(coarse, guide, sparse, cfg)
    if pose_to_next is None:
        return prediction, None
    warped, corr = warp_depth(prediction, k, pose_to_next)
    carried = np.where(
        sparse.values > 0, 1.0, np.minimum(dense_w, 1.0)
    )
    conf = np.zeros_like(carried)
    hit = corr.winner_src >= 0
    conf[hit] = cfg.decay * carried.ravel()[corr.winner_src[hit]]
    return prediction, TemporalState(warped_prev=warped, confidence=conf)


# --------------------------------------------------------------------------
# sequences


@dataclass(frozen=True)
class FrameData:
    """One frame's inputs: lidar, guide image, optional truth, outgoing pose."""

    sparse: DepthMap
    guide: np.ndarray
    gt: Optional[DepthMap] = None
    pose_to_next: Optional[RigidTransform] = None


def frames_from_synthetic(seq) -> Tuple[Intrinsics, List[FrameData]]:
    """Adapt an in-memory synthetic sequence (exact poses)."""
    frames = []
    n = len(seq.gt)
    for i in range(n):
        frames.append(
            FrameData(
                sparse=seq.sparse[i],
                guide=seq.intensity[i],
                gt=seq.gt[i],
                pose_to_next=seq.relative_pose(i, i + 1) if i + 1 < n else None,
            )
        )
    return seq.k, frames


def _load_guide(path: Optional[Path], shape: Tuple[int, int]) -> np.ndarray:
    if path is None:
        return np.full(shape, 0.5)  # featureless guide: plain smoothing
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return arr


def frames_from_index(seq: SequenceIndex) -> Tuple[Intrinsics, List[FrameData]]:
    """Load a manifest-indexed sequence from disk."""
    frames = []
    n = len(seq.frames)
    for i, entry in enumerate(seq.frames):
        sparse = read_depth_png(entry.sparse)
        frames.append(
            FrameData(
                sparse=sparse,
                guide=_load_guide(entry.image, (sparse.height, sparse.width)),
                gt=read_depth_png(entry.gt) if entry.gt else None,
                pose_to_next=seq.relative_pose(i, i + 1) if i + 1 < n else None,
            )
        )
    return seq.calib.intrinsics, frames


def run_sequence(
    k: Intrinsics,
    frames: Sequence[FrameData],
    cfg: PipelineConfig,
    temporal: bool = False,
) -> Tuple[List[DepthMap], List[Optional[MetricsReport]]]:
    """Run the pipeline over a sequence; returns predictions and per-frame
    metrics (None where a frame has no ground truth).

    temporal=False re-runs every frame from an empty state, which makes the
    output independent of frame order; temporal=True threads the warped
    state and therefore requires a pose between every consecutive pair.
    """
    if not frames:
        raise ValueError("empty sequence")
    if temporal:
        missing = [
            i for i in range(len(frames) - 1) if frames[i].pose_to_next is None
        ]
        if missing:
            raise ValueError(
                f"temporal mode needs poses; missing after frame(s) {missing}"
            )
    predictions: List[DepthMap] = []
    reports: List[Optional[MetricsReport]] = []
    state: Optional[TemporalState] = None
    for i, frame in enumerate(frames):
        pose = frame.pose_to_next if (temporal and i + 1 < len(frames)) else None
        pred, next_state = step(
            frame.sparse, frame.guide, state if temporal else None, pose, k, cfg
        )
        state = next_state
        predictions.append(pred)
        reports.append(metrics(pred, frame.gt) if frame.gt is not None else None)
    return predictions, reports
