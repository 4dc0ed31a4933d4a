"""Synthetic scenes with exact poses: the ground-truth side of the test bench.

Analytic ray casting against planes, spheres, and axis-aligned boxes.  Rays
use direction (rx, ry, 1) so the ray parameter *is* the z-depth, which keeps
the closed-form expectations in the tests exact.  A lidar-like row sampler
and a writer for the standard dataset layout make the sequences
interchangeable with real drives downstream.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .geometry import DepthMap, Intrinsics, RigidTransform
from .kitti_io import write_depth_png

_EPS_T = 1e-6
_Vec = Tuple[float, float, float]


def _vec(v: Sequence[float]) -> _Vec:
    x, y, z = (float(c) for c in v)
    return (x, y, z)


# --------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Plane:
    """Infinite plane through `point` with the given (nonzero) normal."""

    point: _Vec
    normal: _Vec

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", _vec(self.point))
        object.__setattr__(self, "normal", _vec(self.normal))
        if not np.linalg.norm(self.normal) > 0:
            raise ValueError("plane normal must be nonzero")

    def transformed(self, t: RigidTransform) -> "Plane":
        return Plane(
            point=tuple(t.apply(np.array([self.point]))[0]),
            normal=tuple(t.rotation @ np.array(self.normal)),
        )

    def _intersect(self, origin, dirs):
        n = np.array(self.normal) / np.linalg.norm(self.normal)
        denom = dirs @ n
        num = float((np.array(self.point) - origin) @ n)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
        s = np.where(s > _EPS_T, s, np.inf)
        normals = np.broadcast_to(n, dirs.shape)
        return s, normals

    def to_dict(self) -> Dict:
        return {"type": "plane", "point": list(self.point), "normal": list(self.normal)}


@dataclass(frozen=True)
class Sphere:
    center: _Vec
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    def transformed(self, t: RigidTransform) -> "Sphere":
        return Sphere(
            center=tuple(t.apply(np.array([self.center]))[0]), radius=self.radius
        )

    def _intersect(self, origin, dirs):
        oc = origin - np.array(self.center)
        a = np.einsum("...i,...i->...", dirs, dirs)
        b = 2.0 * (dirs @ oc)
        c0 = float(oc @ oc) - self.radius**2
        disc = b * b - 4.0 * a * c0
        root = np.sqrt(np.maximum(disc, 0.0))
        s_near = (-b - root) / (2.0 * a)
        s_far = (-b + root) / (2.0 * a)
        s = np.where(s_near > _EPS_T, s_near, s_far)
        s = np.where((disc >= 0) & (s > _EPS_T), s, np.inf)
        s_hit = np.where(np.isfinite(s), s, 0.0)
        hit_pts = origin + dirs * s_hit[..., None]
        normals = (hit_pts - np.array(self.center)) / self.radius
        return s, normals

    def to_dict(self) -> Dict:
        return {"type": "sphere", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; stays axis-aligned under 90-degree rotations only."""

    min_corner: _Vec
    max_corner: _Vec

    def __post_init__(self) -> None:
        object.__setattr__(self, "min_corner", _vec(self.min_corner))
        object.__setattr__(self, "max_corner", _vec(self.max_corner))
        if not all(a < b for a, b in zip(self.min_corner, self.max_corner)):
            raise ValueError("box corners must satisfy min < max componentwise")

    def transformed(self, t: RigidTransform) -> "Box":
        snapped = np.rint(t.rotation)
        if not np.allclose(t.rotation, snapped, atol=1e-9):
            raise ValueError(
                "axis-aligned boxes only support axis-aligned rotations"
            )
        lo, hi = np.array(self.min_corner), np.array(self.max_corner)
        corners = np.array(
            [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
             for z in (lo[2], hi[2])]
        )
        moved = t.apply(corners)
        return Box(min_corner=tuple(moved.min(0)), max_corner=tuple(moved.max(0)))

    def _intersect(self, origin, dirs):
        lo = np.array(self.min_corner) - origin
        hi = np.array(self.max_corner) - origin
        d_safe = np.where(np.abs(dirs) < 1e-15, 1e-15, dirs)
        t1 = lo / d_safe
        t2 = hi / d_safe
        t_lo = np.minimum(t1, t2)
        t_hi = np.maximum(t1, t2)
        near = t_lo.max(axis=-1)
        far = t_hi.min(axis=-1)
        outside = near > _EPS_T
        s = np.where(outside, near, far)
        s = np.where((near <= far) & (s > _EPS_T), s, np.inf)

        axis = np.where(
            outside, np.argmax(t_lo, axis=-1), np.argmin(t_hi, axis=-1)
        )
        sign = np.take_along_axis(np.sign(d_safe), axis[..., None], -1)[..., 0]
        sign = np.where(outside, -sign, sign)
        normals = np.zeros(dirs.shape)
        np.put_along_axis(normals, axis[..., None], sign[..., None], -1)
        return s, normals

    def to_dict(self) -> Dict:
        return {
            "type": "box",
            "min": list(self.min_corner),
            "max": list(self.max_corner),
        }


Primitive = Union[Plane, Sphere, Box]

_PRIMITIVE_TYPES = {"plane": Plane, "sphere": Sphere, "box": Box}


def _primitive_from_dict(d: Dict) -> Primitive:
    kind = d.get("type")
    if kind == "plane":
        return Plane(point=d["point"], normal=d["normal"])
    if kind == "sphere":
        return Sphere(center=d["center"], radius=d["radius"])
    if kind == "box":
        return Box(min_corner=d["min"], max_corner=d["max"])
    raise ValueError(f"unknown primitive type {kind!r}")


@dataclass(frozen=True)
class SceneSpec:
    """A world made of primitives, all in meters, world frame."""

    primitives: Tuple[Primitive, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def transformed(self, t: RigidTransform) -> "SceneSpec":
        return SceneSpec(tuple(p.transformed(t) for p in self.primitives))

    def to_dict(self) -> Dict:
        return {"primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, d: Dict) -> "SceneSpec":
        return cls(tuple(_primitive_from_dict(p) for p in d["primitives"]))


@dataclass(frozen=True)
class Trajectory:
    """Ordered world<-camera poses, one per frame."""

    poses: Tuple[RigidTransform, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.poses)

    def to_dict(self) -> Dict:
        return {"poses": [p.matrix.ravel().tolist() for p in self.poses]}

    @classmethod
    def from_dict(cls, d: Dict) -> "Trajectory":
        return cls(
            tuple(
                RigidTransform.from_matrix(np.asarray(m, dtype=np.float64).reshape(4, 4))
                for m in d["poses"]
            )
        )


def forward_trajectory(n: int, step: float) -> Trajectory:
    """n frames advancing `step` meters per frame along the optical axis."""
    return Trajectory(
        tuple(
            RigidTransform(np.eye(3), np.array([0.0, 0.0, step * i]))
            for i in range(n)
        )
    )


def street_scene(seed: int = 0, depth: float = 9.5) -> SceneSpec:
    """A bounded scene — ground, back wall, a few obstacles.

    The back wall caps every ray at `depth` meters, keeping the scene within
    the range where half-pixel rasterization stays under the 0.1 m
    warp-consistency budget at the test cameras' resolution.
    """
    rng = np.random.default_rng(seed)
    prims = [
        Plane(point=(0.0, 1.5, 0.0), normal=(0.0, -1.0, 0.0)),     # ground
        Plane(point=(0.0, 0.0, depth), normal=(0.0, 0.0, 1.0)),    # back wall
    ]
    for _ in range(2):
        prims.append(
            Sphere(
                center=(
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-0.3, 0.8),
                    rng.uniform(4.0, depth - 1.5),
                ),
                radius=rng.uniform(0.5, 1.0),
            )
        )
    for _ in range(2):
        cx, cz = rng.uniform(-2.0, 2.0), rng.uniform(3.5, depth - 1.5)
        sx, sz = rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9)
        height = rng.uniform(0.8, 1.6)
        prims.append(
            Box(
                min_corner=(cx - sx, 1.5 - height, cz - sz),
                max_corner=(cx + sx, 1.5, cz + sz),
            )
        )
    return SceneSpec(tuple(prims))


# --------------------------------------------------------------------------
# rendering


def _cast(scene: SceneSpec, pose: RigidTransform, k: Intrinsics):
    if not scene.primitives:
        raise ValueError("scene has no primitives")
    rx = (np.arange(k.width, dtype=np.float64) - k.cx) / k.fx
    ry = (np.arange(k.height, dtype=np.float64) - k.cy) / k.fy
    gx, gy = np.meshgrid(rx, ry)
    dirs_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    dirs = dirs_cam @ pose.rotation.T
    origin = pose.translation

    best = np.full((k.height, k.width), np.inf)
    best_n = np.zeros((k.height, k.width, 3))
    for prim in scene.primitives:
        s, normals = prim._intersect(origin, dirs)
        closer = s < best
        best = np.where(closer, s, best)
        best_n[closer] = normals[closer]
    return best, best_n, dirs


def render_depth(scene: SceneSpec, pose: RigidTransform, k: Intrinsics) -> DepthMap:
    """Ray-cast z-depth of the nearest primitive; 0 where nothing is hit."""
    s, _, _ = _cast(scene, pose, k)
    return DepthMap(np.where(np.isfinite(s), s, 0.0))


def render_intensity(
    scene: SceneSpec, pose: RigidTransform, k: Intrinsics
) -> np.ndarray:
    """Flat-shaded guide image in [0, 1]: 0.25 + 0.7|n.v|, 0 where no hit."""
    s, normals, dirs = _cast(scene, pose, k)
    hit = np.isfinite(s)
    unit = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    facing = np.abs(np.einsum("hwi,hwi->hw", normals, unit))
    return np.where(hit, 0.25 + 0.7 * facing, 0.0)


# --------------------------------------------------------------------------
# lidar-like sparsification


def sample_lidar_pattern(
    dense: DepthMap, density_target: float, beam_rows: int, seed
) -> DepthMap:
    """Keep valid pixels on equally spaced scanline bands, randomly per band.

    Exactly round(density_target * pixels) samples are drawn (band quotas
    proportional to available pixels), so the nonzero fraction lands within
    the +-1% absolute contract or the request is refused as unreachable.
    """
    if not 0.0 < density_target <= 1.0:
        raise ValueError(f"density_target {density_target} outside (0, 1]")
    if density_target == 1.0:
        return DepthMap(dense.values.copy())
    h, w = dense.height, dense.width
    rows = np.unique(np.round(np.linspace(0, h - 1, beam_rows)).astype(int))
    band_cols = [np.nonzero(dense.values[r] > 0)[0] for r in rows]
    counts = np.array([len(c) for c in band_cols])
    available = int(counts.sum())
    target = int(round(density_target * h * w))
    if available < (density_target - 0.01) * h * w:
        raise ValueError(
            f"{beam_rows} beam rows hold {available} valid pixels; "
            f"density {density_target} is unreachable"
        )
    n_keep = min(target, available)

    exact = n_keep * counts / available
    quota = np.floor(exact).astype(int)
    short = n_keep - int(quota.sum())
    if short:
        order = np.argsort(-(exact - quota), kind="stable")
        quota[order[:short]] += 1

    rng = np.random.default_rng(seed)
    out = np.zeros((h, w))
    for r, cols, n in zip(rows, band_cols, quota):
        if n:
            chosen = rng.choice(cols, size=n, replace=False)
            out[r, chosen] = dense.values[r, chosen]
    return DepthMap(out)


# --------------------------------------------------------------------------
# sequences


@dataclass(frozen=True)
class SyntheticSequence:
    """In-memory frames: dense GT, sparse input, guide image, exact poses."""

    k: Intrinsics
    gt: Tuple[DepthMap, ...]
    sparse: Tuple[DepthMap, ...]
    intensity: Tuple[np.ndarray, ...]
    poses: Tuple[RigidTransform, ...]

    def __len__(self) -> int:
        return len(self.gt)

    def relative_pose(self, i: int, j: int) -> RigidTransform:
        """camera_j <- camera_i."""
        return self.poses[j].inverse().compose(self.poses[i])

    @property
    def relative_poses(self) -> Tuple[RigidTransform, ...]:
        """Consecutive camera_{i+1} <- camera_i transforms (empty if length 1)."""
        return tuple(
            self.relative_pose(i, i + 1) for i in range(len(self.gt) - 1)
        )


def make_sequence(
    scene: SceneSpec,
    trajectory: Trajectory,
    k: Intrinsics,
    density: float,
    seed: int,
    beam_rows: int = 24,
    moving: Optional[Tuple[Box, Sequence[float]]] = None,
    jitter_sigma: float = 0.0,
) -> SyntheticSequence:
    """Render a trajectory into GT/sparse/intensity frames with exact poses.

    `moving` injects a box translated by `velocity` per frame — deliberately
    breaking the static-world assumption for negative tests.  `jitter_sigma`
    adds Gaussian range noise to the sparse samples only.
    """
    if len(trajectory) < 1:
        raise ValueError("trajectory must contain at least one pose")
    gts, sparses, images = [], [], []
    for i, pose in enumerate(trajectory.poses):
        frame_scene = scene
        if moving is not None:
            box, velocity = moving
            shift = RigidTransform(np.eye(3), np.asarray(velocity, float) * i)
            frame_scene = SceneSpec(scene.primitives + (box.transformed(shift),))
        gt = render_depth(frame_scene, pose, k)
        sparse = sample_lidar_pattern(gt, density, beam_rows, seed=(seed, i))
        if jitter_sigma > 0.0:
            rng = np.random.default_rng((seed, i, 1))
            vals = sparse.values.copy()
            mask = vals > 0
            vals[mask] = np.maximum(
                vals[mask] + rng.normal(0.0, jitter_sigma, mask.sum()), 1e-3
            )
            sparse = DepthMap(vals)
        gts.append(gt)
        sparses.append(sparse)
        images.append(render_intensity(frame_scene, pose, k))
    return SyntheticSequence(
        k=k,
        gt=tuple(gts),
        sparse=tuple(sparses),
        intensity=tuple(images),
        poses=trajectory.poses,
    )


# --------------------------------------------------------------------------
# dataset-layout writer

_LAT0 = 49.0
_LON0 = 8.43
_ALT0 = 112.0
_EARTH = 6378137.0


def _euler_zyx(r: np.ndarray) -> Tuple[float, float, float]:
    pitch = -math.asin(max(-1.0, min(1.0, float(r[2, 0]))))
    roll = math.atan2(float(r[2, 1]), float(r[2, 2]))
    yaw = math.atan2(float(r[1, 0]), float(r[0, 0]))
    return roll, pitch, yaw


def _oxts_line_for(pose: RigidTransform) -> str:
    s = math.cos(math.radians(_LAT0))
    y0 = s * _EARTH * math.log(math.tan(math.pi / 4 + math.radians(_LAT0) / 2))
    x, y, z = pose.translation
    lat = math.degrees(2 * math.atan(math.exp((y + y0) / (s * _EARTH))) - math.pi / 2)
    lon = math.degrees(x / (s * _EARTH)) + _LON0
    roll, pitch, yaw = _euler_zyx(pose.rotation)
    head = [lat, lon, _ALT0 + z, roll, pitch, yaw]
    extras = ["0"] * 20 + ["9", "4", "4", "6"]
    return " ".join(f"{v:.16g}" for v in head) + " " + " ".join(extras)


def _calib_text(k: Intrinsics) -> str:
    p = (
        f"{k.fx:.9e} 0.000000000e+00 {k.cx:.9e} 0.000000000e+00 "
        f"0.000000000e+00 {k.fy:.9e} {k.cy:.9e} 0.000000000e+00 "
        "0.000000000e+00 0.000000000e+00 1.000000000e+00 0.000000000e+00"
    )
    identity = "1 0 0 0 1 0 0 0 1"
    return (
        f"S_rect_02: {k.width:.6e} {k.height:.6e}\n"
        f"R_rect_00: {identity}\n"
        f"P_rect_02: {p}\n"
    )


def write_kitti_layout(
    seq: SyntheticSequence, out_dir: Union[str, Path], name: str = "synthetic"
) -> Path:
    """Write a sequence in the standard dataset tree; returns the manifest path.

    The manifest carries both OXTS-equivalent records and the exact poses.
    Depths at or beyond the 16-bit range (>= 255.99 m) are written as
    missing returns.
    """
    out = Path(out_dir)
    for sub in (
        "oxts",
        "image_02/data",
        "proj_depth/velodyne_raw/image_02",
        "proj_depth/groundtruth/image_02",
    ):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "calib_cam_to_cam.txt").write_text(_calib_text(seq.k))
    (out / "calib_velo_to_cam.txt").write_text("R: 1 0 0 0 1 0 0 0 1\nT: 0 0 0\n")
    (out / "calib_imu_to_velo.txt").write_text("R: 1 0 0 0 1 0 0 0 1\nT: 0 0 0\n")

    def clipped(d: DepthMap) -> DepthMap:
        vals = d.values.copy()
        vals[vals >= 255.99] = 0.0
        return DepthMap(vals)

    frames = []
    for i in range(len(seq)):
        stem = f"{i:010d}"
        sparse_rel = f"proj_depth/velodyne_raw/image_02/{stem}.png"
        gt_rel = f"proj_depth/groundtruth/image_02/{stem}.png"
        image_rel = f"image_02/data/{stem}.png"
        write_depth_png(out / sparse_rel, clipped(seq.sparse[i]))
        write_depth_png(out / gt_rel, clipped(seq.gt[i]))
        Image.fromarray(
            np.rint(seq.intensity[i] * 255.0).astype(np.uint8)
        ).save(out / image_rel)
        line = _oxts_line_for(seq.poses[i])
        (out / "oxts" / f"{stem}.txt").write_text(line + "\n")
        frames.append(
            {
                "index": i,
                "sparse": sparse_rel,
                "gt": gt_rel,
                "image": image_rel,
                "oxts": line,
                "pose": seq.poses[i].matrix.ravel().tolist(),
            }
        )

    manifest = {
        "name": name,
        "camera": 2,
        "calib": {
            "cam_to_cam": "calib_cam_to_cam.txt",
            "velo_to_cam": "calib_velo_to_cam.txt",
            "imu_to_velo": "calib_imu_to_velo.txt",
        },
        "frames": frames,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path
