"""Pinhole projection, rigid transforms, and forward depth warping.

Depth maps are (H, W) float64 grids in meters where 0 marks an invalid
pixel.  Forward warping unprojects every valid source pixel, moves it by a
rigid transform, reprojects it, and scatters it to the nearest target
pixel; collisions are resolved by keeping the minimum depth.  The scatter
is deterministic and comes with an analytic backward pass for the source
depth values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

# Points at or closer than this camera-plane distance (meters) are dropped
# before projection to keep u = fx*x/z + cx away from the z=0 blow-up.
Z_MIN = 1e-3

# Rotation matrices must be orthonormal with unit determinant to this
# absolute per-entry tolerance.
ROTATION_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input (bad intrinsics, malformed rotation, ...)."""


class DimensionMismatchError(GeometryError):
    """Array dimensions disagree with the camera or with each other."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Intrinsics:
    """Pinhole camera parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width):
            raise GeometryError(f"cx={self.cx} outside [0, {self.width})")
        if not (0 <= self.cy < self.height):
            raise GeometryError(f"cy={self.cy} outside [0, {self.height})")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d: dict) -> "Intrinsics":
        return Intrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )

    @property
    def matrix(self) -> np.ndarray:
        """3x3 camera matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) transform: x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _readonly(self.rotation)
        t = _readonly(self.translation)
        if r.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise GeometryError(f"translation must be a 3-vector, got {t.shape}")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise GeometryError(f"rotation is not orthonormal (max |R'R - I| = {err:.3e})")
        det = np.linalg.det(r)
        if abs(det - 1.0) > ROTATION_TOL:
            raise GeometryError(f"rotation determinant {det} != +1")
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation has non-finite entries")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError(f"expected 4x4 matrix, got {m.shape}")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > ROTATION_TOL:
            raise GeometryError("last matrix row must be (0, 0, 0, 1)")
        return RigidTransform(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other))(x) == self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


def rotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth grid in meters; 0 marks an invalid pixel."""

    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim != 2:
            raise GeometryError(f"depth map must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GeometryError("depth map has non-finite values")
        if v.size and v.min() < 0:
            raise GeometryError("depth map has negative values")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values > 0

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.values))

    @property
    def density(self) -> float:
        """Fraction of pixels that carry a depth value."""
        return self.valid_count / self.values.size

    @staticmethod
    def zeros(height: int, width: int) -> "DepthMap":
        return DepthMap(np.zeros((height, width)))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """(N, 3) points in meters; the reference frame is documented per use."""

    points: np.ndarray

    def __post_init__(self):
        p = _readonly(self.points)
        if p.ndim != 2 or p.shape[1] != 3:
            raise GeometryError(f"point cloud must be (N, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise GeometryError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class WarpCorrespondence:
    """Bookkeeping produced by warp_depth, consumed by warp_backward.

    winner_src: (H, W) int64, flat row-major index of the source pixel that
        won each target pixel, -1 where no source landed.
    src_target_row / src_target_col: (H, W) int64, rasterized target pixel
        of each source pixel, -1 where the source was invalid or dropped.
    src_target_u / src_target_v: (H, W) float64 continuous target
        coordinates before rasterization (NaN where dropped).
    src_warped_depth: (H, W) float64 transformed depth each source carried
        to its target (0 where dropped).
    src_depth_jacobian: (H, W) float64 derivative of the warped depth with
        respect to the source depth value (0 where dropped).
    dropped: number of valid source pixels lost to z <= Z_MIN or to
        out-of-bounds targets.
    """

    winner_src: np.ndarray
    src_target_row: np.ndarray
    src_target_col: np.ndarray
    src_target_u: np.ndarray
    src_target_v: np.ndarray
    src_warped_depth: np.ndarray
    src_depth_jacobian: np.ndarray
    dropped: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.winner_src.shape


def unproject(depth: DepthMap, k: Intrinsics) -> PointCloud:
    """Lift every valid pixel to a 3-D camera-frame point.

    Pixel (u, v) with depth d maps to d * ((u - cx)/fx, (v - cy)/fy, 1).
    Points are emitted in row-major pixel order.
    """
    _check_dims(depth, k)
    vals = depth.values
    vs, us = np.nonzero(vals > 0)
    d = vals[vs, us]
    rx = (us.astype(np.float64) - k.cx) / k.fx
    ry = (vs.astype(np.float64) - k.cy) / k.fy
    pts = np.stack([d * rx, d * ry, d], axis=1)
    return PointCloud(pts)


def project(cloud: PointCloud, k: Intrinsics) -> Tuple[np.ndarray, int]:
    """Project camera-frame points to continuous image coordinates.

    Points with z <= Z_MIN are dropped silently.

    Returns:
        (uvd, dropped): uvd is (M, 3) of (u, v, depth) with continuous
        (unrasterized) coordinates; dropped counts discarded points.
    """
    p = cloud.points
    keep = p[:, 2] > Z_MIN
    x, y, z = p[keep, 0], p[keep, 1], p[keep, 2]
    u = k.fx * x / z + k.cx
    v = k.fy * y / z + k.cy
    uvd = np.stack([u, v, z], axis=1)
    return uvd, int(len(p) - keep.sum())


def rasterize_to_pixels(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest-pixel rasterization: floor(coord + 0.5)."""
    col = np.floor(u + 0.5).astype(np.int64)
    row = np.floor(v + 0.5).astype(np.int64)
    return row, col


def scatter_min_depth(
    rows: np.ndarray,
    cols: np.ndarray,
    depths: np.ndarray,
    src_flat: np.ndarray,
    height: int,
    width: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Scatter depths onto a grid keeping the minimum per pixel.

    Ties on the minimum depth are broken toward the lowest flat source
    index so the winner assignment never depends on visitation order.

    Args:
        rows, cols: rasterized target pixels (may be out of bounds).
        depths: transformed depth carried by each sample.
        src_flat: flat row-major index identifying each sample's source.
        height, width: target grid size.

    Returns:
        (depth_grid, winner_grid): (H, W) float64 minimum depths with 0 for
        unhit pixels, and (H, W) int64 winning source indices with -1 for
        unhit pixels.
    """
    inb = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    t_flat = rows[inb] * width + cols[inb]
    d = depths[inb]
    s = src_flat[inb]

    grid = np.full(height * width, np.inf)
    np.minimum.at(grid, t_flat, d)

    winner = np.full(height * width, np.iinfo(np.int64).max, dtype=np.int64)
    at_min = d == grid[t_flat]
    np.minimum.at(winner, t_flat[at_min], s[at_min])

    unhit = ~np.isfinite(grid)
    grid[unhit] = 0.0
    winner[unhit] = -1
    return grid.reshape(height, width), winner.reshape(height, width)


def warp_depth(
    prev: DepthMap, k: Intrinsics, p: RigidTransform
) -> Tuple[DepthMap, WarpCorrespondence]:
    """Forward-warp a depth map through a rigid transform.

    Every valid source pixel is unprojected, moved by p, reprojected, and
    scattered to the nearest target pixel.  When several sources land on
    one target the minimum transformed depth wins; equal depths go to the
    lowest row-major source index.  Unhit targets are 0.

    The arithmetic below is written as explicit elementwise expressions
    (not matrix products) so that a scalar reference loop evaluating the
    same formulas reproduces the output bit-for-bit.
    """
    _check_dims(prev, k)
    h, w = prev.height, prev.width
    vals = prev.values

    vs, us = np.nonzero(vals > 0)
    d = vals[vs, us]
    src_flat = vs * w + us

    rx = (us.astype(np.float64) - k.cx) / k.fx
    ry = (vs.astype(np.float64) - k.cy) / k.fy
    x = d * rx
    y = d * ry
    z = d

    r = p.rotation
    t = p.translation
    xt = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0]
    yt = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1]
    zt = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]
    jac = r[2, 0] * rx + r[2, 1] * ry + r[2, 2]

    front = zt > Z_MIN
    u_t = np.full(len(d), np.nan)
    v_t = np.full(len(d), np.nan)
    u_t[front] = k.fx * xt[front] / zt[front] + k.cx
    v_t[front] = k.fy * yt[front] / zt[front] + k.cy

    trow = np.full(len(d), -1, dtype=np.int64)
    tcol = np.full(len(d), -1, dtype=np.int64)
    trow[front], tcol[front] = rasterize_to_pixels(u_t[front], v_t[front])
    inb = front & (trow >= 0) & (trow < h) & (tcol >= 0) & (tcol < w)
    trow[~inb] = -1
    tcol[~inb] = -1

    grid, winner = scatter_min_depth(
        trow[inb], tcol[inb], zt[inb], src_flat[inb], h, w
    )

    def _scatter_src(fill, values, mask, dtype=np.float64):
        out = np.full((h, w), fill, dtype=dtype)
        out[vs[mask], us[mask]] = values[mask]
        return out

    all_src = np.ones(len(d), dtype=bool)
    corr = WarpCorrespondence(
        winner_src=winner,
        src_target_row=_scatter_src(-1, trow, all_src, dtype=np.int64),
        src_target_col=_scatter_src(-1, tcol, all_src, dtype=np.int64),
        src_target_u=_scatter_src(np.nan, u_t, inb),
        src_target_v=_scatter_src(np.nan, v_t, inb),
        src_warped_depth=_scatter_src(0.0, zt, inb),
        src_depth_jacobian=_scatter_src(0.0, jac, inb),
        dropped=int(len(d) - inb.sum()),
    )
    return DepthMap(grid), corr


def warp_backward(grad_out: np.ndarray, corr: WarpCorrespondence) -> np.ndarray:
    """Route target-pixel gradients back to winning source depth values.

    grad_in[src] = grad_out[target(src)] * d(warped depth)/d(source depth)
    for sources that won their target pixel; everything else gets 0.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != corr.shape:
        raise DimensionMismatchError(
            f"gradient shape {grad_out.shape} != warp shape {corr.shape}"
        )
    h, w = corr.shape
    trow = corr.src_target_row
    tcol = corr.src_target_col
    landed = trow >= 0

    src_flat = np.arange(h * w, dtype=np.int64).reshape(h, w)
    won = np.zeros((h, w), dtype=bool)
    won[landed] = corr.winner_src[trow[landed], tcol[landed]] == src_flat[landed]

    grad_in = np.zeros((h, w))
    grad_in[won] = grad_out[trow[won], tcol[won]] * corr.src_depth_jacobian[won]
    return grad_in


def _check_dims(depth: DepthMap, k: Intrinsics) -> None:
    if depth.width != k.width or depth.height != k.height:
        raise DimensionMismatchError(
            f"depth map is {depth.width}x{depth.height}, "
            f"camera expects {k.width}x{k.height}"
        )
