"""KITTI depth-completion dataset I/O.

Covers the on-disk conventions of the raw + depth-completion distributions:
16-bit depth PNGs (value/256 m, 0 = invalid), whitespace OXTS GPS/IMU
records, ``KEY: v1 v2 ...`` calibration files, float32 lidar scans, the
bottom-center evaluation crop, and a JSON sequence manifest that makes
frame sequences first-class.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from PIL import Image

from .geometry import (
    DepthMap,
    Intrinsics,
    PointCloud,
    RigidTransform,
    project,
    rasterize_to_pixels,
    rotation_x,
    rotation_y,
    rotation_z,
    scatter_min_depth,
)

EARTH_RADIUS_M = 6378137.0
DEPTH_PNG_SCALE = 256.0


class KittiFormatError(ValueError):
    """A file does not follow the expected dataset convention."""


class DepthRangeError(ValueError):
    """A depth value cannot be represented by the 16-bit encoding."""


# --------------------------------------------------------------------------
# depth PNGs


def read_depth_png(path: Union[str, Path]) -> DepthMap:
    """Read a 16-bit single-channel depth PNG (meters = stored/256)."""
    with Image.open(path) as img:
        if img.mode not in ("I", "I;16", "I;16B"):
            raise KittiFormatError(
                f"{path}: expected a 16-bit single-channel PNG, got mode "
                f"{img.mode!r}"
            )
        codes = np.asarray(img, dtype=np.int64)
    if codes.ndim != 2:
        raise KittiFormatError(f"{path}: expected a single channel")
    if codes.min() < 0 or codes.max() > 0xFFFF:
        raise KittiFormatError(f"{path}: stored values exceed 16 bits")
    return DepthMap(codes.astype(np.float64) / DEPTH_PNG_SCALE)


def write_depth_png(path: Union[str, Path], depth: DepthMap) -> None:
    """Write a depth map as a 16-bit PNG, rounding to the nearest code."""
    if (depth.values >= 256.0).any():
        raise DepthRangeError(
            f"{path}: depths of 256 m or more overflow the 16-bit encoding"
        )
    codes = np.rint(depth.values * DEPTH_PNG_SCALE)
    if codes.max() > 0xFFFF:
        raise DepthRangeError(f"{path}: rounded code exceeds 16 bits")
    Image.fromarray(codes.astype(np.uint16)).save(path, format="PNG")


# --------------------------------------------------------------------------
# OXTS records and world poses


@dataclass(frozen=True)
class OxtsRecord:
    """One GPS/IMU record: position, orientation, plus unused trailing fields."""

    lat: float
    lon: float
    alt: float
    roll: float
    pitch: float
    yaw: float
    extras: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        head = (self.lat, self.lon, self.alt, self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in head):
            raise KittiFormatError("non-finite OXTS pose field")
        if abs(self.lat) > 90.0:
            raise KittiFormatError(f"latitude {self.lat} outside [-90, 90]")
        if abs(self.lon) > 180.0:
            raise KittiFormatError(f"longitude {self.lon} outside [-180, 180]")


def parse_oxts_line(line: str) -> OxtsRecord:
    """Parse one whitespace-separated OXTS record (first 6 fields used)."""
    parts = line.split()
    if len(parts) < 6:
        raise KittiFormatError(
            f"OXTS record has {len(parts)} fields, need at least 6"
        )
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise KittiFormatError(f"non-numeric OXTS field: {exc}") from exc
    return OxtsRecord(
        lat=values[0],
        lon=values[1],
        alt=values[2],
        roll=values[3],
        pitch=values[4],
        yaw=values[5],
        extras=tuple(values[6:]),
    )


def read_oxts_file(path: Union[str, Path]) -> OxtsRecord:
    """Read the single-record OXTS file of one frame."""
    for line in Path(path).read_text().splitlines():
        if line.strip():
            return parse_oxts_line(line)
    raise KittiFormatError(f"{path}: no OXTS record found")


def mercator_scale(lat0_deg: float) -> float:
    """Mercator scale factor frozen from a sequence's first latitude."""
    if abs(lat0_deg) >= 90.0:
        raise ValueError(f"reference latitude {lat0_deg} out of range")
    return math.cos(math.radians(lat0_deg))


def oxts_to_world_pose(rec: OxtsRecord, scale_lat0: float) -> RigidTransform:
    """GPS/IMU record -> world<-imu pose via a scaled Mercator projection."""
    s = mercator_scale(scale_lat0)
    if abs(rec.lat) >= 90.0:
        raise ValueError(f"latitude {rec.lat} out of Mercator domain")
    x = s * EARTH_RADIUS_M * math.radians(rec.lon)
    y = s * EARTH_RADIUS_M * math.log(
        math.tan(math.pi / 4.0 + math.radians(rec.lat) / 2.0)
    )
    rot = rotation_z(rec.yaw) @ rotation_y(rec.pitch) @ rotation_x(rec.roll)
    return RigidTransform(rot, np.array([x, y, rec.alt]))


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibBundle:
    """Rigid chain from IMU through lidar into one rectified camera."""

    intrinsics: Intrinsics
    rect_rotation: RigidTransform
    velo_to_cam: RigidTransform
    imu_to_velo: RigidTransform
    baseline_x: float

    @property
    def velo_to_rect_cam(self) -> RigidTransform:
        shift = RigidTransform(np.eye(3), np.array([self.baseline_x, 0.0, 0.0]))
        return shift.compose(self.rect_rotation).compose(self.velo_to_cam)

    @property
    def imu_to_rect_cam(self) -> RigidTransform:
        return self.velo_to_rect_cam.compose(self.imu_to_velo)


def _parse_kv_file(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    table: Dict[str, np.ndarray] = {}
    for line in Path(path).read_text().splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            table[key.strip()] = np.array([float(v) for v in rest.split()])
        except ValueError:
            continue  # e.g. calib_time lines
    return table


def _require(table: Dict[str, np.ndarray], key: str, path: Path) -> np.ndarray:
    if key not in table:
        raise KittiFormatError(f"{path}: missing calibration key {key!r}")
    return table[key]


def _snap_rotation(r: np.ndarray) -> np.ndarray:
    # calibration text carries ~7 digits, short of the 1e-9 orthonormality
    # bound; snap to the nearest rotation before constructing the transform
    u, _, vt = np.linalg.svd(r.reshape(3, 3))
    if np.linalg.det(u @ vt) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
    return u @ vt


def read_calib(
    cam_to_cam: Union[str, Path],
    velo_to_cam: Union[str, Path],
    imu_to_velo: Union[str, Path],
    camera: int = 2,
) -> CalibBundle:
    """Parse the three raw-dataset calibration files for one camera."""
    cam_path, velo_path, imu_path = Path(cam_to_cam), Path(velo_to_cam), Path(imu_to_velo)
    cam = _parse_kv_file(cam_path)
    p = _require(cam, f"P_rect_{camera:02d}", cam_path).reshape(3, 4)
    size = _require(cam, f"S_rect_{camera:02d}", cam_path)
    intrinsics = Intrinsics(
        fx=p[0, 0],
        fy=p[1, 1],
        cx=p[0, 2],
        cy=p[1, 2],
        width=round(size[0]),
        height=round(size[1]),
    )
    rect = RigidTransform(
        _snap_rotation(_require(cam, "R_rect_00", cam_path)), np.zeros(3)
    )

    velo = _parse_kv_file(velo_path)
    velo_to_cam_t = RigidTransform(
        _snap_rotation(_require(velo, "R", velo_path)),
        _require(velo, "T", velo_path),
    )
    imu = _parse_kv_file(imu_path)
    imu_to_velo_t = RigidTransform(
        _snap_rotation(_require(imu, "R", imu_path)),
        _require(imu, "T", imu_path),
    )
    return CalibBundle(
        intrinsics=intrinsics,
        rect_rotation=rect,
        velo_to_cam=velo_to_cam_t,
        imu_to_velo=imu_to_velo_t,
        baseline_x=p[0, 3] / p[0, 0],
    )


def relative_camera_pose(
    world_a: RigidTransform, world_b: RigidTransform, calib: CalibBundle
) -> RigidTransform:
    """Map frame-a rectified-camera coordinates into frame b.

    Inputs are world<-imu poses; the calibration chain carries the points
    camera <- lidar <- imu <- world and back.
    """
    c = calib.imu_to_rect_cam
    return c.compose(world_b.inverse()).compose(world_a).compose(c.inverse())


# --------------------------------------------------------------------------
# lidar scans


def read_velodyne_bin(path: Union[str, Path]) -> PointCloud:
    """Read little-endian float32 (x, y, z, reflectance) quadruples."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4 != 0:
        raise KittiFormatError(f"{path}: byte length is not a whole scan")
    return PointCloud(raw.reshape(-1, 4)[:, :3].astype(np.float64))


def write_velodyne_bin(
    path: Union[str, Path],
    scan: PointCloud,
    reflectance: Optional[np.ndarray] = None,
) -> None:
    n = scan.points.shape[0]
    if reflectance is None:
        reflectance = np.zeros(n)
    out = np.concatenate(
        [scan.points, np.asarray(reflectance, dtype=np.float64).reshape(n, 1)],
        axis=1,
    )
    out.astype("<f4").tofile(path)


def project_lidar(scan: PointCloud, calib: CalibBundle) -> DepthMap:
    """Project a lidar scan into the rectified camera as a sparse depth map.

    Same nearest-pixel/min-depth scatter as the forward warp; overlapping
    returns keep the closer surface.
    """
    k = calib.intrinsics
    cam = PointCloud(calib.velo_to_rect_cam.apply(scan.points))
    uvd, _ = project(cam, k)
    rows, cols = rasterize_to_pixels(uvd[:, 0], uvd[:, 1])
    inb = (rows >= 0) & (rows < k.height) & (cols >= 0) & (cols < k.width)
    src = np.arange(uvd.shape[0], dtype=np.int64)
    grid, _ = scatter_min_depth(
        rows[inb], cols[inb], uvd[inb, 2], src[inb], k.height, k.width
    )
    return DepthMap(grid)


# --------------------------------------------------------------------------
# evaluation crop


def crop_offsets(height: int, width: int, out_w: int, out_h: int) -> Tuple[int, int]:
    """(top, left) of the bottom-center crop window."""
    if out_h > height or out_w > width or out_h <= 0 or out_w <= 0:
        raise ValueError(
            f"crop {out_w}x{out_h} does not fit inside {width}x{height}"
        )
    return height - out_h, (width - out_w) // 2


def bottom_center_crop(
    data: Union[DepthMap, np.ndarray], out_w: int, out_h: int
) -> Union[DepthMap, np.ndarray]:
    """Keep the bottom out_h rows and the centered out_w columns."""
    if isinstance(data, DepthMap):
        top, left = crop_offsets(data.height, data.width, out_w, out_h)
        return DepthMap(data.values[top : top + out_h, left : left + out_w])
    arr = np.asarray(data)
    if arr.ndim not in (2, 3):
        raise ValueError(f"cannot crop a {arr.ndim}-d array")
    top, left = crop_offsets(arr.shape[0], arr.shape[1], out_w, out_h)
    return arr[top : top + out_h, left : left + out_w]


def crop_intrinsics(k: Intrinsics, out_w: int, out_h: int) -> Intrinsics:
    """Intrinsics of the cropped view (principal point shifts by the offsets)."""
    top, left = crop_offsets(k.height, k.width, out_w, out_h)
    return Intrinsics(
        fx=k.fx, fy=k.fy, cx=k.cx - left, cy=k.cy - top, width=out_w, height=out_h
    )


# --------------------------------------------------------------------------
# sequence manifests


@dataclass(frozen=True)
class FrameEntry:
    """One frame of a sequence: file paths, GPS/IMU record, optional pose."""

    index: int
    sparse: Path
    gt: Optional[Path]
    image: Optional[Path]
    oxts: OxtsRecord
    pose: Optional[RigidTransform] = None  # exact world<-camera, if known


@dataclass(frozen=True)
class SequenceIndex:
    """An ordered, existence-checked view of one drive's frames."""

    name: str
    root: Path
    camera: int
    calib: CalibBundle
    frames: Tuple[FrameEntry, ...]

    @classmethod
    def open(cls, manifest_path: Union[str, Path]) -> "SequenceIndex":
        manifest_path = Path(manifest_path)
        data = json.loads(manifest_path.read_text())
        root = manifest_path.parent

        def existing(rel: str) -> Path:
            p = root / rel
            if not p.exists():
                raise FileNotFoundError(f"manifest names missing file: {p}")
            return p

        calib_spec = data["calib"]
        camera = int(data.get("camera", 2))
        calib = read_calib(
            existing(calib_spec["cam_to_cam"]),
            existing(calib_spec["velo_to_cam"]),
            existing(calib_spec["imu_to_velo"]),
            camera=camera,
        )

        frames = []
        for f in data["frames"]:
            pose = None
            if f.get("pose") is not None:
                pose = RigidTransform.from_matrix(
                    np.asarray(f["pose"], dtype=np.float64).reshape(4, 4)
                )
            frames.append(
                FrameEntry(
                    index=int(f["index"]),
                    sparse=existing(f["sparse"]),
                    gt=existing(f["gt"]) if f.get("gt") else None,
                    image=existing(f["image"]) if f.get("image") else None,
                    oxts=parse_oxts_line(f["oxts"]),
                    pose=pose,
                )
            )
        indices = [f.index for f in frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise KittiFormatError(
                f"{manifest_path}: frame indices must strictly increase"
            )
        return cls(
            name=str(data.get("name", manifest_path.stem)),
            root=root,
            camera=camera,
            calib=calib,
            frames=tuple(frames),
        )

    def __len__(self) -> int:
        return len(self.frames)

    def relative_pose(self, i: int, j: int) -> RigidTransform:
        """camera_j <- camera_i transform between two frames.

        Exact manifest poses win when both frames carry one; otherwise the
        pose is derived from the OXTS records through the calibration chain
        with the Mercator scale frozen at frame 0.
        """
        a, b = self.frames[i], self.frames[j]
        if a.pose is not None and b.pose is not None:
            return b.pose.inverse().compose(a.pose)
        lat0 = self.frames[0].oxts.lat
        return relative_camera_pose(
            oxts_to_world_pose(a.oxts, lat0),
            oxts_to_world_pose(b.oxts, lat0),
            self.calib,
        )
