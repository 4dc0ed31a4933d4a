#!/usr/bin/env python3
"""Regenerate the bundled dataset fixture under tests/data/kitti.

Calibration text is the published 2011_09_26 rig; scans are ray-cast from a
small street scene with an HDL-64-like beam pattern, tuned so the projected
sparse depth lands in the 4-8% density band of real drives.  Three frames of
forward motion (~1.15 m per frame, heading north) with matching OXTS records.
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from depthrec.geometry import PointCloud
from depthrec.kitti_io import (
    project_lidar,
    read_calib,
    write_depth_png,
    write_velodyne_bin,
)

ROOT = Path(__file__).resolve().parents[1] / "tests" / "data" / "kitti"

CALIB_CAM_TO_CAM = """\
calib_time: 09-Jan-2012 13:57:47
corner_dist: 9.950000e-02
S_02: 1.392000e+03 5.120000e+02
K_02: 9.597910e+02 0.000000e+00 6.960217e+02 0.000000e+00 9.569251e+02 2.241806e+02 0.000000e+00 0.000000e+00 1.000000e+00
D_02: -3.691481e-01 1.968681e-01 1.353473e-03 5.677587e-04 -6.770705e-02
R_02: 9.999758e-01 -5.267463e-03 -4.552439e-03 5.251945e-03 9.999804e-01 -3.413835e-03 4.570332e-03 3.389843e-03 9.999838e-01
T_02: 5.956621e-02 2.900141e-04 2.577209e-03
S_rect_02: 1.242000e+03 3.750000e+02
R_rect_00: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
R_rect_02: 9.998817e-01 1.511453e-02 -2.841595e-03 -1.511724e-02 9.998853e-01 -9.338510e-04 2.827154e-03 9.766976e-04 9.999955e-01
P_rect_02: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
"""

CALIB_VELO_TO_CAM = """\
calib_time: 09-Jan-2012 13:57:47
R: 7.533745e-03 -9.999714e-01 -6.166020e-04 1.480249e-02 7.280733e-04 -9.998902e-01 9.998621e-01 7.523790e-03 1.480755e-02
T: -4.069766e-03 -7.631618e-02 -2.717806e-01
delta_f: 0.000000e+00 0.000000e+00
delta_c: 0.000000e+00 0.000000e+00
"""

CALIB_IMU_TO_VELO = """\
calib_time: 09-Jan-2012 13:57:47
R: 9.999976e-01 7.553071e-04 -2.035826e-03 -7.854027e-04 9.998898e-01 -1.482298e-02 2.024406e-03 1.482454e-02 9.998881e-01
T: -8.086759e-01 3.195559e-01 -7.997231e-01
"""

# forward speed ~11.46 m/s at 10 Hz, heading due north (imu x axis = north)
LAT0 = 49.011212
STEP_M = 1.146
DLAT_PER_FRAME = 1.0295e-05
YAW = math.pi / 2.0


def oxts_line(i: int) -> str:
    lat = LAT0 + DLAT_PER_FRAME * i
    fields = [
        f"{lat:.9f}", "8.4320054", "112.83", "0.0", "0.0", f"{YAW:.16f}",
        "11.46", "0.0", "11.46", "0.0", "0.0",
        "0.12", "-0.05", "9.81", "0.11", "-0.04", "9.80",
        "-0.0012", "0.0021", "0.0049", "-0.0011", "0.0020", "0.0050",
        "0.027", "0.018", "4", "9", "4", "4", "6",
    ]
    return " ".join(fields)


def ray_cast_scene(frame: int, n_beams: int, az_step_deg: float, rng) -> np.ndarray:
    """Cast rays from the sensor origin (velodyne frame: x fwd, y left, z up)."""
    shift = STEP_M * frame  # static world, sensor moved forward
    ground_z = -1.73
    boxes = np.array(
        [  # xmin xmax ymin ymax zmin zmax, meters, frame-0 sensor frame
            [18.0, 18.6, -10.0, 10.0, ground_z, 2.6],   # far wall
            [8.5, 12.5, -3.4, -1.6, ground_z, -0.25],   # parked car, right
            [12.0, 16.0, 2.0, 3.8, ground_z, -0.30],    # parked car, left
            [14.8, 15.0, -5.1, -4.9, ground_z, 3.0],    # pole
            [6.0, 6.4, 4.6, 5.0, ground_z, 2.2],        # post, near left
        ]
    )
    boxes[:, 0:2] -= shift

    elev = np.radians(np.linspace(2.0, -24.8, n_beams))
    azim = np.radians(np.arange(-45.0, 45.0, az_step_deg))
    ee, aa = np.meshgrid(elev, azim, indexing="ij")
    dirs = np.stack(
        [np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=-1
    ).reshape(-1, 3)

    t_hit = np.full(len(dirs), np.inf)
    dz = dirs[:, 2]
    falling = dz < -1e-9
    t_hit[falling] = ground_z / dz[falling]

    for xmin, xmax, ymin, ymax, zmin, zmax in boxes:
        lo = np.array([xmin, ymin, zmin])
        hi = np.array([xmax, ymax, zmax])
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - 0.0) / dirs
            t2 = (hi - 0.0) / dirs
        near = np.nanmax(np.minimum(t1, t2), axis=1)
        far = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (near <= far) & (far > 0)
        t_box = np.where(near > 0, near, far)
        t_hit[hit] = np.minimum(t_hit[hit], t_box[hit])

    keep = np.isfinite(t_hit) & (t_hit > 2.0) & (t_hit < 80.0)
    ranges = t_hit[keep] + rng.normal(0.0, 0.008, size=keep.sum())
    return dirs[keep] * ranges[:, None]


def main() -> None:
    ROOT.mkdir(parents=True, exist_ok=True)
    (ROOT / "calib_cam_to_cam.txt").write_text(CALIB_CAM_TO_CAM)
    (ROOT / "calib_velo_to_cam.txt").write_text(CALIB_VELO_TO_CAM)
    (ROOT / "calib_imu_to_velo.txt").write_text(CALIB_IMU_TO_VELO)
    calib = read_calib(
        ROOT / "calib_cam_to_cam.txt",
        ROOT / "calib_velo_to_cam.txt",
        ROOT / "calib_imu_to_velo.txt",
    )

    for sub in ("oxts", "velodyne", "proj_depth/velodyne_raw/image_02",
                "proj_depth/groundtruth/image_02"):
        (ROOT / sub).mkdir(parents=True, exist_ok=True)

    frames = []
    for i in range(3):
        rng = np.random.default_rng((20260814, i))
        (ROOT / "oxts" / f"{i:010d}.txt").write_text(oxts_line(i) + "\n")

        sparse_pts = ray_cast_scene(i, n_beams=64, az_step_deg=0.095, rng=rng)
        sparse = project_lidar(PointCloud(sparse_pts), calib)
        sparse_rel = f"proj_depth/velodyne_raw/image_02/{i:010d}.png"
        write_depth_png(ROOT / sparse_rel, sparse)
        if i == 0:
            write_velodyne_bin(
                ROOT / "velodyne" / f"{i:010d}.bin",
                PointCloud(sparse_pts),
                reflectance=rng.uniform(0.0, 1.0, size=len(sparse_pts)),
            )
            print(f"frame {i}: scan {len(sparse_pts)} pts, "
                  f"projected density {sparse.density:.4f}")
            assert 0.045 <= sparse.density <= 0.075, sparse.density

        dense_pts = ray_cast_scene(i, n_beams=160, az_step_deg=0.045, rng=rng)
        gt = project_lidar(PointCloud(dense_pts), calib)
        gt_rel = None
        if i < 2:  # last frame has no ground truth, like a test split
            gt_rel = f"proj_depth/groundtruth/image_02/{i:010d}.png"
            write_depth_png(ROOT / gt_rel, gt)

        entry = {"index": i, "sparse": sparse_rel, "oxts": oxts_line(i)}
        if gt_rel:
            entry["gt"] = gt_rel
        frames.append(entry)

    manifest = {
        "name": "fixture_drive",
        "camera": 2,
        "calib": {
            "cam_to_cam": "calib_cam_to_cam.txt",
            "velo_to_cam": "calib_velo_to_cam.txt",
            "imu_to_velo": "calib_imu_to_velo.txt",
        },
        "frames": frames,
    }
    (ROOT / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"fixture written under {ROOT}")


if __name__ == "__main__":
    main()
