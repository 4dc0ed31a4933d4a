#!/usr/bin/env python3
"""Generate the shared fixture set for the external-bindings test suite.

Inputs and expected outputs land in bindings/fixtures/.  Expected arrays are
computed with the library itself, so a binding that shells through the CLI
must reproduce them bit-for-bit.  Deterministic: re-running rewrites
identical bytes.
"""
import json
import shutil
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from depthrec.evaluation import metrics
from depthrec.geometry import (
    DepthMap,
    Intrinsics,
    RigidTransform,
    rotation_y,
    warp_backward,
    warp_depth,
)
from depthrec.kitti_io import SequenceIndex, project_lidar, read_velodyne_bin

FIX = ROOT / "bindings" / "fixtures"
K = Intrinsics(fx=60.0, fy=60.0, cx=10.0, cy=6.0, width=20, height=12)


def smooth_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return (
        12.0
        + 2.0 * np.sin(u / w * 2.5 + rng.uniform(0, 6))
        + 1.5 * np.cos(v / h * 3.1 + rng.uniform(0, 6))
    )


def write_warp_case() -> None:
    rng = np.random.default_rng(2024)
    vals = np.where(rng.random((12, 20)) < 0.6, rng.uniform(2.0, 9.0, (12, 20)), 0.0)
    pose = RigidTransform(rotation_y(0.03), np.array([0.2, -0.05, 0.1]))

    np.save(FIX / "warp_depth.npy", vals)
    np.save(FIX / "warp_pose.npy", pose.matrix)
    np.save(FIX / "identity_pose.npy", np.eye(4))
    (FIX / "warp_intrinsics.json").write_text(
        json.dumps({"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy}) + "\n"
    )

    warped, corr = warp_depth(DepthMap(vals), K, pose)
    exp = FIX / "expected"
    np.save(exp / "warp.warped.npy", warped.values)
    np.save(exp / "warp.winner.npy", corr.winner_src)
    np.save(exp / "warp.trow.npy", corr.src_target_row)
    np.save(exp / "warp.tcol.npy", corr.src_target_col)
    np.save(exp / "warp.jacobian.npy", corr.src_depth_jacobian)
    (exp / "warp.meta.json").write_text(
        json.dumps({"dropped": corr.dropped}) + "\n"
    )

    grad_out = rng.standard_normal((12, 20))
    np.save(FIX / "grad_out.npy", grad_out)
    np.save(exp / "grad_in.npy", warp_backward(grad_out, corr))


def write_fd_case() -> None:
    """A dense smooth map plus probe pixels whose winners stay stable
    under +-h perturbation, for re-running the gradient check externally."""
    rng = np.random.default_rng(7)
    vals = smooth_field(rng, 12, 20)
    pose = RigidTransform(rotation_y(-0.02), np.array([-0.15, 0.08, 0.12]))
    grad_out = rng.standard_normal((12, 20))
    h_step = 1e-3

    _, base = warp_depth(DepthMap(vals), K, pose)
    probes = []
    for v, u in rng.permutation(np.argwhere(vals > 0))[:200]:
        plus, minus = vals.copy(), vals.copy()
        plus[v, u] += h_step
        minus[v, u] -= h_step
        _, cp = warp_depth(DepthMap(plus), K, pose)
        _, cm = warp_depth(DepthMap(minus), K, pose)
        if np.array_equal(cp.winner_src, base.winner_src) and np.array_equal(
            cm.winner_src, base.winner_src
        ):
            probes.append([int(v), int(u)])
        if len(probes) == 10:
            break

    np.save(FIX / "fd_depth.npy", vals)
    np.save(FIX / "fd_pose.npy", pose.matrix)
    np.save(FIX / "fd_grad_out.npy", grad_out)
    (FIX / "fd_meta.json").write_text(
        json.dumps({"h_step": h_step, "probes": probes}) + "\n"
    )


def write_metrics_case() -> None:
    rng = np.random.default_rng(31)
    gt = np.where(rng.random((10, 14)) < 0.7, rng.uniform(1.0, 30.0, (10, 14)), 0.0)
    pred = np.maximum(gt + rng.normal(0.0, 0.8, gt.shape), 0.05)
    np.save(FIX / "metrics_pred.npy", pred)
    np.save(FIX / "metrics_gt.npy", gt)
    report = metrics(DepthMap(pred), DepthMap(np.maximum(gt, 0.0)))
    (FIX / "expected" / "metrics.json").write_text(report.to_json() + "\n")


def write_project_case() -> None:
    src = ROOT / "tests" / "data" / "kitti"
    dst = FIX / "kitti"
    dst.mkdir(parents=True, exist_ok=True)
    for name in ("calib_cam_to_cam.txt", "calib_velo_to_cam.txt", "calib_imu_to_velo.txt"):
        shutil.copyfile(src / name, dst / name)
    shutil.copyfile(src / "velodyne" / "0000000000.bin", dst / "scan.bin")
    shutil.copyfile(
        src / "proj_depth" / "velodyne_raw" / "image_02" / "0000000000.png",
        dst / "sparse.png",
    )
    oxts_line = (src / "oxts" / "0000000000.txt").read_text().strip()
    manifest = {
        "name": "bindings-fixture",
        "camera": 2,
        "calib": {
            "cam_to_cam": "calib_cam_to_cam.txt",
            "velo_to_cam": "calib_velo_to_cam.txt",
            "imu_to_velo": "calib_imu_to_velo.txt",
        },
        "frames": [
            {"index": 0, "sparse": "sparse.png", "gt": None, "image": None,
             "oxts": oxts_line}
        ],
    }
    (dst / "manifest.json").write_text(json.dumps(manifest, indent=1))

    seq = SequenceIndex.open(dst / "manifest.json")
    depth = project_lidar(read_velodyne_bin(dst / "scan.bin"), seq.calib)
    np.save(FIX / "expected" / "project.npy", depth.values)


def main() -> int:
    (FIX / "expected").mkdir(parents=True, exist_ok=True)
    write_warp_case()
    write_fd_case()
    write_metrics_case()
    write_project_case()
    n = len(list(FIX.rglob("*")))
    print(f"wrote {n} fixture entries under {FIX}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
