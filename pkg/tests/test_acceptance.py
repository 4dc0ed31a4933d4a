"""Acceptance gate: one test per release criterion.

Run `pytest tests/test_acceptance.py -v` for a one-line pass/fail report per
criterion.  Tolerances are stated inline next to each assertion.
"""
import time

import numpy as np
import pytest
from oracles import block_mae_diff_loops, warp_depth_sequential, warp_gradient_fd

from conftest import random_depth_map, smooth_depth_map
from depthrec.completion import (
    PipelineConfig,
    frames_from_synthetic,
    fuse_temporal,
    run_sequence,
    step,
)
from depthrec.evaluation import (
    block_error_diff,
    metrics,
    per_frame_rmse,
)
from depthrec.geometry import (
    DepthMap,
    Intrinsics,
    RigidTransform,
    rotation_x,
    rotation_y,
    rotation_z,
    warp_backward,
    warp_depth,
)
from depthrec.kitti_io import (
    SequenceIndex,
    oxts_to_world_pose,
    parse_oxts_line,
    project_lidar,
    read_depth_png,
    read_oxts_file,
    read_velodyne_bin,
    relative_camera_pose,
    write_depth_png,
)
from depthrec.synth import Trajectory, forward_trajectory, make_sequence, street_scene

K_SYNTH = Intrinsics(fx=300.0, fy=300.0, cx=80.0, cy=60.0, width=160, height=120)
CFG = PipelineConfig()


def _random_pose(rng: np.random.Generator) -> RigidTransform:
    rot = (
        rotation_z(rng.uniform(-0.05, 0.05))
        @ rotation_y(rng.uniform(-0.05, 0.05))
        @ rotation_x(rng.uniform(-0.05, 0.05))
    )
    return RigidTransform(rot, rng.uniform(-0.3, 0.3, 3))


def _turning_trajectory(n: int, step_m: float, dyaw: float) -> Trajectory:
    poses, pos, yaw = [], np.zeros(3), 0.0
    for _ in range(n):
        poses.append(RigidTransform(rotation_y(yaw), pos.copy()))
        pos = pos + step_m * np.array([np.sin(yaw), 0.0, np.cos(yaw)])
        yaw += dyaw
    return Trajectory(tuple(poses))


@pytest.fixture(scope="module")
def synthetic_suite():
    """Six scenes x 8 frames at 6% density: the shared evaluation corpus."""
    suite = []
    for s in range(6):
        seq = make_sequence(
            street_scene(seed=s),
            forward_trajectory(8, step=0.12),
            K_SYNTH,
            density=0.06,
            seed=100 + s,
        )
        suite.append(frames_from_synthetic(seq))
    return suite


@pytest.fixture(scope="module")
def suite_temporal_reports(synthetic_suite):
    return [
        run_sequence(k, frames, CFG, temporal=True)[1]
        for k, frames in synthetic_suite
    ]


def test_warp_identity_bit_exact_100_maps_under_5s(small_k):
    """warp(d, K, I) == d bit-for-bit; 100 random maps in < 5 s."""
    identity = RigidTransform(np.eye(3), np.zeros(3))
    rng = np.random.default_rng(0)
    start = time.monotonic()
    for _ in range(100):
        d = random_depth_map(rng, small_k.height, small_k.width)
        warped, corr = warp_depth(d, small_k, identity)
        np.testing.assert_array_equal(warped.values, d.values)
        assert corr.dropped == 0
    assert time.monotonic() - start < 5.0


def test_warp_matches_sequential_oracle_50_cases(small_k):
    """Vectorized warp is bit-identical to the scalar reference loop."""
    rng = np.random.default_rng(1)
    for _ in range(50):
        d = random_depth_map(rng, small_k.height, small_k.width)
        pose = _random_pose(rng)
        warped, corr = warp_depth(d, small_k, pose)
        ref_depth, ref_winner = warp_depth_sequential(d, small_k, pose)
        np.testing.assert_array_equal(warped.values, ref_depth)
        np.testing.assert_array_equal(corr.winner_src, ref_winner)


def test_warp_render_consistency_10_scenes():
    """Warped GT_{t-1} vs rendered GT_t: >= 90% of mutually visible pixels
    within 0.1 m, median |error| < 0.05 m, forward and turning motion."""
    for s in range(10):
        if s % 2 == 0:
            traj = forward_trajectory(3, step=0.12)
        else:
            traj = _turning_trajectory(3, step_m=0.12, dyaw=np.radians(0.5))
        seq = make_sequence(
            street_scene(seed=s), traj, K_SYNTH, density=0.06, seed=50 + s
        )
        for i in range(2):
            warped, _ = warp_depth(seq.gt[i], K_SYNTH, seq.relative_pose(i, i + 1))
            both = (warped.values > 0) & (seq.gt[i + 1].values > 0)
            err = np.abs(warped.values - seq.gt[i + 1].values)[both]
            assert (err <= 0.1).mean() >= 0.90
            assert np.median(err) < 0.05


def test_warp_gradient_matches_finite_differences(small_k):
    """Analytic backward pass vs central differences: relative error
    <= 1e-4 on >= 99% of stable-winner pixels, 20 random cases."""
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = smooth_depth_map(rng, small_k.height, small_k.width)
        pose = _random_pose(rng)
        grad_out = rng.standard_normal((small_k.height, small_k.width))
        _, corr = warp_depth(d, small_k, pose)
        grad_in = warp_backward(grad_out, corr)
        grad_fd, stable = warp_gradient_fd(d, small_k, pose, grad_out)
        denom = np.maximum(np.abs(grad_fd[stable]), 1.0)
        rel = np.abs(grad_in[stable] - grad_fd[stable]) / denom
        assert (rel <= 1e-4).mean() >= 0.99


def test_pose_math_identity_north_step_inverse(kitti_root):
    """Zero motion -> identity within 1e-9; a 1e-5 degree latitude step at
    49 degrees -> 1.1131 m +- 0.1%; P_ab . P_ba = I within 1e-6."""
    calib = SequenceIndex.open(kitti_root / "manifest.json").calib
    base = read_oxts_file(kitti_root / "oxts" / "0000000000.txt")
    lat0 = base.lat

    same = relative_camera_pose(
        oxts_to_world_pose(base, lat0), oxts_to_world_pose(base, lat0), calib
    )
    np.testing.assert_allclose(same.matrix, np.eye(4), atol=1e-9)

    line = (kitti_root / "oxts" / "0000000000.txt").read_text().split()
    line[0] = repr(49.0 + 1e-5)
    stepped = parse_oxts_line(" ".join(["49.0"] + line[1:]))
    moved = parse_oxts_line(" ".join(line))
    a = oxts_to_world_pose(stepped, 49.0)
    b = oxts_to_world_pose(moved, 49.0)
    dist = float(np.linalg.norm(b.translation - a.translation))
    assert dist == pytest.approx(1.1131, rel=1e-3)

    rec_b = read_oxts_file(kitti_root / "oxts" / "0000000002.txt")
    p_ab = relative_camera_pose(
        oxts_to_world_pose(base, lat0), oxts_to_world_pose(rec_b, lat0), calib
    )
    p_ba = relative_camera_pose(
        oxts_to_world_pose(rec_b, lat0), oxts_to_world_pose(base, lat0), calib
    )
    np.testing.assert_allclose(
        p_ab.compose(p_ba).matrix, np.eye(4), atol=1e-6
    )


def test_metrics_hand_cases_and_rmse_dominates_mae():
    """gt 10 m / pred 11 m -> RMSE 1000 mm and iRMSE 9.0909.. 1/km to 1e-9
    relative; errors (+1, +3) -> RMSE 2236.07.. mm; rmse >= mae on 1000
    random maps."""
    one = metrics(DepthMap(np.array([[11.0]])), DepthMap(np.array([[10.0]])))
    assert one.rmse == pytest.approx(1000.0, rel=1e-9)
    assert one.mae == pytest.approx(1000.0, rel=1e-9)
    assert one.irmse == pytest.approx(1000.0 / 110.0, rel=1e-9)
    assert one.imae == pytest.approx(1000.0 / 110.0, rel=1e-9)

    two = metrics(
        DepthMap(np.array([[11.0, 13.0]])), DepthMap(np.array([[10.0, 10.0]]))
    )
    assert two.rmse == pytest.approx(2236.0679774997897, rel=1e-9)
    assert two.mae == pytest.approx(2000.0, rel=1e-9)

    rng = np.random.default_rng(3)
    for _ in range(1000):
        gt = random_depth_map(rng, 8, 8, density=0.8, lo=1.0, hi=40.0)
        pred = DepthMap(np.maximum(gt.values + rng.normal(0, 1, (8, 8)), 0.1))
        r = metrics(pred, gt)
        assert r.rmse >= r.mae


def test_temporal_beats_non_temporal_20_frames():
    """20-frame static scene at 6% sparsity: temporal RMSE <= non-temporal
    for every frame >= 3, mean over frames 3-20 lower by >= 10%, frame 1
    bit-identical."""
    seq = make_sequence(
        street_scene(seed=7),
        forward_trajectory(20, step=0.12),
        K_SYNTH,
        density=0.06,
        seed=3,
    )
    k, frames = frames_from_synthetic(seq)
    preds_n, reps_n = run_sequence(k, frames, CFG, temporal=False)
    preds_t, reps_t = run_sequence(k, frames, CFG, temporal=True)
    np.testing.assert_array_equal(preds_n[0].values, preds_t[0].values)
    rn = np.array([r.rmse for r in reps_n])
    rt = np.array([r.rmse for r in reps_t])
    assert (rt[2:] <= rn[2:]).all()
    assert rt[2:].mean() <= 0.90 * rn[2:].mean()


def test_per_frame_rmse_non_increasing_frames_1_to_5(suite_temporal_reports):
    """Aggregated temporal RMSE over the suite decreases through frame 5."""
    curve = per_frame_rmse(suite_temporal_reports)
    values = [v for _, v in curve[:5]]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_fused_density_triples_by_frame_5(synthetic_suite):
    """Carried state raises the frame-5 seed density to >= 3x the lidar's."""
    for k, frames in synthetic_suite:
        state = None
        for i in range(5):
            f = frames[i]
            if i == 4:
                fused, _ = fuse_temporal(f.sparse, state, CFG)
                assert fused.density >= 3.0 * f.sparse.density
            _, state = step(f.sparse, f.guide, state, f.pose_to_next, k, CFG)


def test_png_quantization_and_lidar_density(kitti_root, tmp_path):
    """PNG round trip error <= 1/512 m; bundled scan projects to a sparse
    map covering 4-8% of the image."""
    rng = np.random.default_rng(4)
    vals = np.where(
        rng.random((40, 60)) < 0.7, rng.uniform(0.01, 255.9, (40, 60)), 0.0
    )
    path = tmp_path / "q.png"
    write_depth_png(path, DepthMap(vals))
    back = read_depth_png(path).values
    assert np.abs(back - vals).max() <= 1.0 / 512.0
    np.testing.assert_array_equal(back > 0, vals > 0)

    seq = SequenceIndex.open(kitti_root / "manifest.json")
    scan = read_velodyne_bin(kitti_root / "velodyne" / "0000000000.bin")
    sparse = project_lidar(scan, seq.calib)
    assert 0.04 <= sparse.density <= 0.08


def test_block_diff_antisymmetry_and_brute_force():
    """diff(A,B) == -diff(B,A) exactly on 20 random cases; block values
    match the scalar oracle on a 16x16 case."""
    rng = np.random.default_rng(5)
    for _ in range(20):
        gt = random_depth_map(rng, 24, 33, density=0.6, lo=1.0, hi=30.0)
        a = DepthMap(np.maximum(gt.values + rng.normal(0, 1, (24, 33)), 0.1))
        b = DepthMap(np.maximum(gt.values + rng.normal(0, 1, (24, 33)), 0.1))
        ab = block_error_diff(a, b, gt, block=8)
        ba = block_error_diff(b, a, gt, block=8)
        np.testing.assert_array_equal(ab.diff, -ba.diff)
        np.testing.assert_array_equal(ab.nonempty, ba.nonempty)

    gt = random_depth_map(rng, 16, 16, density=0.5, lo=2.0, hi=20.0)
    a = DepthMap(np.maximum(gt.values + rng.normal(0, 0.5, (16, 16)), 0.1))
    b = DepthMap(np.maximum(gt.values + rng.normal(0, 0.5, (16, 16)), 0.1))
    d = block_error_diff(a, b, gt, block=8)
    ref_diff, ref_nonempty = block_mae_diff_loops(
        a.values, b.values, gt.values, block=8
    )
    np.testing.assert_allclose(d.diff, ref_diff, atol=1e-9)
    np.testing.assert_array_equal(d.nonempty, ref_nonempty)
