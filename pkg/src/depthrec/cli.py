"""Command-line front end: one binary, subcommands for every pipeline stage.

Everything is deterministic given its flags; machine-readable output goes to
stdout as JSON under --json, diagnostics go to stderr, and the exit code is
0 on success, 1 on runtime failure, 2 on usage errors.

The `kernel` group exchanges raw arrays as .npy files so external runtimes
can call individual operators without linking any Python: `kernel warp`
writes `<prefix>.warped/.winner/.trow/.tcol/.jacobian.npy`, and
`kernel warp-backward` consumes the same prefix.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .completion import (
    FrameData,
    PipelineConfig,
    frames_from_index,
    run_sequence,
)
from .evaluation import (
    MetricsReport,
    block_error_diff,
    metrics,
    metrics_table,
    per_frame_rmse,
    pooled_metrics,
    render_diff_png,
    rmse_curve_csv,
)
from .geometry import (
    DepthMap,
    Intrinsics,
    RigidTransform,
    WarpCorrespondence,
    warp_backward,
    warp_depth,
)
from .kitti_io import (
    SequenceIndex,
    bottom_center_crop,
    crop_intrinsics,
    project_lidar,
    read_depth_png,
    read_velodyne_bin,
    write_depth_png,
)
from .synth import (
    SceneSpec,
    forward_trajectory,
    make_sequence,
    street_scene,
    write_kitti_layout,
)

CROP_W, CROP_H = 1216, 352
# camera used by `synth`: small enough that a full synthesize-complete-eval
# round trip stays interactive
SYNTH_K = Intrinsics(fx=300.0, fy=300.0, cx=80.0, cy=60.0, width=160, height=120)
MAX_PNG_DEPTH = 255.99  # beyond-range depths are written as missing returns


def _clip_for_png(depth: DepthMap) -> DepthMap:
    vals = depth.values.copy()
    vals[vals >= MAX_PNG_DEPTH] = 0.0
    return DepthMap(vals)


def _matched_png_pairs(pred_dir: Path, gt_dir: Path) -> List[Tuple[str, Path, Path]]:
    preds = {p.name: p for p in sorted(pred_dir.glob("*.png"))}
    gts = {p.name: p for p in sorted(gt_dir.glob("*.png"))}
    names = sorted(set(preds) & set(gts))
    if not names:
        raise FileNotFoundError(
            f"no matching .png names between {pred_dir} and {gt_dir}"
        )
    return [(n, preds[n], gts[n]) for n in names]


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(a: argparse.Namespace) -> int:
    if a.scene is not None:
        scene = SceneSpec.from_dict(json.loads(Path(a.scene).read_text()))
    else:
        scene = street_scene(seed=a.scene_seed)
    seq = make_sequence(
        scene,
        forward_trajectory(a.frames, a.step),
        SYNTH_K,
        density=a.density,
        seed=a.seed,
        beam_rows=a.beam_rows,
    )
    manifest = write_kitti_layout(seq, a.out, name=a.name)
    if a.json:
        print(json.dumps({"manifest": str(manifest), "frames": a.frames}))
    else:
        print(manifest)
    return 0


def _rotation_angle_deg(r: np.ndarray) -> float:
    c = (np.trace(r) - 1.0) / 2.0
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


def cmd_poses(a: argparse.Namespace) -> int:
    seq = SequenceIndex.open(a.manifest)
    rel = [seq.relative_pose(i, i + 1) for i in range(len(seq) - 1)]
    if a.json:
        print(
            json.dumps(
                {
                    "name": seq.name,
                    "frames": len(seq),
                    "relative": [p.matrix.tolist() for p in rel],
                }
            )
        )
    else:
        print(f"{seq.name}: {len(seq)} frames")
        for i, p in enumerate(rel):
            t = float(np.linalg.norm(p.translation))
            print(
                f"  {i}->{i + 1}: translation {t:.4f} m, "
                f"rotation {_rotation_angle_deg(p.rotation):.4f} deg"
            )
    return 0


def cmd_warp(a: argparse.Namespace) -> int:
    seq = SequenceIndex.open(a.manifest)
    depth = read_depth_png(a.input)
    k = seq.calib.intrinsics
    if a.crop:
        depth = bottom_center_crop(depth, CROP_W, CROP_H)
        k = crop_intrinsics(k, CROP_W, CROP_H)
    if a.from_frame == a.to_frame:
        pose = RigidTransform(np.eye(3), np.zeros(3))
    else:
        pose = seq.relative_pose(a.from_frame, a.to_frame)
    warped, corr = warp_depth(depth, k, pose)
    write_depth_png(a.output, _clip_for_png(warped))
    if a.json:
        print(json.dumps({"output": str(a.output), "dropped": corr.dropped}))
    else:
        print(a.output)
    return 0


def _crop_frames(
    k: Intrinsics, frames: List[FrameData]
) -> Tuple[Intrinsics, List[FrameData]]:
    cropped = [
        FrameData(
            sparse=bottom_center_crop(f.sparse, CROP_W, CROP_H),
            guide=bottom_center_crop(f.guide, CROP_W, CROP_H),
            gt=bottom_center_crop(f.gt, CROP_W, CROP_H) if f.gt else None,
            pose_to_next=f.pose_to_next,
        )
        for f in frames
    ]
    return crop_intrinsics(k, CROP_W, CROP_H), cropped


def cmd_complete(a: argparse.Namespace) -> int:
    seq = SequenceIndex.open(a.manifest)
    cfg = PipelineConfig.from_toml(a.config) if a.config else PipelineConfig()
    k, frames = frames_from_index(seq)
    if a.crop:
        k, frames = _crop_frames(k, frames)
    preds, reports = run_sequence(k, frames, cfg, temporal=a.temporal)

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry, pred in zip(seq.frames, preds):
        write_depth_png(out / entry.sparse.name, _clip_for_png(pred))

    scored = [
        (p, f.gt) for p, f, r in zip(preds, frames, reports) if r is not None
    ]
    pooled = pooled_metrics(scored) if scored else None
    result = {
        "temporal": a.temporal,
        "config": cfg.to_dict(),
        "frames": [r.to_dict() if r else None for r in reports],
        "pooled": pooled.to_dict() if pooled else None,
    }
    (out / "metrics.json").write_text(json.dumps(result, indent=1))
    if a.json:
        print(json.dumps(result))
    else:
        named = {
            f"frame {i + 1}": r for i, r in enumerate(reports) if r is not None
        }
        if pooled is not None:
            named["pooled"] = pooled
        print(metrics_table(named) if named else "no ground truth to score")
    return 0


def cmd_eval(a: argparse.Namespace) -> int:
    pairs = _matched_png_pairs(Path(a.pred), Path(a.gt))
    loaded = []
    for name, pred_path, gt_path in pairs:
        pred, gt = read_depth_png(pred_path), read_depth_png(gt_path)
        if a.crop:
            pred = bottom_center_crop(pred, CROP_W, CROP_H)
            gt = bottom_center_crop(gt, CROP_W, CROP_H)
        loaded.append((name, pred, gt))
    reports = {name: metrics(p, g) for name, p, g in loaded}
    pooled = pooled_metrics([(p, g) for _, p, g in loaded])
    if a.json:
        print(
            json.dumps(
                {
                    "frames": {n: r.to_dict() for n, r in reports.items()},
                    "pooled": pooled.to_dict(),
                }
            )
        )
    else:
        print(metrics_table({**reports, "pooled": pooled}))
    return 0


def cmd_diffmap(a: argparse.Namespace) -> int:
    d = block_error_diff(
        read_depth_png(a.pred_a),
        read_depth_png(a.pred_b),
        read_depth_png(a.gt),
        block=a.block,
    )
    render_diff_png(d, a.out, vmax_mm=a.vmax)
    if a.json:
        improved = float(d.diff[d.nonempty].mean()) if d.nonempty.any() else 0.0
        print(json.dumps({"output": str(a.out), "mean_diff_mm": improved}))
    else:
        print(a.out)
    return 0


def cmd_curve(a: argparse.Namespace) -> int:
    if len(a.pred) != len(a.gt):
        raise ValueError("--pred and --gt must be given the same number of times")
    runs: List[List[MetricsReport]] = []
    for pred_dir, gt_dir in zip(a.pred, a.gt):
        pairs = _matched_png_pairs(Path(pred_dir), Path(gt_dir))
        runs.append(
            [metrics(read_depth_png(p), read_depth_png(g)) for _, p, g in pairs]
        )
    csv = rmse_curve_csv(per_frame_rmse(runs))
    if a.out:
        Path(a.out).write_text(csv)
        print(a.out)
    else:
        print(csv, end="")
    return 0


# --------------------------------------------------------------------------
# kernel group: raw-array bridge


def _corr_paths(prefix: str) -> Dict[str, Path]:
    return {
        "warped": Path(f"{prefix}.warped.npy"),
        "winner": Path(f"{prefix}.winner.npy"),
        "trow": Path(f"{prefix}.trow.npy"),
        "tcol": Path(f"{prefix}.tcol.npy"),
        "jacobian": Path(f"{prefix}.jacobian.npy"),
    }


def cmd_kernel_warp(a: argparse.Namespace) -> int:
    depth_arr = np.load(a.depth)
    pose = RigidTransform.from_matrix(np.load(a.pose))
    h, w = depth_arr.shape
    k = Intrinsics(fx=a.fx, fy=a.fy, cx=a.cx, cy=a.cy, width=w, height=h)
    warped, corr = warp_depth(DepthMap(np.asarray(depth_arr, np.float64)), k, pose)
    paths = _corr_paths(a.out)
    np.save(paths["warped"], warped.values)
    np.save(paths["winner"], corr.winner_src)
    np.save(paths["trow"], corr.src_target_row)
    np.save(paths["tcol"], corr.src_target_col)
    np.save(paths["jacobian"], corr.src_depth_jacobian)
    print(
        json.dumps(
            {"dropped": corr.dropped, "files": {k_: str(v) for k_, v in paths.items()}}
        )
    )
    return 0


def cmd_kernel_warp_backward(a: argparse.Namespace) -> int:
    grad = np.load(a.grad)
    paths = _corr_paths(a.corr)
    trow = np.load(paths["trow"])
    tcol = np.load(paths["tcol"])
    landed = trow >= 0
    corr = WarpCorrespondence(
        winner_src=np.load(paths["winner"]),
        src_target_row=trow,
        src_target_col=tcol,
        src_target_u=np.where(landed, tcol.astype(np.float64), np.nan),
        src_target_v=np.where(landed, trow.astype(np.float64), np.nan),
        src_warped_depth=np.load(paths["warped"]),
        src_depth_jacobian=np.load(paths["jacobian"]),
        dropped=0,
    )
    np.save(a.out, warp_backward(grad, corr))
    print(json.dumps({"output": str(a.out)}))
    return 0


def cmd_kernel_project(a: argparse.Namespace) -> int:
    seq = SequenceIndex.open(a.manifest)
    depth = project_lidar(read_velodyne_bin(a.scan), seq.calib)
    if a.crop:
        depth = bottom_center_crop(depth, CROP_W, CROP_H)
    np.save(a.out, depth.values)
    print(json.dumps({"output": str(a.out), "valid": int(depth.valid_count)}))
    return 0


def cmd_kernel_metrics(a: argparse.Namespace) -> int:
    report = metrics(
        DepthMap(np.asarray(np.load(a.pred), np.float64)),
        DepthMap(np.asarray(np.load(a.gt), np.float64)),
    )
    print(report.to_json())
    return 0


# --------------------------------------------------------------------------
# parser


def _add_json(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", action="store_true", help="machine-readable stdout")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="depthrec",
        description="Temporal depth completion toolkit",
    )
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic sequence to disk")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--step", type=float, default=0.12, help="forward metres/frame")
    p.add_argument("--density", type=float, default=0.06)
    p.add_argument("--beam-rows", type=int, default=24)
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--scene", default=None, help="scene description JSON (optional)")
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--name", default="synthetic")
    _add_json(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("poses", help="relative camera poses of a sequence")
    p.add_argument("--manifest", required=True)
    _add_json(p)
    p.set_defaults(func=cmd_poses)

    p = sub.add_parser("warp", help="warp a depth PNG between two frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--from-frame", type=int, required=True)
    p.add_argument("--to-frame", type=int, required=True)
    p.add_argument("--crop", action="store_true")
    _add_json(p)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("complete", help="run the completion pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temporal", action="store_true")
    p.add_argument("--config", default=None, help="pipeline TOML")
    p.add_argument("--crop", action="store_true")
    _add_json(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--crop", action="store_true")
    _add_json(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diffmap", help="block-level error difference image")
    p.add_argument("--pred-a", required=True)
    p.add_argument("--pred-b", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--vmax", type=float, default=None, help="mm at colormap ends")
    _add_json(p)
    p.set_defaults(func=cmd_diffmap)

    p = sub.add_parser("curve", help="per-frame RMSE curve as CSV")
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--gt", action="append", required=True)
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_curve)

    kern = sub.add_parser("kernel", help="raw .npy array bridge")
    ksub = kern.add_subparsers(dest="kernel_command", required=True)

    p = ksub.add_parser("warp", help="forward warp on raw arrays")
    p.add_argument("--depth", required=True, help="(H, W) float .npy")
    p.add_argument("--pose", required=True, help="4x4 float .npy")
    p.add_argument("--fx", type=float, required=True)
    p.add_argument("--fy", type=float, required=True)
    p.add_argument("--cx", type=float, required=True)
    p.add_argument("--cy", type=float, required=True)
    p.add_argument("--out", required=True, help="output file prefix")
    p.set_defaults(func=cmd_kernel_warp)

    p = ksub.add_parser("warp-backward", help="route gradients to sources")
    p.add_argument("--grad", required=True, help="(H, W) float .npy")
    p.add_argument("--corr", required=True, help="prefix written by kernel warp")
    p.add_argument("--out", required=True, help="output .npy")
    p.set_defaults(func=cmd_kernel_warp_backward)

    p = ksub.add_parser("project", help="project a lidar scan into the camera")
    p.add_argument("--scan", required=True, help="velodyne .bin")
    p.add_argument("--manifest", required=True, help="sequence manifest for calib")
    p.add_argument("--out", required=True, help="output .npy")
    p.add_argument("--crop", action="store_true")
    p.set_defaults(func=cmd_kernel_project)

    p = ksub.add_parser("metrics", help="score two raw depth arrays")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_kernel_metrics)

    return top


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single choke point for exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
