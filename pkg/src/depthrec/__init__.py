"""Temporal depth completion toolkit.

Geometric core (forward warping with min-depth scatter and an analytic
backward pass), KITTI-format ingestion, a synthetic scene oracle, a
non-learned recurrent completion pipeline, and the standard evaluation
metrics, all behind one CLI.
"""

from depthrec.completion import (
    FrameData,
    PipelineConfig,
    TemporalState,
    cspn_refine,
    frames_from_index,
    frames_from_synthetic,
    fuse_temporal,
    run_sequence,
    spatial_complete,
    step,
)
from depthrec.evaluation import (
    BlockDiffMap,
    MetricsReport,
    aggregate_block_diffs,
    block_error_diff,
    metrics,
    per_frame_rmse,
    pooled_metrics,
    render_diff_png,
    rmse_curve_csv,
    turbo_colormap,
)
from depthrec.geometry import (
    DepthMap,
    Intrinsics,
    PointCloud,
    RigidTransform,
    WarpCorrespondence,
    project,
    unproject,
    warp_backward,
    warp_depth,
)
from depthrec.kitti_io import (
    CalibBundle,
    SequenceIndex,
    bottom_center_crop,
    crop_intrinsics,
    project_lidar,
    read_depth_png,
    read_velodyne_bin,
    write_depth_png,
)
from depthrec.synth import (
    SceneSpec,
    Trajectory,
    forward_trajectory,
    make_sequence,
    render_depth,
    render_intensity,
    sample_lidar_pattern,
    street_scene,
    write_kitti_layout,
)

__version__ = "0.1.0"

__all__ = [
    "BlockDiffMap",
    "CalibBundle",
    "DepthMap",
    "FrameData",
    "Intrinsics",
    "MetricsReport",
    "PipelineConfig",
    "PointCloud",
    "RigidTransform",
    "SceneSpec",
    "SequenceIndex",
    "TemporalState",
    "Trajectory",
    "WarpCorrespondence",
    "aggregate_block_diffs",
    "block_error_diff",
    "bottom_center_crop",
    "crop_intrinsics",
    "cspn_refine",
    "forward_trajectory",
    "frames_from_index",
    "frames_from_synthetic",
    "fuse_temporal",
    "make_sequence",
    "metrics",
    "per_frame_rmse",
    "pooled_metrics",
    "project",
    "project_lidar",
    "read_depth_png",
    "read_velodyne_bin",
    "render_depth",
    "render_diff_png",
    "render_intensity",
    "rmse_curve_csv",
    "run_sequence",
    "sample_lidar_pattern",
    "spatial_complete",
    "step",
    "street_scene",
    "turbo_colormap",
    "unproject",
    "warp_backward",
    "warp_depth",
    "write_depth_png",
    "write_kitti_layout",
    "__version__",
]
