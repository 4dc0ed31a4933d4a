/**
 * Stateless kernel bindings: forward depth warp, its backward pass, lidar
 * projection, and depth metrics, executed by the host toolkit's CLI with
 * arrays exchanged as .npy files.
 *
 * Inputs are plain typed arrays (always contiguous), so the "one documented
 * copy" is the file serialization itself.  Every call spawns one process and
 * cleans its temp directory; callers may invoke from multiple threads.
 */
import { spawnSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { NpyArray, readFloat64, readInt64, writeNpy } from "./npy.js";

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

/** Row-major (rows x cols) float64 image. */
export interface Matrix {
  data: Float64Array;
  rows: number;
  cols: number;
}

/** Row-major (rows x cols) int64 index image. */
export interface IndexMatrix {
  data: BigInt64Array;
  rows: number;
  cols: number;
}

export interface WarpResult {
  warped: Matrix;
  /** flat row-major source index that won each target pixel, -1 for holes */
  winner: IndexMatrix;
  /** per-source rasterized target coordinates, -1 where dropped */
  targetRow: IndexMatrix;
  targetCol: IndexMatrix;
  /** d(warped depth)/d(source depth) per source pixel, 0 where dropped */
  jacobian: Matrix;
  dropped: number;
}

export interface MetricsReport {
  rmse_mm: number;
  mae_mm: number;
  irmse_per_km: number;
  imae_per_km: number;
  valid_count: number;
}

/** Override with DEPTHREC_CLI (e.g. "python3 -m depthrec.cli"). */
function cliCommand(): string[] {
  const env = process.env.DEPTHREC_CLI;
  if (env && env.trim().length > 0) return env.trim().split(/\s+/);
  return ["depthrec"];
}

function run(args: string[]): string {
  const [cmd, ...prefix] = cliCommand();
  const res = spawnSync(cmd, [...prefix, ...args], { encoding: "utf8" });
  if (res.error) {
    throw new Error(`failed to spawn ${cmd}: ${res.error.message}`);
  }
  if (res.status !== 0) {
    throw new Error(
      `${cmd} ${args[0]} exited with ${res.status}: ${res.stderr.trim()}`,
    );
  }
  return res.stdout;
}

function checkMatrix(name: string, m: Matrix | IndexMatrix): void {
  if (m.rows <= 0 || m.cols <= 0) {
    throw new Error(`${name}: rows/cols must be positive, got ${m.rows}x${m.cols}`);
  }
  if (m.data.length !== m.rows * m.cols) {
    throw new Error(
      `${name}: buffer holds ${m.data.length} elements, shape needs ${m.rows * m.cols}`,
    );
  }
}

function asMatrix(arr: NpyArray<Float64Array>): Matrix {
  if (arr.shape.length !== 2) {
    throw new Error(`expected a 2-d array, got shape (${arr.shape.join(", ")})`);
  }
  return { data: arr.data, rows: arr.shape[0], cols: arr.shape[1] };
}

function asIndexMatrix(arr: NpyArray<BigInt64Array>): IndexMatrix {
  if (arr.shape.length !== 2) {
    throw new Error(`expected a 2-d array, got shape (${arr.shape.join(", ")})`);
  }
  return { data: arr.data, rows: arr.shape[0], cols: arr.shape[1] };
}

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "depthrec-bind-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

function writePose(path: string, pose: Float64Array): void {
  if (pose.length !== 16) {
    throw new Error(`pose: expected 16 elements (4x4), got ${pose.length}`);
  }
  writeNpy(path, { data: pose, shape: [4, 4] });
}

/** Forward-warp a depth image by a rigid pose; min-depth wins per target. */
export function boundWarp(
  depth: Matrix,
  k: Intrinsics,
  pose: Float64Array,
): WarpResult {
  checkMatrix("depth", depth);
  return withTempDir((dir) => {
    const depthPath = join(dir, "depth.npy");
    const posePath = join(dir, "pose.npy");
    const out = join(dir, "out");
    writeNpy(depthPath, { data: depth.data, shape: [depth.rows, depth.cols] });
    writePose(posePath, pose);
    const stdout = run([
      "kernel", "warp",
      "--depth", depthPath,
      "--pose", posePath,
      "--fx", String(k.fx),
      "--fy", String(k.fy),
      "--cx", String(k.cx),
      "--cy", String(k.cy),
      "--out", out,
    ]);
    const meta = JSON.parse(stdout) as { dropped: number };
    return {
      warped: asMatrix(readFloat64(`${out}.warped.npy`)),
      winner: asIndexMatrix(readInt64(`${out}.winner.npy`)),
      targetRow: asIndexMatrix(readInt64(`${out}.trow.npy`)),
      targetCol: asIndexMatrix(readInt64(`${out}.tcol.npy`)),
      jacobian: asMatrix(readFloat64(`${out}.jacobian.npy`)),
      dropped: meta.dropped,
    };
  });
}

/** Route target-pixel gradients back to the source pixels that won. */
export function boundWarpBackward(
  gradOut: Matrix,
  corr: WarpResult,
): Matrix {
  checkMatrix("gradOut", gradOut);
  if (gradOut.rows !== corr.warped.rows || gradOut.cols !== corr.warped.cols) {
    throw new Error(
      `gradOut is ${gradOut.rows}x${gradOut.cols}, warp was ` +
        `${corr.warped.rows}x${corr.warped.cols}`,
    );
  }
  return withTempDir((dir) => {
    const prefix = join(dir, "corr");
    const shape = [corr.warped.rows, corr.warped.cols];
    writeNpy(`${prefix}.warped.npy`, { data: corr.warped.data, shape });
    writeNpy(`${prefix}.winner.npy`, { data: corr.winner.data, shape });
    writeNpy(`${prefix}.trow.npy`, { data: corr.targetRow.data, shape });
    writeNpy(`${prefix}.tcol.npy`, { data: corr.targetCol.data, shape });
    writeNpy(`${prefix}.jacobian.npy`, { data: corr.jacobian.data, shape });
    const gradPath = join(dir, "grad.npy");
    const outPath = join(dir, "grad_in.npy");
    writeNpy(gradPath, { data: gradOut.data, shape });
    run([
      "kernel", "warp-backward",
      "--grad", gradPath,
      "--corr", prefix,
      "--out", outPath,
    ]);
    return asMatrix(readFloat64(outPath));
  });
}

/** Project a raw lidar scan into the camera of a sequence manifest. */
export function boundProjectLidar(
  scanPath: string,
  manifestPath: string,
): Matrix {
  return withTempDir((dir) => {
    const outPath = join(dir, "sparse.npy");
    run([
      "kernel", "project",
      "--scan", scanPath,
      "--manifest", manifestPath,
      "--out", outPath,
    ]);
    return asMatrix(readFloat64(outPath));
  });
}

/** Depth errors over valid ground-truth pixels (mm and 1/km). */
export function boundMetrics(pred: Matrix, gt: Matrix): MetricsReport {
  checkMatrix("pred", pred);
  checkMatrix("gt", gt);
  if (pred.rows !== gt.rows || pred.cols !== gt.cols) {
    throw new Error(
      `pred is ${pred.rows}x${pred.cols}, gt is ${gt.rows}x${gt.cols}`,
    );
  }
  return withTempDir((dir) => {
    const predPath = join(dir, "pred.npy");
    const gtPath = join(dir, "gt.npy");
    writeNpy(predPath, { data: pred.data, shape: [pred.rows, pred.cols] });
    writeNpy(gtPath, { data: gt.data, shape: [gt.rows, gt.cols] });
    const stdout = run([
      "kernel", "metrics",
      "--pred", predPath,
      "--gt", gtPath,
    ]);
    return JSON.parse(stdout) as MetricsReport;
  });
}
