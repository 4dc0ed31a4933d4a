import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, describe, expect, it } from "vitest";

import { readFloat64, readInt64, readNpy, writeNpy } from "../src/npy.js";

const FIXTURES = fileURLToPath(new URL("../fixtures", import.meta.url));
const dir = mkdtempSync(join(tmpdir(), "npy-test-"));

afterAll(() => rmSync(dir, { recursive: true, force: true }));

describe("npy reader", () => {
  it("reads a float64 fixture written by the host toolkit", () => {
    const arr = readFloat64(join(FIXTURES, "warp_depth.npy"));
    expect(arr.shape).toEqual([12, 20]);
    expect(arr.data.length).toBe(240);
    // sparse fixture: zeros present, all finite, no negatives
    expect(arr.data.every((v) => Number.isFinite(v) && v >= 0)).toBe(true);
  });

  it("reads an int64 fixture", () => {
    const arr = readInt64(join(FIXTURES, "expected", "warp.winner.npy"));
    expect(arr.shape).toEqual([12, 20]);
    expect(arr.data.some((v) => v === -1n)).toBe(true);
  });

  it("rejects dtype mismatches", () => {
    expect(() => readInt64(join(FIXTURES, "warp_depth.npy"))).toThrow(
      /expected int64/,
    );
  });
});

describe("npy writer", () => {
  it("round-trips float64 bit-exactly", () => {
    const data = new Float64Array([0, -0, 1.5, Math.PI, 2 ** -1074, 1e300, 7]);
    // also cover a non-trivial shape
    const path = join(dir, "f.npy");
    writeNpy(path, { data: data.subarray(0, 6), shape: [2, 3] });
    const back = readFloat64(path);
    expect(back.shape).toEqual([2, 3]);
    expect(
      Buffer.from(back.data.buffer).equals(
        Buffer.from(data.buffer, 0, 6 * 8),
      ),
    ).toBe(true);
  });

  it("round-trips int64", () => {
    const data = new BigInt64Array([-1n, 0n, 239n, 2n ** 40n]);
    const path = join(dir, "i.npy");
    writeNpy(path, { data, shape: [4] });
    const back = readNpy(path);
    expect(back.shape).toEqual([4]);
    expect([...(back.data as BigInt64Array)]).toEqual([...data]);
  });

  it("rejects shape/length mismatches", () => {
    expect(() =>
      writeNpy(join(dir, "bad.npy"), {
        data: new Float64Array(5),
        shape: [2, 3],
      }),
    ).toThrow(/does not match shape/);
  });
});
