/**
 * Minimal .npy (format version 1.0) reader/writer for the two element types
 * the kernel exchange uses: little-endian float64 (`<f8`) and int64 (`<i8`),
 * C-order only.  Row-major 2-D and square 4x4 matrices are all we move.
 */
import { readFileSync, writeFileSync } from "node:fs";

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export type NpyData = Float64Array | BigInt64Array;

export interface NpyArray<T extends NpyData = NpyData> {
  data: T;
  shape: number[];
}

function descrOf(data: NpyData): string {
  return data instanceof Float64Array ? "<f8" : "<i8";
}

export function writeNpy(path: string, arr: NpyArray): void {
  const { data, shape } = arr;
  const count = shape.reduce((a, b) => a * b, 1);
  if (data.length !== count) {
    throw new Error(
      `array length ${data.length} does not match shape (${shape.join(", ")})`,
    );
  }
  const shapeTxt =
    shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(", ")})`;
  let header = `{'descr': '${descrOf(data)}', 'fortran_order': False, 'shape': ${shapeTxt}, }`;
  const unpadded = MAGIC.length + 4 + header.length + 1;
  header += " ".repeat((64 - (unpadded % 64)) % 64) + "\n";

  const head = Buffer.alloc(MAGIC.length + 4 + header.length);
  MAGIC.copy(head, 0);
  head[6] = 1; // format version 1.0
  head[7] = 0;
  head.writeUInt16LE(header.length, 8);
  head.write(header, 10, "latin1");
  writeFileSync(
    path,
    Buffer.concat([
      head,
      Buffer.from(data.buffer, data.byteOffset, data.byteLength),
    ]),
  );
}

export function readNpy(path: string): NpyArray {
  const buf = readFileSync(path);
  if (!buf.subarray(0, 6).equals(MAGIC)) {
    throw new Error(`${path}: not a .npy file`);
  }
  const headerLen = buf.readUInt16LE(8);
  const header = buf.toString("latin1", 10, 10 + headerLen);

  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shapeTxt = /'shape':\s*\(([^)]*)\)/.exec(header)?.[1];
  if (descr === undefined || fortran === undefined || shapeTxt === undefined) {
    throw new Error(`${path}: malformed .npy header: ${header}`);
  }
  if (fortran !== "False") {
    throw new Error(`${path}: only C-order arrays are supported`);
  }
  const shape = shapeTxt
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map(Number);
  const count = shape.reduce((a, b) => a * b, 1);
  const body = buf.subarray(10 + headerLen);

  // copy to a fresh buffer: Node file reads may not be 8-byte aligned
  const bytes = new Uint8Array(count * 8);
  bytes.set(body.subarray(0, count * 8));
  if (descr === "<f8") {
    return { data: new Float64Array(bytes.buffer), shape };
  }
  if (descr === "<i8") {
    return { data: new BigInt64Array(bytes.buffer), shape };
  }
  throw new Error(`${path}: unsupported dtype ${descr}`);
}

export function readFloat64(path: string): NpyArray<Float64Array> {
  const arr = readNpy(path);
  if (!(arr.data instanceof Float64Array)) {
    throw new Error(`${path}: expected float64 data`);
  }
  return arr as NpyArray<Float64Array>;
}

export function readInt64(path: string): NpyArray<BigInt64Array> {
  const arr = readNpy(path);
  if (!(arr.data instanceof BigInt64Array)) {
    throw new Error(`${path}: expected int64 data`);
  }
  return arr as NpyArray<BigInt64Array>;
}
