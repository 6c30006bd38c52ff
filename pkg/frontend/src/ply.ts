/**
 * Binary PLY reader/writer for splatseg model files.
 *
 * The accepted layout is exactly what the CLI writes: little-endian binary,
 * one `vertex` element with 30 float32 properties (x y z, scale_0..2,
 * rot_0..3, opacity, red_f green_f blue_f, seg_0..15) and a
 * `comment splatseg_version 1` header line. Files without the version
 * comment are rejected. Exported subsets reuse the original payload bytes
 * row by row, so a viewer export is byte-identical to a CLI-written file
 * of the same Gaussians.
 */

export const FEATURE_DIM = 16;
export const VERSION_COMMENT = "splatseg_version 1";

export const SCENE_PROPERTIES: readonly string[] = [
  "x", "y", "z",
  "scale_0", "scale_1", "scale_2",
  "rot_0", "rot_1", "rot_2", "rot_3",
  "opacity",
  "red_f", "green_f", "blue_f",
  ...Array.from({ length: FEATURE_DIM }, (_, i) => `seg_${i}`),
];

const STRIDE = SCENE_PROPERTIES.length * 4; // 120 bytes per Gaussian

export class PlyError extends Error {}

export interface Scene {
  count: number;
  /** Raw little-endian payload, count * 120 bytes; rows re-emitted on export. */
  payload: Uint8Array;
  positions: Float64Array;     // (count * 3)
  logScales: Float64Array;     // (count * 3)
  rotations: Float64Array;     // (count * 4) wxyz
  opacityLogits: Float64Array; // (count)
  colors: Float64Array;        // (count * 3)
  features: Float64Array;      // (count * 16)
}

function asciiHeader(count: number): string {
  const lines = [
    "ply",
    "format binary_little_endian 1.0",
    `comment ${VERSION_COMMENT}`,
    `element vertex ${count}`,
    ...SCENE_PROPERTIES.map((name) => `property float ${name}`),
    "end_header",
  ];
  return lines.join("\n") + "\n";
}

function findHeaderEnd(bytes: Uint8Array): number {
  const marker = "end_header\n";
  outer: for (let i = 0; i + marker.length <= bytes.length; i++) {
    for (let j = 0; j < marker.length; j++) {
      if (bytes[i + j] !== marker.charCodeAt(j)) continue outer;
    }
    return i + marker.length;
  }
  return -1;
}

/** Parse a splatseg model file; throws PlyError with a readable message. */
export function parseScene(data: ArrayBuffer): Scene {
  const bytes = new Uint8Array(data);
  const bodyStart = findHeaderEnd(bytes);
  if (bodyStart < 0) throw new PlyError("missing end_header");
  let header: string;
  try {
    header = new TextDecoder("ascii", { fatal: true }).decode(
      bytes.subarray(0, bodyStart));
  } catch {
    throw new PlyError("header is not ASCII");
  }
  const lines = header.split("\n");
  if (lines[0] !== "ply") throw new PlyError("not a PLY file (missing 'ply' magic)");
  if (lines[1] !== "format binary_little_endian 1.0") {
    throw new PlyError("expected 'format binary_little_endian 1.0'");
  }

  let count = -1;
  let hasVersion = false;
  const seen: string[] = [];
  for (const line of lines.slice(2)) {
    if (line === "" || line === "end_header") continue;
    if (line.startsWith("comment")) {
      if (line === `comment ${VERSION_COMMENT}`) hasVersion = true;
      continue;
    }
    const parts = line.split(/\s+/);
    if (parts[0] === "element") {
      if (count >= 0) throw new PlyError("multiple elements not supported");
      if (parts[1] !== "vertex" || parts.length !== 3) {
        throw new PlyError(`expected 'element vertex N', got '${line}'`);
      }
      count = Number(parts[2]);
      if (!Number.isInteger(count) || count < 0) {
        throw new PlyError(`bad vertex count '${parts[2]}'`);
      }
    } else if (parts[0] === "property") {
      if (parts.length !== 3 || parts[1] !== "float") {
        throw new PlyError(`only 'property float NAME' supported, got '${line}'`);
      }
      const expected = SCENE_PROPERTIES[seen.length];
      if (expected === undefined || parts[2] !== expected) {
        throw new PlyError(
          `unexpected property '${parts[2]}', expected '${expected ?? "(none)"}'`);
      }
      seen.push(parts[2]);
    } else {
      throw new PlyError(`unrecognized header line '${line}'`);
    }
  }
  if (count < 0) throw new PlyError("missing 'element vertex' declaration");
  if (!hasVersion) throw new PlyError(`missing 'comment ${VERSION_COMMENT}'`);
  if (seen.length !== SCENE_PROPERTIES.length) {
    throw new PlyError(`missing property '${SCENE_PROPERTIES[seen.length]}'`);
  }
  const payload = bytes.subarray(bodyStart);
  if (payload.length !== count * STRIDE) {
    throw new PlyError(
      `payload has ${payload.length} bytes, expected ${count * STRIDE}`);
  }

  const view = new DataView(data, bodyStart);
  const scene: Scene = {
    count,
    payload: payload.slice(),
    positions: new Float64Array(count * 3),
    logScales: new Float64Array(count * 3),
    rotations: new Float64Array(count * 4),
    opacityLogits: new Float64Array(count),
    colors: new Float64Array(count * 3),
    features: new Float64Array(count * FEATURE_DIM),
  };
  for (let i = 0; i < count; i++) {
    const base = i * STRIDE;
    const f = (k: number) => view.getFloat32(base + k * 4, true);
    for (let k = 0; k < 3; k++) scene.positions[i * 3 + k] = f(k);
    for (let k = 0; k < 3; k++) scene.logScales[i * 3 + k] = f(3 + k);
    for (let k = 0; k < 4; k++) scene.rotations[i * 4 + k] = f(6 + k);
    scene.opacityLogits[i] = f(10);
    for (let k = 0; k < 3; k++) scene.colors[i * 3 + k] = f(11 + k);
    for (let k = 0; k < FEATURE_DIM; k++) {
      scene.features[i * FEATURE_DIM + k] = f(14 + k);
    }
  }
  return scene;
}

/**
 * Serialize the selected Gaussians (ascending index order) in the exact
 * byte layout the CLI writes.
 */
export function writeSubset(scene: Scene, indices: Iterable<number>): Uint8Array {
  const sorted = [...new Set(indices)].sort((a, b) => a - b);
  for (const i of sorted) {
    if (!Number.isInteger(i) || i < 0 || i >= scene.count) {
      throw new PlyError(`index ${i} out of range`);
    }
  }
  if (sorted.length === 0) throw new PlyError("cannot export an empty selection");
  const header = asciiHeader(sorted.length);
  const out = new Uint8Array(header.length + sorted.length * STRIDE);
  for (let j = 0; j < header.length; j++) out[j] = header.charCodeAt(j);
  sorted.forEach((idx, row) => {
    out.set(scene.payload.subarray(idx * STRIDE, (idx + 1) * STRIDE),
            header.length + row * STRIDE);
  });
  return out;
}
