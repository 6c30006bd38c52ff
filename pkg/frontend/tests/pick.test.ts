import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { OrbitCamera, extrinsics } from "../src/camera.js";
import { FEATURE_DIM, parseScene } from "../src/ply.js";
import { pickIndex, pickPrompt, projectSplats } from "../src/render.js";
import { selectionFor } from "../src/state.js";

const FIXTURES = join(__dirname, "fixtures");

function loadFixture(name: string): ArrayBuffer {
  const buf = readFileSync(join(FIXTURES, name));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

const meta = JSON.parse(readFileSync(join(FIXTURES, "meta.json"), "utf-8"));
// Ground-truth synthetic scene: three objects with uniform one-hot features.
const scene = parseScene(loadFixture("gt_scene.ply"));
const labels: number[] = meta.gt_labels;

const camera: OrbitCamera = {
  azimuth: 0.8, elevation: 1.1, distance: 14,
  target: [0, 0, 0], fx: 320, width: 512, height: 512,
};

describe("projectSplats", () => {
  it("culls nothing in a scene placed in front of the camera", () => {
    expect(projectSplats(scene, camera).length).toBe(scene.count);
  });

  it("projection is consistent with the world-to-camera pose", () => {
    const pose = extrinsics(camera);
    const splats = projectSplats(scene, camera, pose);
    const s = splats[0];
    const i = s.index;
    const p = [scene.positions[i * 3], scene.positions[i * 3 + 1],
               scene.positions[i * 3 + 2]];
    const z = pose.rotation[6] * p[0] + pose.rotation[7] * p[1]
      + pose.rotation[8] * p[2] + pose.translation[2];
    expect(s.depth).toBeCloseTo(z, 12);
  });
});

describe("pick", () => {
  it("clicking an object of uniform feature selects that object at t=0.7", () => {
    const pose = extrinsics(camera);
    const splats = projectSplats(scene, camera, pose);
    // Click exactly on the projected center of some Gaussian of object 0.
    const target = splats.find((s) => labels[s.index] === 0)!;
    const prompt = pickPrompt(scene, camera, target.x, target.y);
    expect(prompt).not.toBeNull();
    // The picked winner under the cursor belongs to some object; with
    // one-hot features the prompt equals that object's axis exactly.
    const winner = pickIndex(scene, camera, target.x, target.y)!;
    const obj = labels[winner];
    for (let k = 0; k < FEATURE_DIM; k++) {
      expect(prompt![k]).toBe(k === obj ? 1 : 0);
    }
    const selection = selectionFor(scene, prompt!, 0.7);
    const expected = labels.map((l, i) => (l === obj ? i : -1))
      .filter((i) => i >= 0);
    expect(selection).toEqual(expected);
  });

  it("clicking empty background is a no-op", () => {
    expect(pickPrompt(scene, camera, 2, 2)).toBeNull();
  });

  it("lowering t never shrinks the selection", () => {
    const prompt = Float64Array.from(
      { length: FEATURE_DIM }, (_, k) => (k === 1 ? 1 : 0));
    let previous: number[] = [];
    for (const t of [0.9, 0.7, 0.5, 0.3]) {
      const sel = selectionFor(scene, prompt, t);
      for (const idx of previous) expect(sel).toContain(idx);
      previous = sel;
    }
  });
});
