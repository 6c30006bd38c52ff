/**
 * Point-sprite splat rendering and pixel picking.
 *
 * Splats are drawn back-to-front (painter's algorithm) as isotropic radial
 * sprites — an approximation of the training rasterizer that is adequate
 * for interactive selection. Picking replays the compositing contract
 * front-to-back (skip a < 1/255, stop below transmittance 1e-4) on the
 * sprite footprints and returns the Gaussian with the largest weight.
 */

import { Extrinsics, OrbitCamera, extrinsics } from "./camera.js";
import { FEATURE_DIM, Scene } from "./ply.js";

const NEAR_PLANE = 0.01;
const ALPHA_SKIP = 1.0 / 255.0;
const T_STOP = 1e-4;

export interface ProjectedSplat {
  index: number;
  x: number;      // pixel coordinates of the mean
  y: number;
  depth: number;
  sigma: number;  // isotropic footprint stddev, pixels
  alpha: number;
}

function sigmoid(x: number): number {
  return 1.0 / (1.0 + Math.exp(-x));
}

export function projectSplats(scene: Scene, cam: OrbitCamera,
                              pose: Extrinsics = extrinsics(cam)): ProjectedSplat[] {
  const { rotation: r, translation: tr } = pose;
  const cx = cam.width / 2.0;
  const cy = cam.height / 2.0;
  const out: ProjectedSplat[] = [];
  for (let i = 0; i < scene.count; i++) {
    const px = scene.positions[i * 3];
    const py = scene.positions[i * 3 + 1];
    const pz = scene.positions[i * 3 + 2];
    const z = r[6] * px + r[7] * py + r[8] * pz + tr[2];
    if (z <= NEAR_PLANE) continue;
    const xc = r[0] * px + r[1] * py + r[2] * pz + tr[0];
    const yc = r[3] * px + r[4] * py + r[5] * pz + tr[1];
    const meanScale = Math.exp((scene.logScales[i * 3] + scene.logScales[i * 3 + 1]
                                + scene.logScales[i * 3 + 2]) / 3.0);
    const sigma = Math.max(0.3, (meanScale * cam.fx) / z);
    const x = (cam.fx * xc) / z + cx;
    const y = (cam.fx * yc) / z + cy;
    const reach = 3.0 * sigma;
    if (x + reach < 0 || x - reach > cam.width
        || y + reach < 0 || y - reach > cam.height) continue;
    out.push({ index: i, x, y, depth: z, sigma,
               alpha: sigmoid(scene.opacityLogits[i]) });
  }
  return out;
}

export function drawScene(ctx: CanvasRenderingContext2D, scene: Scene,
                          cam: OrbitCamera, selection: ReadonlySet<number>,
                          highlight: boolean): void {
  ctx.fillStyle = "#101014";
  ctx.fillRect(0, 0, cam.width, cam.height);
  const splats = projectSplats(scene, cam);
  splats.sort((a, b) => b.depth - a.depth || a.index - b.index); // back to front
  for (const s of splats) {
    const i = s.index;
    let cr = scene.colors[i * 3];
    let cg = scene.colors[i * 3 + 1];
    let cb = scene.colors[i * 3 + 2];
    const selected = selection.has(i);
    if (highlight && selection.size > 0) {
      if (selected) { // tint toward warm white
        cr = 0.35 + 0.65 * cr;
        cg = 0.35 + 0.65 * cg;
        cb = 0.15 + 0.55 * cb;
      } else {        // dim the rest
        cr *= 0.25; cg *= 0.25; cb *= 0.3;
      }
    }
    const rgb = `${Math.round(255 * cr)},${Math.round(255 * cg)},${Math.round(255 * cb)}`;
    const grad = ctx.createRadialGradient(s.x, s.y, 0, s.x, s.y, 2.0 * s.sigma);
    grad.addColorStop(0, `rgba(${rgb},${s.alpha.toFixed(4)})`);
    grad.addColorStop(1, `rgba(${rgb},0)`);
    ctx.fillStyle = grad;
    ctx.beginPath();
    ctx.arc(s.x, s.y, 2.0 * s.sigma, 0, 2 * Math.PI);
    ctx.fill();
  }
}

/**
 * Gaussian with the largest compositing weight under the clicked pixel, or
 * null when the click lands on empty background.
 */
export function pickIndex(scene: Scene, cam: OrbitCamera,
                          x: number, y: number): number | null {
  const splats = projectSplats(scene, cam);
  splats.sort((a, b) => a.depth - b.depth || a.index - b.index); // front to back
  let transmittance = 1.0;
  let best: number | null = null;
  let bestWeight = 0.0;
  for (const s of splats) {
    const d2 = (x - s.x) ** 2 + (y - s.y) ** 2;
    const a = s.alpha * Math.exp(-d2 / (2.0 * s.sigma * s.sigma));
    if (a < ALPHA_SKIP) continue;
    if (transmittance < T_STOP) break;
    const w = a * transmittance;
    if (w > bestWeight) {
      bestWeight = w;
      best = s.index;
    }
    transmittance *= 1.0 - a;
  }
  return best;
}

/** Normalized feature of the picked Gaussian (the click prompt). */
export function pickPrompt(scene: Scene, cam: OrbitCamera,
                           x: number, y: number): Float64Array | null {
  const idx = pickIndex(scene, cam, x, y);
  if (idx === null) return null;
  const raw = scene.features.subarray(idx * FEATURE_DIM, (idx + 1) * FEATURE_DIM);
  let norm2 = 0;
  for (let k = 0; k < FEATURE_DIM; k++) norm2 += raw[k] * raw[k];
  const norm = Math.sqrt(norm2);
  if (norm === 0) return null;
  return Float64Array.from(raw, (v) => v / norm);
}
