/**
 * Viewer state and the stage-1 selection rule.
 *
 * The selection rule is exactly the CLI's extract3d stage 1: a Gaussian is
 * selected when the cosine between its normalized feature vector and the
 * prompt is >= t. The outlier filter and convex-hull recovery stages stay
 * CLI-side; the UI labels them as such. State objects are immutable and
 * every transition recomputes the selection, so it can never go stale
 * relative to (prompt, threshold).
 */

import { OrbitCamera } from "./camera.js";
import { FEATURE_DIM, Scene } from "./ply.js";

export const DEFAULT_THRESHOLD = 0.7;

export interface ViewerState {
  readonly scene: Scene;
  readonly camera: OrbitCamera;
  readonly prompt: Float64Array | null; // unit 16-vector
  readonly threshold: number;
  readonly selection: ReadonlySet<number>;
  readonly highlight: boolean;
}

/** Indices (ascending) of Gaussians with cos(feature, prompt) >= t. */
export function selectionFor(scene: Scene, prompt: Float64Array | null,
                             t: number): number[] {
  if (prompt === null) return [];
  if (!(t > 0 && t < 1)) throw new Error("threshold must lie in (0, 1)");
  const out: number[] = [];
  for (let i = 0; i < scene.count; i++) {
    let norm2 = 0;
    for (let k = 0; k < FEATURE_DIM; k++) {
      const v = scene.features[i * FEATURE_DIM + k];
      norm2 += v * v;
    }
    const norm = Math.sqrt(norm2);
    let sim = 0;
    if (norm > 0) {
      for (let k = 0; k < FEATURE_DIM; k++) {
        sim += (scene.features[i * FEATURE_DIM + k] / norm) * prompt[k];
      }
    }
    if (sim >= t) out.push(i);
  }
  return out;
}

export function normalizeFeature(raw: Float64Array): Float64Array | null {
  let norm2 = 0;
  for (let k = 0; k < raw.length; k++) norm2 += raw[k] * raw[k];
  const norm = Math.sqrt(norm2);
  if (norm === 0) return null;
  return Float64Array.from(raw, (v) => v / norm);
}

function derive(state: ViewerState, changes: Partial<ViewerState>): ViewerState {
  const next = { ...state, ...changes };
  const selection = new Set(selectionFor(next.scene, next.prompt, next.threshold));
  return { ...next, selection };
}

export function initialState(scene: Scene, camera: OrbitCamera): ViewerState {
  return {
    scene, camera, prompt: null, threshold: DEFAULT_THRESHOLD,
    selection: new Set(), highlight: true,
  };
}

export function withPrompt(state: ViewerState,
                           prompt: Float64Array | null): ViewerState {
  return derive(state, { prompt });
}

export function withThreshold(state: ViewerState, t: number): ViewerState {
  return derive(state, { threshold: t });
}

export function withCamera(state: ViewerState, camera: OrbitCamera): ViewerState {
  return { ...state, camera }; // camera does not affect the selection
}

export function withHighlight(state: ViewerState, highlight: boolean): ViewerState {
  return { ...state, highlight };
}
