/**
 * UI wiring: load a model file, orbit with the mouse, click an object to
 * set the prompt, tune the threshold slider with live feedback, export the
 * selection as a PLY the CLI accepts unchanged.
 */

import { OrbitCamera, orbit, zoom } from "./camera.js";
import { PlyError, Scene, parseScene, writeSubset } from "./ply.js";
import { drawScene, pickPrompt } from "./render.js";
import { ViewerState, initialState, withCamera, withPrompt,
         withThreshold } from "./state.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const fileInput = document.getElementById("file") as HTMLInputElement;
const slider = document.getElementById("threshold") as HTMLInputElement;
const sliderLabel = document.getElementById("threshold-label")!;
const exportButton = document.getElementById("export") as HTMLButtonElement;
const status = document.getElementById("status")!;
const cliHint = document.getElementById("cli-hint")!;

let state: ViewerState | null = null;

function setStatus(text: string): void {
  status.textContent = text;
}

function defaultCamera(scene: Scene): OrbitCamera {
  const n = scene.count;
  const center: [number, number, number] = [0, 0, 0];
  for (let i = 0; i < n; i++) {
    center[0] += scene.positions[i * 3] / n;
    center[1] += scene.positions[i * 3 + 1] / n;
    center[2] += scene.positions[i * 3 + 2] / n;
  }
  let radius = 0;
  for (let i = 0; i < n; i++) {
    radius = Math.max(radius, Math.hypot(
      scene.positions[i * 3] - center[0],
      scene.positions[i * 3 + 1] - center[1],
      scene.positions[i * 3 + 2] - center[2]));
  }
  radius = Math.max(radius, 1e-3);
  const distance = 3.0 * radius;
  return {
    azimuth: 0.6, elevation: 0.7, distance, target: center,
    fx: (0.45 * canvas.width * distance) / radius,
    width: canvas.width, height: canvas.height,
  };
}

function redraw(): void {
  if (!state) return;
  drawScene(ctx, state.scene, state.camera, state.selection, state.highlight);
  const n = state.selection.size;
  exportButton.disabled = n === 0;
  sliderLabel.textContent = `t = ${state.threshold.toFixed(2)}`;
  cliHint.textContent =
    `splatseg extract3d --model model.ply --cameras cameras.txt ` +
    `--camera-id 0 --prompt-mask prompt.pgm --t ${state.threshold.toFixed(2)} ` +
    `--out object.ply`;
  if (n > 0) {
    setStatus(`${n} of ${state.scene.count} Gaussians selected `
      + `(similarity >= ${state.threshold.toFixed(2)}).`);
  }
}

function swap(next: ViewerState): void {
  state = next; // atomic: render always sees a consistent state
  redraw();
}

async function loadFile(file: File): Promise<void> {
  try {
    const scene = parseScene(await file.arrayBuffer());
    swap(initialState(scene, defaultCamera(scene)));
    setStatus(`Loaded ${scene.count} Gaussians. Click an object to select it; `
      + `drag to orbit, wheel to zoom.`);
  } catch (err) {
    if (err instanceof PlyError) {
      setStatus(`Cannot load model: ${err.message}`);
    } else {
      throw err;
    }
  }
}

fileInput.addEventListener("change", () => {
  const file = fileInput.files?.[0];
  if (file) void loadFile(file);
});
document.addEventListener("dragover", (ev) => ev.preventDefault());
document.addEventListener("drop", (ev) => {
  ev.preventDefault();
  const file = ev.dataTransfer?.files?.[0];
  if (file) void loadFile(file);
});

let dragging = false;
let moved = 0;
let last: [number, number] = [0, 0];
canvas.addEventListener("mousedown", (ev) => {
  dragging = true;
  moved = 0;
  last = [ev.offsetX, ev.offsetY];
});
canvas.addEventListener("mousemove", (ev) => {
  if (!dragging || !state) return;
  const dx = ev.offsetX - last[0];
  const dy = ev.offsetY - last[1];
  moved += Math.abs(dx) + Math.abs(dy);
  last = [ev.offsetX, ev.offsetY];
  swap(withCamera(state, orbit(state.camera, -dx * 0.008, dy * 0.008)));
});
window.addEventListener("mouseup", (ev) => {
  if (!dragging) return;
  dragging = false;
  if (moved > 4 || !state) return; // a drag, not a click
  const rect = canvas.getBoundingClientRect();
  const x = ev.clientX - rect.left;
  const y = ev.clientY - rect.top;
  const prompt = pickPrompt(state.scene, state.camera, x, y);
  if (prompt === null) {
    setStatus("Nothing under the cursor — click on an object to select it.");
    return;
  }
  swap(withPrompt(state, prompt));
});
canvas.addEventListener("wheel", (ev) => {
  if (!state) return;
  ev.preventDefault();
  swap(withCamera(state, zoom(state.camera, ev.deltaY > 0 ? 1.1 : 1 / 1.1)));
});

slider.addEventListener("input", () => {
  if (!state) return;
  swap(withThreshold(state, Number(slider.value)));
});

exportButton.addEventListener("click", () => {
  if (!state || state.selection.size === 0) return;
  const bytes = writeSubset(state.scene, state.selection);
  const blob = new Blob([bytes.buffer as ArrayBuffer],
                        { type: "application/octet-stream" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = "selection.ply";
  link.click();
  URL.revokeObjectURL(link.href);
  setStatus(`Exported ${state.selection.size} Gaussians.`);
});

setStatus("Load a model PLY written by `splatseg train` or `splatseg extract3d`.");
