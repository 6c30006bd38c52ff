/**
 * Orbit camera following the model's convention: right-handed, +z into the
 * screen, pixel (0,0) top-left, pixel centers at integer + 0.5, world +z up.
 */

export interface OrbitCamera {
  readonly azimuth: number;   // radians around world +z
  readonly elevation: number; // radians above the xy-plane
  readonly distance: number;
  readonly target: readonly [number, number, number];
  readonly fx: number;
  readonly width: number;
  readonly height: number;
}

export interface Extrinsics {
  rotation: Float64Array;    // 3x3 row-major world-to-camera
  translation: Float64Array; // 3
}

function cross(a: number[], b: number[]): number[] {
  return [a[1] * b[2] - a[2] * b[1],
          a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]];
}

function normalize(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

export function eyePosition(cam: OrbitCamera): [number, number, number] {
  const ce = Math.cos(cam.elevation);
  return [
    cam.target[0] + cam.distance * Math.cos(cam.azimuth) * ce,
    cam.target[1] + cam.distance * Math.sin(cam.azimuth) * ce,
    cam.target[2] + cam.distance * Math.sin(cam.elevation),
  ];
}

/** World-to-camera pose looking from the orbit position at the target. */
export function extrinsics(cam: OrbitCamera): Extrinsics {
  const eye = eyePosition(cam);
  const fwd = normalize([cam.target[0] - eye[0], cam.target[1] - eye[1],
                         cam.target[2] - eye[2]]);
  let right = cross(fwd, [0, 0, 1]);
  const n = Math.hypot(right[0], right[1], right[2]);
  right = n < 1e-9 ? [1, 0, 0] : [right[0] / n, right[1] / n, right[2] / n];
  const down = cross(fwd, right);
  const rotation = Float64Array.from([...right, ...down, ...fwd]);
  const translation = new Float64Array(3);
  for (let r = 0; r < 3; r++) {
    translation[r] = -(rotation[r * 3] * eye[0] + rotation[r * 3 + 1] * eye[1]
                       + rotation[r * 3 + 2] * eye[2]);
  }
  return { rotation, translation };
}

export function orbit(cam: OrbitCamera, dAzimuth: number,
                      dElevation: number): OrbitCamera {
  const lim = Math.PI / 2 - 0.05;
  return {
    ...cam,
    azimuth: cam.azimuth + dAzimuth,
    elevation: Math.min(lim, Math.max(-lim, cam.elevation + dElevation)),
  };
}

export function zoom(cam: OrbitCamera, factor: number): OrbitCamera {
  return { ...cam, distance: Math.min(1e4, Math.max(1e-3, cam.distance * factor)) };
}
