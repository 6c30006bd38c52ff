"""Scene representation shared by every other module.

A scene is a flat collection of anisotropic 3D Gaussians. Each Gaussian
carries the usual splatting parameters (position, log-scale, quaternion,
opacity logit, RGB color) plus a 16-dimensional segmentation embedding that
is composited exactly like color and compared by cosine similarity.

Parameterization keeps the optimizer unconstrained:
  scale   = exp(log_scale)        (> 0 per axis by construction)
  opacity = sigmoid(opacity_logit) (in (0,1) by construction)
  rotation quaternions are stored raw and renormalized on use.

Storage is struct-of-arrays (float64) so rendering and optimization stay
vectorized; the Gaussian dataclass is the single-primitive view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURE_DIM = 16


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    return np.log(p / (1.0 - p))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit-norm quaternions (..., 4) in (w, x, y, z) order to rotation
    matrices (..., 3, 3). Input is renormalized, so q and -q (or any s*q,
    s != 0) yield the same matrix."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("zero-norm quaternion")
    w, x, y, z = np.moveaxis(q / n, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass
class Gaussian:
    """One splatting primitive. See module docstring for parameterization."""

    position: np.ndarray        # (3,) world units
    log_scale: np.ndarray       # (3,) log of per-axis stddev
    rotation: np.ndarray        # (4,) quaternion (w, x, y, z), any nonzero norm
    opacity_logit: float
    color: np.ndarray           # (3,) linear RGB in [0, 1]
    feature: np.ndarray         # (16,) segmentation embedding, unnormalized

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.opacity_logit = float(self.opacity_logit)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        self.feature = np.asarray(self.feature, dtype=np.float64).reshape(FEATURE_DIM)
        for name in ("position", "log_scale", "rotation", "color", "feature"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite {name}")
        if not np.isfinite(self.opacity_logit):
            raise ValueError("non-finite opacity_logit")
        if np.linalg.norm(self.rotation) == 0.0:
            raise ValueError("zero-norm rotation quaternion")

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


def covariance3d(g: Gaussian) -> np.ndarray:
    """3x3 covariance Sigma = R S S^T R^T with S = diag(exp(log_scale)).

    Positive definite by construction; symmetrized to kill the last bits of
    rounding asymmetry so downstream eigen/inverse code can rely on it.
    """
    r = quat_to_rotmat(g.rotation)
    s2 = np.exp(2.0 * g.log_scale)
    cov = (r * s2[None, :]) @ r.T
    return 0.5 * (cov + cov.T)


@dataclass
class SceneModel:
    """Struct-of-arrays collection of Gaussians plus the training step counter.

    Arrays are float64 and row i of every array belongs to Gaussian i; the
    ordering is stable, which the rasterizer's backward pass relies on.
    """

    positions: np.ndarray       # (N, 3)
    log_scales: np.ndarray      # (N, 3)
    rotations: np.ndarray       # (N, 4)
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray          # (N, 3)
    features: np.ndarray        # (N, 16)
    iteration: int = 0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        n = len(self.positions)
        if n == 0:
            raise ValueError("SceneModel must contain at least one Gaussian")
        shapes = {
            "positions": (n, 3), "log_scales": (n, 3), "rotations": (n, 4),
            "opacity_logits": (n,), "colors": (n, 3), "features": (n, FEATURE_DIM),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if np.any(np.linalg.norm(self.rotations, axis=1) == 0.0):
            raise ValueError("zero-norm rotation quaternion")

    def __len__(self) -> int:
        return len(self.positions)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].copy(),
            log_scale=self.log_scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i].copy(),
            feature=self.features[i].copy(),
        )

    @classmethod
    def from_gaussians(cls, gaussians, iteration: int = 0) -> "SceneModel":
        gaussians = list(gaussians)
        if not gaussians:
            raise ValueError("SceneModel must contain at least one Gaussian")
        return cls(
            positions=np.stack([g.position for g in gaussians]),
            log_scales=np.stack([g.log_scale for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            colors=np.stack([g.color for g in gaussians]),
            features=np.stack([g.feature for g in gaussians]),
            iteration=iteration,
        )

    def copy(self) -> "SceneModel":
        return SceneModel(
            positions=self.positions.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            opacity_logits=self.opacity_logits.copy(),
            colors=self.colors.copy(),
            features=self.features.copy(),
            iteration=self.iteration,
        )

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)


def scene_covariances(scene: SceneModel) -> np.ndarray:
    """Batched covariance3d: (N, 3, 3) for the whole scene."""
    r = quat_to_rotmat(scene.rotations)
    s2 = np.exp(2.0 * scene.log_scales)
    cov = np.einsum("nij,nj,nkj->nik", r, s2, r)
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def clone_subset(scene: SceneModel, indices) -> SceneModel:
    """New scene holding exactly the selected Gaussians, original order kept.

    Indices are treated as a set: duplicates collapse and the result is
    ordered by position in the source scene. Values are copied bit-identically.
    """
    idx = np.unique(np.asarray(indices, dtype=np.int64))
    if idx.size == 0:
        raise ValueError("cannot build an empty scene from an empty index set")
    if idx[0] < 0 or idx[-1] >= len(scene):
        bad = idx[0] if idx[0] < 0 else idx[-1]
        raise ValueError(f"index {bad} out of range for scene of {len(scene)} Gaussians")
    return SceneModel(
        positions=scene.positions[idx].copy(),
        log_scales=scene.log_scales[idx].copy(),
        rotations=scene.rotations[idx].copy(),
        opacity_logits=scene.opacity_logits[idx].copy(),
        colors=scene.colors[idx].copy(),
        features=scene.features[idx].copy(),
        iteration=scene.iteration,
    )


@dataclass
class Camera:
    """Pinhole camera: right-handed, +z into the screen, pixel (0,0) at the
    top-left, pixel centers at integer + 0.5. world_to_camera maps world
    points to camera frame: x_cam = R @ x_world + t."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3) world-to-camera rotation
    translation: np.ndarray  # (3,)
    width: int
    height: int
    camera_id: int = 0

    ORTHONORMAL_TOL = 1e-6

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.fx, self.fy = float(self.fx), float(self.fy)
        self.cx, self.cy = float(self.cx), float(self.cy)
        self.width, self.height = int(self.width), int(self.height)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"camera {self.camera_id}: focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"camera {self.camera_id}: principal point outside image")
        err = np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3)))
        if err > self.ORTHONORMAL_TOL:
            raise ValueError(
                f"camera {self.camera_id}: rotation not orthonormal (error {err:.2e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError(f"camera {self.camera_id}: rotation is left-handed")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def look_at_camera(eye, target, fx, fy, width, height,
                   up=(0.0, 0.0, 1.0), camera_id: int = 0) -> Camera:
    """Camera at `eye` looking toward `target`, world `up` appearing upward
    in the image. Degenerate when the view direction is parallel to `up`."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("look direction parallel to up vector")
    right = right / nr
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return Camera(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                  rotation=rot, translation=-rot @ eye,
                  width=width, height=height, camera_id=camera_id)
