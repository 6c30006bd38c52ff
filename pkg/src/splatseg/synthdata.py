"""Deterministic synthetic scenes with ground truth for end-to-end checks.

Stands in for the upstream capture pipeline: produces a labeled Gaussian
scene (blobs at spaced centers, saturated colors), a ring of cameras, and
per-view color images and instance masks rendered from the scene itself.
Mask IDs are permuted independently per view to mimic the inconsistent
instance IDs of per-view 2D segmentation, so nothing downstream may rely on
cross-view ID agreement.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import rng
from .core_model import Camera, FEATURE_DIM, SceneModel, logit, look_at_camera
from .rasterizer import rasterize
from .segmentation import ALPHA_FOREGROUND


@dataclass
class SyntheticSpec:
    object_count: int = 3
    gaussians_per_object: int = 100
    object_spacing: float = 4.0   # world units between adjacent object centers
    camera_count: int = 20
    image_size: int = 64
    seed: int = 7

    def __post_init__(self):
        if min(self.object_count, self.gaussians_per_object,
               self.camera_count, self.image_size) < 1:
            raise ValueError("all synthetic-spec counts must be positive")
        if self.object_spacing <= 0:
            raise ValueError("object_spacing must be positive")
        if self.object_count > FEATURE_DIM:
            raise ValueError(f"at most {FEATURE_DIM} objects supported")

    @property
    def object_radius(self) -> float:
        # spacing = 5 * radius keeps a clear background corridor between
        # rendered silhouettes (well beyond the > 3x separability floor).
        return self.object_spacing / 5.0


@dataclass
class SyntheticScene:
    scene: SceneModel
    labels: np.ndarray            # (N,) object index per Gaussian, 0-based
    centers: np.ndarray           # (K, 3) object centers
    cameras: list[Camera]
    images: list[np.ndarray]      # (H, W, 3) float64, rendered over black
    masks: list[np.ndarray]       # (H, W) int32, per-view permuted IDs, 0 = bg
    permutations: list[np.ndarray]  # per view: permuted_id = perm[label] + 1


def _object_centers(spec: SyntheticSpec) -> np.ndarray:
    k = spec.object_count
    if k == 1:
        return np.zeros((1, 3))
    ring = spec.object_spacing / (2.0 * np.sin(np.pi / k))
    ang = 2.0 * np.pi * np.arange(k) / k
    return np.stack([ring * np.cos(ang), ring * np.sin(ang), np.zeros(k)], axis=1)


def generate(spec: SyntheticSpec) -> SyntheticScene:
    """Build the ground-truth scene and render its images and masks.

    The GT mask ID of a pixel is the object label of the Gaussian with the
    largest compositing weight there, 0 where alpha < 0.5; each view's IDs
    are then shuffled by a per-view seeded bijection.
    """
    gen = rng.stream(spec.seed, rng.SYNTH_SCENE)
    k = spec.object_count
    n = spec.gaussians_per_object
    radius = spec.object_radius
    centers = _object_centers(spec)

    positions, log_scales, rotations, colors, features, labels = [], [], [], [], [], []
    for obj in range(k):
        pos = centers[obj] + gen.standard_normal((n, 3)) * (radius / 3.0)
        if n == 1:
            sigma = np.full(1, radius)
        else:
            kq = min(3, n - 1)
            dist, _ = cKDTree(pos).query(pos, k=kq + 1)
            sigma = dist[:, 1:].mean(axis=1) * 1.2  # overlap neighbors slightly
        ls = np.log(sigma)[:, None] + gen.uniform(-0.2, 0.2, (n, 3))
        quat = gen.standard_normal((n, 4))
        quat /= np.linalg.norm(quat, axis=1, keepdims=True)
        rgb = colorsys.hsv_to_rgb(obj / k, 1.0, 1.0)
        feat = np.zeros((n, FEATURE_DIM))
        feat[:, obj] = 1.0
        positions.append(pos)
        log_scales.append(ls)
        rotations.append(quat)
        colors.append(np.tile(rgb, (n, 1)))
        features.append(feat)
        labels.append(np.full(n, obj))

    scene = SceneModel(
        positions=np.concatenate(positions),
        log_scales=np.concatenate(log_scales),
        rotations=np.concatenate(rotations),
        # High opacity keeps silhouettes crisp so composited features
        # transition sharply at object boundaries.
        opacity_logits=np.full(k * n, logit(0.97)),
        colors=np.concatenate(colors),
        features=np.concatenate(features),
    )
    labels = np.concatenate(labels)

    scene_radius = float(np.linalg.norm(centers, axis=1).max() + 3.0 * radius)
    cam_dist = 2.5 * scene_radius
    size = spec.image_size
    focal = 0.4 * size * cam_dist / scene_radius
    cameras = []
    for i in range(spec.camera_count):
        az = 2.0 * np.pi * (i + 0.37) / spec.camera_count
        # Steep ring: the object layout stays visually separated, which the
        # similarity clustering of downstream segmentation relies on.
        el = np.deg2rad(55.0 + 15.0 * (i % 2))
        eye = cam_dist * np.array([np.cos(az) * np.cos(el),
                                   np.sin(az) * np.cos(el),
                                   np.sin(el)])
        cameras.append(look_at_camera(eye, (0.0, 0.0, 0.0), focal, focal,
                                      size, size, camera_id=i))

    images, masks, perms = [], [], []
    for i, cam in enumerate(cameras):
        render = rasterize(scene, cam, want_argmax=True)
        images.append(render.color)
        fg = render.alpha >= ALPHA_FOREGROUND
        winner = render.argmax_index
        perm = rng.stream(spec.seed, rng.SYNTH_PERMUTE, step=i).permutation(k)
        mask = np.zeros((size, size), dtype=np.int32)
        covered = fg & (winner >= 0)
        mask[covered] = perm[labels[winner[covered]]] + 1
        masks.append(mask)
        perms.append(perm)

    return SyntheticScene(scene=scene, labels=labels, centers=centers,
                          cameras=cameras, images=images, masks=masks,
                          permutations=perms)
