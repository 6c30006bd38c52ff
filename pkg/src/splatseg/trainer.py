"""Joint optimization of all Gaussian parameters against the total loss.

One optimization step = render a view (round-robin), evaluate the total
loss, run the analytic backward pass, and apply per-group Adam updates.
Every densify_interval steps during the first densify_until_fraction of
training, high-gradient Gaussians are cloned (small ones) or split (large
ones) and nearly transparent Gaussians are pruned — a simplified version of
adaptive density control sufficient at desk scale.

Training is deterministic given (seed, inputs, config): all randomness
comes from counter-based streams and views are visited in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import rng
from .core_model import FEATURE_DIM, SceneModel, logit, quat_to_rotmat, sigmoid
from .errors import NumericalError
from .losses import LossConfig, total_loss
from .rasterizer import RenderOutput, rasterize, rasterize_backward

BACKGROUND = np.zeros(3)  # training composites over black

PARAM_GROUPS = ("positions", "log_scales", "rotations",
                "opacity_logits", "colors", "features")


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr_position: float = 1.6e-4
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_feature: float = 2.5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    densify_interval: int = 300
    densify_grad_threshold: float = 2e-4  # mean 2D position-gradient magnitude
    prune_opacity_threshold: float = 0.01
    densify_until_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("lr_position", "lr_log_scale", "lr_rotation", "lr_opacity",
                     "lr_color", "lr_feature", "adam_eps", "densify_interval",
                     "densify_grad_threshold", "prune_opacity_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in (0, 1)")
        if not (0.0 <= self.densify_until_fraction <= 1.0):
            raise ValueError("densify_until_fraction must lie in [0, 1]")

    def learning_rate(self, group: str) -> float:
        return {
            "positions": self.lr_position, "log_scales": self.lr_log_scale,
            "rotations": self.lr_rotation, "opacity_logits": self.lr_opacity,
            "colors": self.lr_color, "features": self.lr_feature,
        }[group]


def initialize(points: np.ndarray, colors: np.ndarray | None = None,
               seed: int = 0) -> SceneModel:
    """Bootstrap a scene from a sparse point set.

    One Gaussian per point; isotropic scale from the mean distance to the 3
    nearest points, opacity 0.1, identity rotation, features from a seeded
    unit-Gaussian scaled by 1/sqrt(16).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        raise ValueError("cannot initialize from an empty point set")
    if colors is None:
        cols = np.full((n, 3), 0.5)
    else:
        cols = np.clip(np.asarray(colors, dtype=np.float64).reshape(n, 3), 0.0, 1.0)

    if n == 1:
        log_scales = np.zeros((1, 3))
    else:
        k = min(3, n - 1)
        dist, _ = cKDTree(points).query(points, k=k + 1)
        log_scales = np.repeat(np.log(dist[:, 1:].mean(axis=1))[:, None], 3, axis=1)

    features = rng.stream(seed, rng.INIT_FEATURES).standard_normal(
        (n, FEATURE_DIM)) / np.sqrt(FEATURE_DIM)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return SceneModel(
        positions=points.copy(), log_scales=log_scales, rotations=rotations,
        opacity_logits=np.full(n, logit(0.1)), colors=cols, features=features,
    )


class _Adam:
    """Per-group Adam with bias correction; rows track densify edits."""

    def __init__(self, cfg: TrainConfig, scene: SceneModel):
        self.cfg = cfg
        self.t = 0
        self.m = {g: np.zeros_like(getattr(scene, g)) for g in PARAM_GROUPS}
        self.v = {g: np.zeros_like(getattr(scene, g)) for g in PARAM_GROUPS}

    def step(self, scene: SceneModel, grads) -> None:
        self.t += 1
        b1, b2 = self.cfg.adam_beta1, self.cfg.adam_beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for group in PARAM_GROUPS:
            g = getattr(grads, group)
            m = self.m[group]
            v = self.v[group]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            param = getattr(scene, group)
            param -= self.cfg.learning_rate(group) * (m / c1) / (np.sqrt(v / c2)
                                                                 + self.cfg.adam_eps)
        np.clip(scene.colors, 0.0, 1.0, out=scene.colors)

    def rebuild(self, keep: np.ndarray, n_new: int) -> None:
        """Keep moment rows for surviving Gaussians, zeros for new ones."""
        for group in PARAM_GROUPS:
            for state in (self.m, self.v):
                old = state[group][keep]
                state[group] = np.concatenate(
                    [old, np.zeros((n_new,) + old.shape[1:])])


def _sample_offsets(scene: SceneModel, idx: np.ndarray, gen) -> np.ndarray:
    """Draw one offset per selected Gaussian from its own N(0, Sigma)."""
    eps = gen.standard_normal((len(idx), 3))
    rot = quat_to_rotmat(scene.rotations[idx])
    return np.einsum("nij,nj->ni", rot, np.exp(scene.log_scales[idx]) * eps)


def _densify_and_prune(scene: SceneModel, adam: _Adam, mean_grad: np.ndarray,
                       cfg: TrainConfig, extent: float, gen) -> SceneModel:
    candidates = mean_grad > cfg.densify_grad_threshold
    small = np.exp(scene.log_scales).max(axis=1) <= 0.01 * extent
    clone = candidates & small
    split = candidates & ~small

    parts = {g: [getattr(scene, g)] for g in PARAM_GROUPS}
    n_new = 0
    if np.any(clone):
        idx = np.flatnonzero(clone)
        for g in PARAM_GROUPS:
            parts[g].append(getattr(scene, g)[idx].copy())
        parts["positions"][-1] = scene.positions[idx] + _sample_offsets(scene, idx, gen)
        n_new += len(idx)
    if np.any(split):
        idx = np.flatnonzero(split)
        for _ in range(2):
            for g in PARAM_GROUPS:
                parts[g].append(getattr(scene, g)[idx].copy())
            parts["positions"][-1] = scene.positions[idx] + _sample_offsets(scene, idx, gen)
            parts["log_scales"][-1] = scene.log_scales[idx] - np.log(1.6)
        n_new += 2 * len(idx)

    merged = {g: np.concatenate(parts[g]) for g in PARAM_GROUPS}
    # Split originals are replaced by their children; clones keep parents.
    keep_original = ~split
    keep = np.concatenate([keep_original, np.ones(n_new, dtype=bool)])

    alive = sigmoid(merged["opacity_logits"]) >= cfg.prune_opacity_threshold
    pruned = keep & alive
    if not np.any(pruned):
        pruned = keep  # never empty the scene

    adam.rebuild(pruned[:len(scene)], int(pruned[len(scene):].sum()))
    out = SceneModel(**{g: merged[g][pruned] for g in PARAM_GROUPS},
                     iteration=scene.iteration)
    return out


def train(scene: SceneModel, views, cfg: TrainConfig, loss_cfg: LossConfig):
    """Optimize a copy of `scene` against the given posed views.

    `views` is a list of (Camera, color image (H, W, 3), instance mask
    (H, W) with 0 = unlabeled). Returns (trained scene, history) where
    history holds one dict of loss terms per iteration.
    """
    if not views:
        raise ValueError("need at least one view")
    for cam, img, mask in views:
        if img.shape != (cam.height, cam.width, 3):
            raise ValueError(f"camera {cam.camera_id}: image shape {img.shape} "
                             f"does not match {cam.height}x{cam.width}")
        if mask.shape != (cam.height, cam.width):
            raise ValueError(f"camera {cam.camera_id}: mask shape mismatch")

    scene = scene.copy()
    adam = _Adam(cfg, scene)
    centroid = scene.positions.mean(axis=0)
    extent = float(np.max(np.linalg.norm(scene.positions - centroid, axis=1)))
    extent = max(extent, 1e-6)

    grad_accum = np.zeros(len(scene))
    seen = np.zeros(len(scene))
    history: list[dict[str, float]] = []
    densify_last = int(cfg.densify_until_fraction * cfg.iterations)

    for i in range(cfg.iterations):
        cam, img, mask = views[i % len(views)]
        render = rasterize(scene, cam, BACKGROUND)
        tl = total_loss(render, img, mask, scene, loss_cfg, seed=cfg.seed, step=i)
        terms = tl.terms()
        for name in ("rendering", "clustering", "regularization", "total"):
            if not np.isfinite(terms[name]):
                raise NumericalError(
                    f"non-finite {name} loss at iteration {i}")
        history.append(tl.terms())

        upstream = RenderOutput(
            color=tl.color_grad, feature=tl.feature_image_grad,
            alpha=np.zeros_like(render.alpha), depth=np.zeros_like(render.depth))
        grads = rasterize_backward(scene, cam, BACKGROUND, upstream)
        grads.features = grads.features + tl.feature_grad
        adam.step(scene, grads)

        grad_accum += np.linalg.norm(grads.mean2d, axis=1)
        seen += grads.visible

        if (i + 1) % cfg.densify_interval == 0 and (i + 1) <= densify_last:
            mean_grad = grad_accum / np.maximum(seen, 1.0)
            gen = rng.stream(cfg.seed, rng.DENSIFY, step=i)
            scene = _densify_and_prune(scene, adam, mean_grad, cfg, extent, gen)
            grad_accum = np.zeros(len(scene))
            seen = np.zeros(len(scene))

        scene.iteration += 1
    return scene, history
