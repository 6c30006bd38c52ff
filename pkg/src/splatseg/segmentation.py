"""Inference-time uses of the learned feature field.

2D: splat the features, normalize per pixel, and group foreground pixels
(alpha >= 0.5) into instances by connecting 4-neighbors whose normalized
features have cosine similarity >= t (default 0.7). 3D: summarize a target
object as a unit feature prompt and select Gaussians by cosine similarity,
then tighten the selection with a statistical outlier filter and recover
spatially coherent stragglers inside the convex hull of the survivors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .core_model import Camera, SceneModel, clone_subset
from .errors import DataError
from .rasterizer import rasterize

SIMILARITY_T = 0.7        # same-instance cosine threshold
ALPHA_FOREGROUND = 0.5    # pixels below this alpha are background
MIN_COMPONENT_PIXELS = 20
OUTLIER_NEIGHBORS = 10
OUTLIER_SIGMA = 2.0
RECOVERY_FRACTION = 0.5   # hull-interior recovery bar, as a fraction of t


@dataclass
class FeaturePrompt:
    """Unit 16-vector summarizing a target object."""

    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if abs(np.linalg.norm(self.vector) - 1.0) > 1e-9:
            raise ValueError("feature prompt must be unit length")


def _normalized(vectors: np.ndarray) -> np.ndarray:
    """Row-normalize; all-zero rows stay zero (cosine 0 with everything)."""
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return np.where(norms > 0.0, vectors / np.where(norms == 0.0, 1.0, norms), 0.0)


def cluster_pixels(fg: np.ndarray, fhat: np.ndarray, t: float,
                   min_component: int = MIN_COMPONENT_PIXELS) -> np.ndarray:
    """Group foreground pixels into instances by 4-neighbor feature links.

    Pixels are connected when both are foreground and their (normalized)
    features have cosine similarity >= t; connected components smaller than
    `min_component` pixels are merged into the background; survivors are
    numbered 1..K by decreasing size.
    """
    h, w = fg.shape
    flat_id = np.arange(h * w).reshape(h, w)
    edges_i, edges_j = [], []
    # Horizontal and vertical 4-neighbor links between similar fg pixels.
    pair_fg = fg[:, :-1] & fg[:, 1:]
    cos = np.einsum("rck,rck->rc", fhat[:, :-1], fhat[:, 1:])
    link = pair_fg & (cos >= t)
    edges_i.append(flat_id[:, :-1][link])
    edges_j.append(flat_id[:, 1:][link])
    pair_fg = fg[:-1, :] & fg[1:, :]
    cos = np.einsum("rck,rck->rc", fhat[:-1, :], fhat[1:, :])
    link = pair_fg & (cos >= t)
    edges_i.append(flat_id[:-1, :][link])
    edges_j.append(flat_id[1:, :][link])

    fg_flat = np.flatnonzero(fg.ravel())
    if len(fg_flat) == 0:
        return np.zeros((h, w), dtype=np.int32)
    # Compact the graph to foreground nodes only.
    remap = np.full(h * w, -1, dtype=np.int64)
    remap[fg_flat] = np.arange(len(fg_flat))
    gi = remap[np.concatenate(edges_i)]
    gj = remap[np.concatenate(edges_j)]
    graph = coo_matrix((np.ones(len(gi)), (gi, gj)),
                       shape=(len(fg_flat), len(fg_flat)))
    _, comp = connected_components(graph, directed=False)

    sizes = np.bincount(comp)
    big = np.flatnonzero(sizes >= min_component)
    ordered = big[np.argsort(-sizes[big], kind="stable")]
    ids_of_comp = np.zeros(len(sizes), dtype=np.int32)
    ids_of_comp[ordered] = np.arange(1, len(ordered) + 1)

    out = np.zeros(h * w, dtype=np.int32)
    out[fg_flat] = ids_of_comp[comp]
    return out.reshape(h, w)


def render_instance_masks(scene: SceneModel, cam: Camera, t: float = SIMILARITY_T,
                          min_component: int = MIN_COMPONENT_PIXELS) -> np.ndarray:
    """Instance IDs per pixel (0 = background) from the splatted feature
    field: pixels with alpha < 0.5 are background, the rest are clustered by
    cosine similarity of their normalized composited features."""
    if not (0.0 < t < 1.0):
        raise ValueError("similarity threshold must lie in (0, 1)")
    render = rasterize(scene, cam)
    fg = render.alpha >= ALPHA_FOREGROUND
    fhat = _normalized(render.feature)
    return cluster_pixels(fg, fhat, t, min_component)


def match_mask_to_instance(prompt_mask: np.ndarray, instances: np.ndarray) -> int:
    """Instance ID with maximum IoU against a binary prompt mask; ties go to
    the smaller ID."""
    prompt_mask = np.asarray(prompt_mask) != 0
    instances = np.asarray(instances)
    if prompt_mask.shape != instances.shape:
        raise ValueError("prompt mask and instance image differ in shape")
    if not prompt_mask.any():
        raise DataError("prompt mask is empty")
    ids = np.unique(instances)
    ids = ids[ids > 0]
    if len(ids) == 0:
        raise DataError("instance image contains no instances")
    best_id, best_iou = -1, -1.0
    for inst in ids:
        m = instances == inst
        inter = np.logical_and(m, prompt_mask).sum()
        union = np.logical_or(m, prompt_mask).sum()
        score = inter / union
        if score > best_iou:
            best_id, best_iou = int(inst), score
    return best_id


def feature_prompt_from_mask(scene: SceneModel, cam: Camera,
                             prompt_mask: np.ndarray) -> FeaturePrompt:
    """Normalized mean of the normalized composited features under the mask
    (foreground pixels only)."""
    prompt_mask = np.asarray(prompt_mask) != 0
    if prompt_mask.shape != (cam.height, cam.width):
        raise ValueError("prompt mask does not match the camera image size")
    render = rasterize(scene, cam)
    sel = prompt_mask & (render.alpha >= ALPHA_FOREGROUND)
    if not sel.any():
        raise DataError("prompt mask covers no foreground pixels")
    fhat = _normalized(render.feature[sel])
    mean = fhat.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise DataError("features under the prompt mask cancel out")
    return FeaturePrompt(mean / norm)


def select_by_similarity(scene: SceneModel, prompt: FeaturePrompt,
                         t: float = SIMILARITY_T) -> np.ndarray:
    """Stage-1 selection: indices of Gaussians with cos(feature, prompt) >= t.
    The viewer implements exactly this rule."""
    if not (0.0 < t < 1.0):
        raise ValueError("similarity threshold must lie in (0, 1)")
    sims = _normalized(scene.features) @ prompt.vector
    return np.flatnonzero(sims >= t)


def extract_object_3d(scene: SceneModel, prompt: FeaturePrompt,
                      t: float = SIMILARITY_T,
                      outlier_neighbors: int = OUTLIER_NEIGHBORS,
                      outlier_sigma: float = OUTLIER_SIGMA,
                      recovery_fraction: float = RECOVERY_FRACTION):
    """Three-stage 3D extraction; returns (sub-scene, index array).

    1. similarity selection at threshold t;
    2. drop selected Gaussians whose mean distance to their nearest selected
       neighbors exceeds mu + outlier_sigma * sd of that statistic;
    3. recover any scene Gaussian whose center lies inside the convex hull
       of the survivors and whose similarity clears recovery_fraction * t.
    Stage 3 only ever adds; stage-2 survivors are always kept.
    """
    stage1 = select_by_similarity(scene, prompt, t)
    if len(stage1) == 0:
        raise DataError("no Gaussians match prompt")

    survivors = stage1
    if len(stage1) >= 2:
        pts = scene.positions[stage1]
        k = min(outlier_neighbors, len(stage1) - 1)
        dist, _ = cKDTree(pts).query(pts, k=k + 1)
        mean_dist = dist[:, 1:].mean(axis=1)
        bar = mean_dist.mean() + outlier_sigma * mean_dist.std()
        survivors = stage1[mean_dist <= bar]

    final = survivors
    hull_pts = scene.positions[survivors]
    if len(survivors) >= 4:
        try:
            hull = ConvexHull(hull_pts)
        except QhullError:
            hull = None  # degenerate (flat/collinear) survivor set
        if hull is not None:
            planes = hull.equations  # rows (a, b, c, d): ax + by + cz + d <= 0 inside
            inside = np.all(
                scene.positions @ planes[:, :3].T + planes[:, 3] <= 1e-9, axis=1)
            sims = _normalized(scene.features) @ prompt.vector
            recovered = np.flatnonzero(inside & (sims >= recovery_fraction * t))
            final = np.union1d(survivors, recovered)

    final = np.sort(final)
    return clone_subset(scene, final), final
