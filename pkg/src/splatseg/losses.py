"""The three training loss terms and their exact gradients.

    total = rendering + lambda_clustering * clustering + regularization

* rendering: (1 - lambda_dssim) * L1 + lambda_dssim * (1 - SSIM), gradient
  w.r.t. the rendered color image.
* clustering: per-view prototype InfoNCE over sampled labeled pixels of the
  rendered feature image, prototypes held constant under differentiation;
  gradient w.r.t. the feature image (nonzero only at sampled pixels).
* regularization: cosine agreement between k-nearest-neighbor Gaussians plus
  a hinge pushing far-apart Gaussians to dissimilar features; gradient
  w.r.t. the per-Gaussian feature vectors.

All gradients are closed-form and finite-difference checked in the tests.
Pixel and far-pair sampling use counter-based streams (rng.stream) so every
loss value is a deterministic function of (inputs, seed, step).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d
from scipy.spatial import cKDTree

from . import rng
from .core_model import FEATURE_DIM, SceneModel
from .rasterizer import RenderOutput

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
ZERO_FEATURE_NORM = 1e-12  # sampled pixels below this carry no signal


@dataclass
class LossConfig:
    lambda_dssim: float = 0.2
    lambda_clustering: float = 0.1
    temperature: float = 0.1
    samples_per_view: int = 4096
    knn_k: int = 5
    far_m: int = 5
    lambda_near: float = 1.0
    lambda_far: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0 or self.samples_per_view <= 0:
            raise ValueError("temperature and samples_per_view must be positive")
        if self.knn_k <= 0 or self.far_m <= 0:
            raise ValueError("knn_k and far_m must be positive")
        if min(self.lambda_dssim, self.lambda_clustering,
               self.lambda_near, self.lambda_far) < 0:
            raise ValueError("loss weights must be non-negative")


def _gauss_kernel() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    k = np.exp(-(x ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return k / k.sum()


_KERNEL = _gauss_kernel()


def _blur(img: np.ndarray) -> np.ndarray:
    """Separable 11x11 Gaussian filter, zero padded. Symmetric kernel, so
    the operator is its own adjoint (used directly in the backward pass)."""
    out = correlate1d(img, _KERNEL, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _KERNEL, axis=1, mode="constant", cval=0.0)


def ssim(x: np.ndarray, y: np.ndarray):
    """Mean SSIM over an (H, W, C) pair in [0, 1], plus d(ssim)/dx.

    Local statistics from a Gaussian window per channel; the scalar is the
    mean of the per-pixel-per-channel SSIM map.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"images differ in shape: {x.shape} vs {y.shape}")
    mu_x, mu_y = _blur(x), _blur(y)
    sxx, syy, sxy = _blur(x * x), _blur(y * y), _blur(x * y)
    var_x = sxx - mu_x ** 2
    var_y = syy - mu_y ** 2
    cov = sxy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    denom = b1 * b2
    smap = a1 * a2 / denom
    value = float(smap.mean())

    u = 1.0 / x.size  # upstream of the mean, per map entry
    d_a1 = a2 / denom
    d_a2 = a1 / denom
    d_b1 = -smap / b1
    d_b2 = -smap / b2
    d_mu_x = 2.0 * (mu_y * (d_a1 - d_a2) + mu_x * (d_b1 - d_b2))
    d_sxx = d_b2
    d_sxy = 2.0 * d_a2
    grad = _blur(u * d_mu_x) + 2.0 * x * _blur(u * d_sxx) + y * _blur(u * d_sxy)
    return value, grad


def rendering_loss(rendered: np.ndarray, gt: np.ndarray, lambda_dssim: float = 0.2):
    """(1 - lam) * mean|r - gt| + lam * (1 - SSIM); gradient w.r.t. rendered."""
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if rendered.shape != gt.shape:
        raise ValueError(f"images differ in shape: {rendered.shape} vs {gt.shape}")
    diff = rendered - gt
    l1 = float(np.abs(diff).mean())
    s, s_grad = ssim(rendered, gt)
    loss = (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s)
    grad = (1.0 - lambda_dssim) * np.sign(diff) / diff.size - lambda_dssim * s_grad
    return loss, grad


def _sample_labeled_pixels(mask: np.ndarray, count: int, seed: int, step: int):
    """Up to `count` labeled pixel indices (flat), uniform without
    replacement, independent of the label values themselves."""
    labeled = np.flatnonzero(mask.ravel() > 0)
    if len(labeled) <= count:
        return labeled
    gen = rng.stream(seed, rng.PIXEL_SAMPLING, step)
    return labeled[gen.choice(len(labeled), size=count, replace=False)]


def contrastive_prototypes(feature_image: np.ndarray, mask: np.ndarray,
                           cfg: LossConfig, seed: int = 0, step: int = 0):
    """Sampled pixels, their normalized features, and per-instance prototypes.

    Prototype slots are ordered by first occurrence among the samples, which
    makes every downstream reduction bitwise invariant to relabeling of the
    mask IDs. Returns (pixels, fhat, norms, slot, prototypes).
    """
    feature_image = np.asarray(feature_image, dtype=np.float64)
    mask = np.asarray(mask)
    if feature_image.shape[:2] != mask.shape:
        raise ValueError(
            f"mask shape {mask.shape} does not match feature image {feature_image.shape[:2]}")
    pixels = _sample_labeled_pixels(mask, cfg.samples_per_view, seed, step)
    feats = feature_image.reshape(-1, feature_image.shape[-1])[pixels]
    norms = np.linalg.norm(feats, axis=1)
    keep = norms > ZERO_FEATURE_NORM
    pixels, feats, norms = pixels[keep], feats[keep], norms[keep]
    labels = mask.ravel()[pixels]

    # Slot = rank of the label's first occurrence in sample order.
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    slot_of_class = np.argsort(np.argsort(first))
    slot = slot_of_class[inverse]
    n_class = len(first)

    fhat = feats / norms[:, None]
    acc = np.zeros((n_class, feats.shape[1]))
    np.add.at(acc, slot, fhat)
    counts = np.bincount(slot, minlength=n_class).astype(np.float64)
    mean = acc / counts[:, None]
    pn = np.linalg.norm(mean, axis=1)
    protos = np.where(pn[:, None] > 0.0, mean / np.where(pn == 0.0, 1.0, pn)[:, None], 0.0)
    return pixels, fhat, norms, slot, protos


def contrastive_clustering_loss(feature_image: np.ndarray, mask: np.ndarray,
                                cfg: LossConfig, seed: int = 0, step: int = 0,
                                prototypes: np.ndarray | None = None):
    """Prototype InfoNCE over sampled labeled pixels.

    loss = mean_s -log softmax(cos(fhat_s, protos) / tau)[slot_s], with the
    prototypes treated as constants (stop-gradient). Passing `prototypes`
    overrides the ones computed from this image; shapes must agree with the
    slots derived from the mask. Returns (loss, gradient w.r.t. the feature
    image) where the gradient is zero away from the sampled pixels.
    """
    feature_image = np.asarray(feature_image, dtype=np.float64)
    grad = np.zeros_like(feature_image)
    pixels, fhat, norms, slot, protos = contrastive_prototypes(
        feature_image, mask, cfg, seed, step)
    if prototypes is not None:
        if prototypes.shape != protos.shape:
            raise ValueError("prototype override has wrong shape")
        protos = prototypes
    if protos.shape[0] < 2 or len(pixels) == 0:
        return 0.0, grad  # no contrast available

    logits = (fhat @ protos.T) / cfg.temperature          # (S, K)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    own = logits[np.arange(len(slot)), slot]
    loss = float(np.mean(lse - own))

    softmax = np.exp(logits - lse[:, None])
    softmax[np.arange(len(slot)), slot] -= 1.0
    d_fhat = (softmax @ protos) / (cfg.temperature * len(slot))
    # Through the normalization: d/df = (I - fhat fhat^T) / |f|.
    d_f = (d_fhat - fhat * np.einsum("sk,sk->s", d_fhat, fhat)[:, None]) / norms[:, None]
    flat = grad.reshape(-1, feature_image.shape[-1])
    np.add.at(flat, pixels, d_f)
    return loss, grad


def spatial_regularization(scene: SceneModel, cfg: LossConfig,
                           seed: int = 0, step: int = 0):
    """Feature-space smoothness over 3D neighborhoods.

    near: mean over each Gaussian's knn_k nearest neighbors of (1 - cos).
    far:  mean over far_m seeded draws per Gaussian, taken from outside
          3x its kNN radius, of max(0, cos).
    Returns lambda_near * near + lambda_far * far and the exact gradient
    w.r.t. scene.features (positions are treated as constants).
    """
    grad = np.zeros_like(scene.features)
    if cfg.lambda_near == 0.0 and cfg.lambda_far == 0.0:
        return 0.0, grad
    n = len(scene)
    if n < cfg.knn_k + cfg.far_m + 1:
        raise ValueError(
            f"need at least {cfg.knn_k + cfg.far_m + 1} Gaussians, got {n}")

    feats = scene.features
    norms = np.linalg.norm(feats, axis=1)
    fhat = feats / norms[:, None]

    tree = cKDTree(scene.positions)
    dist, nbr = tree.query(scene.positions, k=cfg.knn_k + 1)
    nbr, knn_radius = nbr[:, 1:], dist[:, -1]

    i_near = np.repeat(np.arange(n), cfg.knn_k)
    j_near = nbr.ravel()
    cos_near = np.einsum("pk,pk->p", fhat[i_near], fhat[j_near])
    near = float(np.mean(1.0 - cos_near))

    # Far pairs: per-row seeded draws (with replacement) from outside 3r_i.
    pair_dist = np.linalg.norm(
        scene.positions[:, None, :] - scene.positions[None, :, :], axis=2)
    far_ok = pair_dist > 3.0 * knn_radius[:, None]
    gen = rng.stream(seed, rng.FAR_SAMPLING, step)
    i_far_parts, j_far_parts = [], []
    for i in range(n):
        cand = np.flatnonzero(far_ok[i])
        if len(cand) == 0:
            continue
        j_far_parts.append(cand[gen.integers(0, len(cand), size=cfg.far_m)])
        i_far_parts.append(np.full(cfg.far_m, i))
    if i_far_parts:
        i_far = np.concatenate(i_far_parts)
        j_far = np.concatenate(j_far_parts)
        cos_far = np.einsum("pk,pk->p", fhat[i_far], fhat[j_far])
        far = float(np.mean(np.maximum(cos_far, 0.0)))
    else:
        i_far = j_far = cos_far = np.zeros(0, dtype=np.int64)
        far = 0.0

    loss = cfg.lambda_near * near + cfg.lambda_far * far

    def add_cos_grad(i_idx, j_idx, cos_ij, coef):
        # d cos(fhat_i, fhat_j) / d f_i = (fhat_j - cos * fhat_i) / |f_i|
        gi = coef[:, None] * (fhat[j_idx] - cos_ij[:, None] * fhat[i_idx]) \
            / norms[i_idx][:, None]
        gj = coef[:, None] * (fhat[i_idx] - cos_ij[:, None] * fhat[j_idx]) \
            / norms[j_idx][:, None]
        np.add.at(grad, i_idx, gi)
        np.add.at(grad, j_idx, gj)

    add_cos_grad(i_near, j_near,
                 cos_near, np.full(len(i_near), -cfg.lambda_near / len(i_near)))
    if len(i_far):
        coef = np.where(cos_far > 0.0, cfg.lambda_far / len(i_far), 0.0)
        add_cos_grad(i_far, j_far, cos_far, coef)
    return loss, grad


@dataclass
class TotalLoss:
    total: float
    rendering: float
    clustering: float
    regularization: float
    color_grad: np.ndarray          # w.r.t. rendered color image
    feature_image_grad: np.ndarray  # w.r.t. rendered feature image
    feature_grad: np.ndarray        # w.r.t. per-Gaussian features (N, 16)

    def terms(self) -> dict[str, float]:
        return {"total": self.total, "rendering": self.rendering,
                "clustering": self.clustering, "regularization": self.regularization}


def total_loss(render: RenderOutput, gt_color: np.ndarray, gt_mask: np.ndarray,
               scene: SceneModel, cfg: LossConfig, seed: int = 0, step: int = 0,
               frozen_prototypes: np.ndarray | None = None) -> TotalLoss:
    """Weighted sum of the three terms plus all gradients.

    `frozen_prototypes` pins the clustering prototypes to externally
    computed values; the finite-difference harness uses this to probe the
    stop-gradient definition of the clustering term.
    """
    r_loss, r_grad = rendering_loss(render.color, gt_color, cfg.lambda_dssim)
    if cfg.lambda_clustering > 0.0:
        c_loss, c_grad = contrastive_clustering_loss(
            render.feature, gt_mask, cfg, seed, step, prototypes=frozen_prototypes)
        c_grad = cfg.lambda_clustering * c_grad
    else:
        c_loss, c_grad = 0.0, np.zeros_like(render.feature)
    g_loss, g_grad = spatial_regularization(scene, cfg, seed, step)
    return TotalLoss(
        total=r_loss + cfg.lambda_clustering * c_loss + g_loss,
        rendering=r_loss, clustering=c_loss, regularization=g_loss,
        color_grad=r_grad, feature_image_grad=c_grad, feature_grad=g_grad,
    )
