"""Independent reference implementations used as test oracles.

Everything here is deliberately written on a different path from the
package: scalar per-pixel loops, scipy rotations, numeric Jacobians,
brute-force enumeration. Slow and simple beats fast and shared.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.spatial.transform import Rotation

from splatseg.core_model import Camera, SceneModel


def rotmat_from_quat_wxyz(q) -> np.ndarray:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def covariance_ref(log_scale, rotation) -> np.ndarray:
    r = rotmat_from_quat_wxyz(np.asarray(rotation) / np.linalg.norm(rotation))
    return r @ np.diag(np.exp(2.0 * np.asarray(log_scale))) @ r.T


def numeric_projection_jacobian(t, fx, fy, h=1e-6) -> np.ndarray:
    """Central-difference Jacobian of the pinhole map at camera point t."""

    def pin(p):
        return np.array([fx * p[0] / p[2], fy * p[1] / p[2]])

    j = np.zeros((2, 3))
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h
        j[:, k] = (pin(t + dp) - pin(t - dp)) / (2 * h)
    return j


def reference_render(scene: SceneModel, cam: Camera, background=(0.0, 0.0, 0.0)):
    """Naive full-sort per-pixel renderer following the compositing contract:
    skip a < 1/255, stop at transmittance < 1e-4, depth sort with index
    tie-break, 0.3-dilated EWA covariances, 3-sigma image culling.

    Returns (color, feature, alpha, depth) as float arrays.
    """
    h, w = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64)
    splats = []
    for i in range(len(scene)):
        t = cam.rotation @ scene.positions[i] + cam.translation
        if t[2] <= 0.01:
            continue
        mean = np.array([cam.fx * t[0] / t[2] + cam.cx,
                         cam.fy * t[1] / t[2] + cam.cy])
        jac = np.array([[cam.fx / t[2], 0.0, -cam.fx * t[0] / t[2] ** 2],
                        [0.0, cam.fy / t[2], -cam.fy * t[1] / t[2] ** 2]])
        m = jac @ cam.rotation
        cov = m @ covariance_ref(scene.log_scales[i], scene.rotations[i]) @ m.T
        cov = cov + 0.3 * np.eye(2)
        radius = 3.0 * math.sqrt(max(np.linalg.eigvalsh(cov)))
        if (mean[0] + radius < 0 or mean[0] - radius > w
                or mean[1] + radius < 0 or mean[1] - radius > h):
            continue
        alpha = 1.0 / (1.0 + math.exp(-scene.opacity_logits[i]))
        splats.append((t[2], i, mean, np.linalg.inv(cov), alpha))
    splats.sort(key=lambda s: (s[0], s[1]))

    color = np.zeros((h, w, 3))
    feature = np.zeros((h, w, 16))
    alpha_map = np.zeros((h, w))
    depth_map = np.zeros((h, w))
    for row in range(h):
        for col in range(w):
            px = np.array([col + 0.5, row + 0.5])
            trans = 1.0
            for depth, i, mean, conic, alpha in splats:
                d = px - mean
                a = alpha * math.exp(-0.5 * d @ conic @ d)
                if a < 1.0 / 255.0:
                    continue
                if trans < 1e-4:
                    break
                wgt = a * trans
                color[row, col] += wgt * scene.colors[i]
                feature[row, col] += wgt * scene.features[i]
                alpha_map[row, col] += wgt
                depth_map[row, col] += wgt * depth
                trans *= 1.0 - a
            color[row, col] += (1.0 - alpha_map[row, col]) * bg
    return color, feature, alpha_map, depth_map


SCENE_GROUPS = ("positions", "log_scales", "rotations", "opacity_logits",
                "colors", "features")


def scene_fd_grads(loss_fn, scene: SceneModel, step: float = 1e-4):
    """Central finite differences of loss_fn(scene) w.r.t. every parameter
    of every Gaussian; returns {group: array like the parameter}."""
    grads = {}
    for group in SCENE_GROUPS:
        base = getattr(scene, group)
        grad = np.zeros_like(base)
        flat = grad.reshape(-1)
        for k in range(base.size):
            for sign in (1.0, -1.0):
                probe = scene.copy()
                arr = getattr(probe, group).reshape(-1)
                arr[k] += sign * step
                flat[k] += sign * loss_fn(probe)
            flat[k] /= 2.0 * step
        grads[group] = grad
    return grads


def array_fd(f, x: np.ndarray, entries, step: float = 1e-4) -> np.ndarray:
    """Central differences of scalar f(x) along the given flat indices."""
    out = np.zeros(len(entries))
    for n, k in enumerate(entries):
        hi = x.copy()
        hi.reshape(-1)[k] += step
        lo = x.copy()
        lo.reshape(-1)[k] -= step
        out[n] = (f(hi) - f(lo)) / (2.0 * step)
    return out


def fd_compare(analytic: np.ndarray, numeric: np.ndarray,
               rel_tol: float = 1e-4, abs_floor: float = 1e-6):
    """Relative comparison where |analytic| > abs_floor; returns the worst
    relative error over the checked entries (0.0 if none checked)."""
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    mask = np.abs(analytic) > abs_floor
    if not mask.any():
        return 0.0, True
    rel = np.abs(analytic[mask] - numeric[mask]) / np.abs(analytic[mask])
    worst = float(rel.max())
    return worst, worst < rel_tol


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def brute_force_components(fg: np.ndarray, fhat: np.ndarray, t: float):
    """Partition of foreground pixels by 4-neighbor cosine >= t links,
    as a component-id image (-1 outside foreground; ids arbitrary)."""
    h, w = fg.shape
    uf = UnionFind(h * w)
    for r in range(h):
        for c in range(w):
            if not fg[r, c]:
                continue
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr >= h or cc >= w or not fg[rr, cc]:
                    continue
                if float(fhat[r, c] @ fhat[rr, cc]) >= t:
                    uf.union(r * w + c, rr * w + cc)
    out = np.full((h, w), -1, dtype=np.int64)
    for r in range(h):
        for c in range(w):
            if fg[r, c]:
                out[r, c] = uf.find(r * w + c)
    return out


def same_partition(a: np.ndarray, b: np.ndarray, bg_a=0, bg_b=-1) -> bool:
    """True when two labelings induce the same partition; the background
    sentinels must cover the same pixels."""
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    neg_a, neg_b = a == bg_a, b == bg_b
    if not np.array_equal(neg_a, neg_b):
        return False
    fwd, bwd = {}, {}
    for x, y in zip(a[~neg_a], b[~neg_b]):
        if fwd.setdefault(x, y) != y or bwd.setdefault(y, x) != x:
            return False
    return True


def brute_force_matched_iou(pred: np.ndarray, gt: np.ndarray, score) -> float:
    """Max over all one-to-one assignments of mean score over GT instances."""
    pred_ids = [int(i) for i in np.unique(pred) if i > 0]
    gt_ids = [int(i) for i in np.unique(gt) if i > 0]
    if not gt_ids:
        raise ValueError("no ground-truth instances")
    if not pred_ids:
        return 0.0
    table = {(p, g): score(pred == p, gt == g) for p in pred_ids for g in gt_ids}
    best = 0.0
    k = min(len(pred_ids), len(gt_ids))
    for chosen_gt in itertools.permutations(gt_ids, k):
        for chosen_pred in itertools.combinations(pred_ids, k):
            total = sum(table[(p, g)] for p, g in zip(chosen_pred, chosen_gt))
            best = max(best, total)
    return best / len(gt_ids)
