"""Differentiable forward splatting and its analytic backward pass.

Forward, per Gaussian k and camera (W, tr) with t = W p_k + tr, depth t_z:

    mean2d  mu = (fx tx/tz + cx,  fy ty/tz + cy)
    J       = [[fx/tz, 0, -fx tx/tz^2], [0, fy/tz, -fy ty/tz^2]]
    cov2d   C = J (W Sigma W^T) J^T + 0.3 I     (isotropic dilation, pixels^2)
    g(px)   = exp(-1/2 d^T C^-1 d),  d = px - mu,  px at pixel centers
    a       = sigmoid(opacity_logit) * g

Splats are composited front-to-back in depth order (ties broken by source
index, ascending). Contributions with a < 1/255 are skipped without touching
transmittance; a ray stops once its transmittance falls below 1e-4:

    w_i   = a_i * prod_{j<i, composited} (1 - a_j)
    color = sum w_i c_i + (1 - sum w_i) * background
    feature / depth / alpha composited with the same w_i (zero background).

Culling: depth <= 0.01, or the projected 3-sigma extent misses the image.

The backward pass reverses this chain analytically for every Gaussian
parameter (position, log_scale, rotation quaternion, opacity logit, color,
feature). Gradients of the discrete decisions (sort order, skip/stop rules,
culling) are zero, as is standard. Per-pixel work is organized in 16x16
tiles; binning only removes splats whose contribution is below the skip
threshold everywhere in a tile, so tiled output is identical to a full
per-pixel evaluation. Tiles may be processed by a thread pool; per-Gaussian
gradient partials are reduced in fixed tile order so results are bitwise
reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core_model import Camera, FEATURE_DIM, Gaussian, SceneModel, covariance3d, \
    quat_to_rotmat, scene_covariances, sigmoid

NEAR_PLANE = 0.01
COV2D_DILATION = 0.3          # pixels^2, added to every projected covariance
ALPHA_SKIP = 1.0 / 255.0      # contributions below this are skipped
TRANSMITTANCE_STOP = 1e-4     # ray terminates below this transmittance
CULL_SIGMA = 3.0              # extent multiplier for image-bounds culling
TILE = 16

_num_threads = 1


def set_num_threads(n: int) -> None:
    """Cap worker threads used for tile processing (1 = sequential)."""
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads() -> int:
    return _num_threads


@dataclass
class Projected2DGaussian:
    mean2d: np.ndarray   # (2,) pixels
    cov2d: np.ndarray    # (2, 2) pixels^2, dilated
    depth: float         # camera-frame z
    source_index: int


@dataclass
class RenderOutput:
    color: np.ndarray    # (H, W, 3)
    feature: np.ndarray  # (H, W, 16)
    alpha: np.ndarray    # (H, W)
    depth: np.ndarray    # (H, W)
    # index of the Gaussian with the largest compositing weight per pixel,
    # -1 where nothing contributed; filled only when requested.
    argmax_index: np.ndarray | None = None


@dataclass
class ParamGrads:
    """Per-Gaussian loss gradients, rows aligned with the scene."""

    positions: np.ndarray       # (N, 3)
    log_scales: np.ndarray      # (N, 3)
    rotations: np.ndarray       # (N, 4)
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray          # (N, 3)
    features: np.ndarray        # (N, 16)
    mean2d: np.ndarray          # (N, 2) screen-space gradient, for densification
    visible: np.ndarray         # (N,) bool, False for culled Gaussians

    @classmethod
    def zeros(cls, n: int) -> "ParamGrads":
        return cls(
            positions=np.zeros((n, 3)), log_scales=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)), opacity_logits=np.zeros(n),
            colors=np.zeros((n, 3)), features=np.zeros((n, FEATURE_DIM)),
            mean2d=np.zeros((n, 2)), visible=np.zeros(n, dtype=bool),
        )


def _perspective_jacobian(t: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """J of (fx x/z, fy y/z) at camera-frame points t: (..., 2, 3)."""
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    j = np.zeros(t.shape[:-1] + (2, 3))
    j[..., 0, 0] = fx / tz
    j[..., 0, 2] = -fx * tx / tz**2
    j[..., 1, 1] = fy / tz
    j[..., 1, 2] = -fy * ty / tz**2
    return j


def project(g: Gaussian, cam: Camera, source_index: int = 0) -> Projected2DGaussian | None:
    """EWA projection of one Gaussian; None when culled."""
    t = cam.world_to_camera(g.position)
    if t[2] <= NEAR_PLANE:
        return None
    mean2d = np.array([cam.fx * t[0] / t[2] + cam.cx,
                       cam.fy * t[1] / t[2] + cam.cy])
    j = _perspective_jacobian(t, cam.fx, cam.fy)
    m = j @ cam.rotation
    cov2d = m @ covariance3d(g) @ m.T + COV2D_DILATION * np.eye(2)
    cov2d = 0.5 * (cov2d + cov2d.T)
    radius = CULL_SIGMA * math.sqrt(float(np.max(np.linalg.eigvalsh(cov2d))))
    if (mean2d[0] + radius < 0 or mean2d[0] - radius > cam.width
            or mean2d[1] + radius < 0 or mean2d[1] - radius > cam.height):
        return None
    return Projected2DGaussian(mean2d=mean2d, cov2d=cov2d,
                               depth=float(t[2]), source_index=source_index)


class _Projection:
    """Vectorized projection of a whole scene, depth-sorted.

    Arrays prefixed s_ are in front-to-back order over the surviving
    Gaussians; s_src maps back to original scene indices.
    """

    def __init__(self, scene: SceneModel, cam: Camera):
        n = len(scene)
        t = scene.positions @ cam.rotation.T + cam.translation  # (N, 3)
        depth = t[:, 2]
        in_front = depth > NEAR_PLANE
        # Work only on the in-front subset; cov math divides by tz.
        idx = np.flatnonzero(in_front)
        ti = t[idx]
        tz = ti[:, 2]
        mean2d = np.stack([cam.fx * ti[:, 0] / tz + cam.cx,
                           cam.fy * ti[:, 1] / tz + cam.cy], axis=1)
        j = _perspective_jacobian(ti, cam.fx, cam.fy)         # (M, 2, 3)
        sigma3 = scene_covariances(scene)[idx]                # (M, 3, 3)
        m3 = np.einsum("ab,nbc,dc->nad", cam.rotation, sigma3, cam.rotation)
        cov2d = np.einsum("nab,nbc,ndc->nad", j, m3, j)
        cov2d[:, 0, 0] += COV2D_DILATION
        cov2d[:, 1, 1] += COV2D_DILATION
        cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))

        # Largest eigenvalue of each 2x2 for the 3-sigma culling radius.
        half_tr = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
        det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
        lam_max = half_tr + np.sqrt(np.maximum(half_tr**2 - det, 0.0))
        radius = CULL_SIGMA * np.sqrt(lam_max)
        on_image = ((mean2d[:, 0] + radius >= 0) & (mean2d[:, 0] - radius <= cam.width)
                    & (mean2d[:, 1] + radius >= 0) & (mean2d[:, 1] - radius <= cam.height))
        kept = np.flatnonzero(on_image)
        idx = idx[kept]

        order = np.argsort(depth[idx], kind="stable")  # ties: source index ascending
        self.s_src = idx[order]
        sel = self.s_src
        loc = kept[order]

        self.s_t = t[sel]
        self.s_depth = depth[sel]
        self.s_mean2d = mean2d[loc]
        self.s_cov2d = cov2d[loc]
        self.s_j = j[loc]
        self.s_m3 = m3[loc]
        self.s_sigma3 = sigma3[loc]
        det_s = det[loc]
        inv = np.empty_like(self.s_cov2d)
        inv[:, 0, 0] = self.s_cov2d[:, 1, 1]
        inv[:, 1, 1] = self.s_cov2d[:, 0, 0]
        inv[:, 0, 1] = -self.s_cov2d[:, 0, 1]
        inv[:, 1, 0] = -self.s_cov2d[:, 1, 0]
        self.s_conic = inv / det_s[:, None, None]
        self.s_alpha = sigmoid(scene.opacity_logits[sel])
        self.s_color = scene.colors[sel]
        self.s_feature = scene.features[sel]

        # Half-widths of the axis-aligned box outside of which a < 1/255
        # everywhere, so tile binning cannot change the composited result.
        cutoff = np.sqrt(2.0 * np.maximum(np.log(self.s_alpha / ALPHA_SKIP), 0.0))
        self.s_hx = cutoff * np.sqrt(self.s_cov2d[:, 0, 0])
        self.s_hy = cutoff * np.sqrt(self.s_cov2d[:, 1, 1])

    def __len__(self):
        return len(self.s_src)


def _tile_bins(prep: _Projection, width: int, height: int):
    """Assign sorted splats to 16x16 tiles; returns (ntx, nty, bins) where
    bins[tile_index] lists sorted-splat rows in depth order."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    bins: list[list[int]] = [[] for _ in range(ntx * nty)]
    # Pixel column c has center x = c + 0.5; splat spans cols where
    # |x - mu_x| <= hx, i.e. c in [mu_x - hx - 0.5, mu_x + hx - 0.5].
    x0 = np.floor(prep.s_mean2d[:, 0] - prep.s_hx - 0.5).astype(np.int64)
    x1 = np.floor(prep.s_mean2d[:, 0] + prep.s_hx - 0.5).astype(np.int64)
    y0 = np.floor(prep.s_mean2d[:, 1] - prep.s_hy - 0.5).astype(np.int64)
    y1 = np.floor(prep.s_mean2d[:, 1] + prep.s_hy - 0.5).astype(np.int64)
    tx0 = np.clip(x0 // TILE, 0, ntx - 1)
    tx1 = np.clip(x1 // TILE, 0, ntx - 1)
    ty0 = np.clip(y0 // TILE, 0, nty - 1)
    ty1 = np.clip(y1 // TILE, 0, nty - 1)
    visible = (x1 >= 0) & (x0 < width) & (y1 >= 0) & (y0 < height)
    for k in range(len(prep)):
        if not visible[k]:
            continue
        for ty in range(ty0[k], ty1[k] + 1):
            base = ty * ntx
            for tx in range(tx0[k], tx1[k] + 1):
                bins[base + tx].append(k)
    return ntx, nty, bins


def _tile_pixels(tx: int, ty: int, width: int, height: int):
    c0, c1 = tx * TILE, min(tx * TILE + TILE, width)
    r0, r1 = ty * TILE, min(ty * TILE + TILE, height)
    cols = np.arange(c0, c1)
    rows = np.arange(r0, r1)
    px = np.repeat(rows, len(cols)), np.tile(cols, len(rows))  # row, col indices
    x = px[1] + 0.5
    y = px[0] + 0.5
    return (r0, r1, c0, c1), x, y


def _composite(prep: _Projection, rows: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Per-tile weights. Returns (dx, dy, g, a, T, w) with shape (n, P);
    a is zeroed below the skip threshold, w respects the stop rule."""
    dx = x[None, :] - prep.s_mean2d[rows, 0][:, None]
    dy = y[None, :] - prep.s_mean2d[rows, 1][:, None]
    c00 = prep.s_conic[rows, 0, 0][:, None]
    c01 = prep.s_conic[rows, 0, 1][:, None]
    c11 = prep.s_conic[rows, 1, 1][:, None]
    power = 0.5 * (c00 * dx * dx + 2.0 * c01 * dx * dy + c11 * dy * dy)
    g = np.exp(-power)
    a = prep.s_alpha[rows][:, None] * g
    a = np.where(a >= ALPHA_SKIP, a, 0.0)
    trans = np.cumprod(1.0 - a, axis=0)
    t_before = np.empty_like(trans)
    t_before[0] = 1.0
    t_before[1:] = trans[:-1]
    w = np.where(t_before >= TRANSMITTANCE_STOP, a * t_before, 0.0)
    return dx, dy, g, a, t_before, w


def _run_tiles(jobs, worker):
    """Run per-tile jobs, returning results in tile order regardless of the
    execution schedule."""
    if _num_threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=_num_threads) as pool:
            return list(pool.map(worker, jobs))
    return [worker(j) for j in jobs]


def rasterize(scene: SceneModel, cam: Camera, background=None,
              want_argmax: bool = False) -> RenderOutput:
    """Render color, feature, alpha and expected-depth images.

    `background` composites under the color channels only; features, alpha
    and depth have an implicit zero background.
    """
    bg = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
    if bg.shape != (3,):
        raise ValueError("background must be a 3-vector")
    h, w = cam.height, cam.width
    out = RenderOutput(
        color=np.empty((h, w, 3)), feature=np.zeros((h, w, FEATURE_DIM)),
        alpha=np.zeros((h, w)), depth=np.zeros((h, w)),
        argmax_index=(np.full((h, w), -1, dtype=np.int64) if want_argmax else None),
    )
    out.color[:] = bg

    prep = _Projection(scene, cam)
    if len(prep) == 0:
        return out
    ntx, nty, bins = _tile_bins(prep, w, h)

    def work(job):
        tile_idx, rows = job
        (r0, r1, c0, c1), x, y = _tile_pixels(tile_idx % ntx, tile_idx // ntx, w, h)
        _, _, _, _, _, wgt = _composite(prep, rows, x, y)
        acc = wgt.sum(axis=0)
        color = wgt.T @ prep.s_color[rows] + (1.0 - acc)[:, None] * bg[None, :]
        feat = wgt.T @ prep.s_feature[rows]
        depth = wgt.T @ prep.s_depth[rows]
        amax = None
        if want_argmax:
            best = np.argmax(wgt, axis=0)
            amax = np.where(wgt.max(axis=0) > 0.0, prep.s_src[rows][best], -1)
        return (r0, r1, c0, c1), color, feat, acc, depth, amax

    jobs = [(i, np.asarray(b, dtype=np.int64)) for i, b in enumerate(bins) if b]
    for (r0, r1, c0, c1), color, feat, acc, depth, amax in _run_tiles(jobs, work):
        shape = (r1 - r0, c1 - c0)
        out.color[r0:r1, c0:c1] = color.reshape(shape + (3,))
        out.feature[r0:r1, c0:c1] = feat.reshape(shape + (FEATURE_DIM,))
        out.alpha[r0:r1, c0:c1] = acc.reshape(shape)
        out.depth[r0:r1, c0:c1] = depth.reshape(shape)
        if want_argmax:
            out.argmax_index[r0:r1, c0:c1] = amax.reshape(shape)
    return out


def rasterize_backward(scene: SceneModel, cam: Camera, background,
                       upstream: RenderOutput) -> ParamGrads:
    """Gradients of sum(upstream . render outputs) w.r.t. every Gaussian
    parameter. Culled Gaussians receive zero gradient; `visible` marks the
    rows that survived projection."""
    bg = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
    h, w = cam.height, cam.width
    shapes = {"color": (h, w, 3), "feature": (h, w, FEATURE_DIM),
              "alpha": (h, w), "depth": (h, w)}
    for name, shape in shapes.items():
        arr = getattr(upstream, name)
        if arr is None or np.shape(arr) != shape:
            raise ValueError(
                f"upstream.{name} has shape {np.shape(arr)}, expected {shape}")

    grads = ParamGrads.zeros(len(scene))
    prep = _Projection(scene, cam)
    ns = len(prep)
    if ns == 0:
        return grads
    grads.visible[prep.s_src] = True
    ntx, nty, bins = _tile_bins(prep, w, h)

    color_minus_bg = prep.s_color - bg[None, :]

    def work(job):
        tile_idx, rows = job
        (r0, r1, c0, c1), x, y = _tile_pixels(tile_idx % ntx, tile_idx // ntx, w, h)
        npix = len(x)
        g_col = upstream.color[r0:r1, c0:c1].reshape(npix, 3)
        g_feat = upstream.feature[r0:r1, c0:c1].reshape(npix, FEATURE_DIM)
        g_alpha = upstream.alpha[r0:r1, c0:c1].reshape(npix)
        g_depth = upstream.depth[r0:r1, c0:c1].reshape(npix)

        dx, dy, g, a, t_before, wgt = _composite(prep, rows, x, y)
        # dL/dw for splat row at pixel: what one unit of weight changes.
        r = (color_minus_bg[rows] @ g_col.T + prep.s_feature[rows] @ g_feat.T
             + g_alpha[None, :] + prep.s_depth[rows][:, None] * g_depth[None, :])
        wr = wgt * r
        # Suffix sums over later (composited) splats: dL/da_i picks up
        # -w_j r_j / (1 - a_i) for every j > i it attenuates.
        suffix = np.cumsum(wr[::-1], axis=0)[::-1] - wr
        active = wgt > 0.0
        da = np.where(active, t_before * r - suffix / (1.0 - a), 0.0)

        d_opacity_alpha = (g * da).sum(axis=1)          # dL/d alpha_k (n,)
        dsig = -a * da                                  # dL/d power, per pixel
        c00 = prep.s_conic[rows, 0, 0][:, None]
        c01 = prep.s_conic[rows, 0, 1][:, None]
        c11 = prep.s_conic[rows, 1, 1][:, None]
        dmu = np.stack([
            (dsig * -(c00 * dx + c01 * dy)).sum(axis=1),
            (dsig * -(c01 * dx + c11 * dy)).sum(axis=1),
        ], axis=1)
        # Matrix-entry gradient of the conic (inverse covariance).
        dconic = np.empty((len(rows), 2, 2))
        dconic[:, 0, 0] = (dsig * 0.5 * dx * dx).sum(axis=1)
        dconic[:, 0, 1] = (dsig * 0.5 * dx * dy).sum(axis=1)
        dconic[:, 1, 0] = dconic[:, 0, 1]
        dconic[:, 1, 1] = (dsig * 0.5 * dy * dy).sum(axis=1)
        dcolor = wgt @ g_col
        dfeature = wgt @ g_feat
        ddepth = wgt @ g_depth
        return rows, d_opacity_alpha, dmu, dconic, dcolor, dfeature, ddepth

    n_s = ns
    acc_dalpha = np.zeros(n_s)
    acc_dmu = np.zeros((n_s, 2))
    acc_dconic = np.zeros((n_s, 2, 2))
    acc_dcolor = np.zeros((n_s, 3))
    acc_dfeature = np.zeros((n_s, FEATURE_DIM))
    acc_ddepth = np.zeros(n_s)

    jobs = [(i, np.asarray(b, dtype=np.int64)) for i, b in enumerate(bins) if b]
    for rows, d_oa, dmu, dconic, dcol, dfeat, ddep in _run_tiles(jobs, work):
        np.add.at(acc_dalpha, rows, d_oa)
        np.add.at(acc_dmu, rows, dmu)
        np.add.at(acc_dconic, rows, dconic)
        np.add.at(acc_dcolor, rows, dcol)
        np.add.at(acc_dfeature, rows, dfeat)
        np.add.at(acc_ddepth, rows, ddep)

    # --- chain from screen-space quantities back to Gaussian parameters ---
    conic = prep.s_conic
    dcov2d = -np.einsum("nab,nbc,ncd->nad", conic, acc_dconic, conic)
    dj = 2.0 * np.einsum("nab,nbc,ncd->nad", dcov2d, prep.s_j, prep.s_m3)
    dm3 = np.einsum("nba,nbc,ncd->nad", prep.s_j, dcov2d, prep.s_j)
    dsigma3 = np.einsum("ba,nbc,cd->nad", cam.rotation, dm3, cam.rotation)

    qn = np.linalg.norm(scene.rotations[prep.s_src], axis=1)
    qhat = scene.rotations[prep.s_src] / qn[:, None]
    rot = quat_to_rotmat(qhat)
    s2 = np.exp(2.0 * scene.log_scales[prep.s_src])
    drot = 2.0 * np.einsum("nab,nbc,nc->nac", dsigma3, rot, s2)
    rtgr = np.einsum("nba,nbc,ncd->nad", rot, dsigma3, rot)
    dlog_scale = 2.0 * s2 * np.einsum("naa->na", rtgr)

    dqhat = np.einsum("nij,nmij->nm", drot, _rotmat_quat_jacobian(qhat))
    dq = (dqhat - qhat * np.einsum("nm,nm->n", dqhat, qhat)[:, None]) / qn[:, None]

    fx, fy = cam.fx, cam.fy
    tx, ty, tz = prep.s_t[:, 0], prep.s_t[:, 1], prep.s_t[:, 2]
    dt = np.zeros((n_s, 3))
    dt[:, 0] = dj[:, 0, 2] * (-fx / tz**2) + acc_dmu[:, 0] * fx / tz
    dt[:, 1] = dj[:, 1, 2] * (-fy / tz**2) + acc_dmu[:, 1] * fy / tz
    dt[:, 2] = (dj[:, 0, 0] * (-fx / tz**2) + dj[:, 1, 1] * (-fy / tz**2)
                + dj[:, 0, 2] * (2.0 * fx * tx / tz**3)
                + dj[:, 1, 2] * (2.0 * fy * ty / tz**3)
                - (acc_dmu[:, 0] * fx * tx + acc_dmu[:, 1] * fy * ty) / tz**2
                + acc_ddepth)
    dpos = dt @ cam.rotation

    alpha = prep.s_alpha
    src = prep.s_src
    grads.positions[src] = dpos
    grads.log_scales[src] = dlog_scale
    grads.rotations[src] = dq
    grads.opacity_logits[src] = acc_dalpha * alpha * (1.0 - alpha)
    grads.colors[src] = acc_dcolor
    grads.features[src] = acc_dfeature
    grads.mean2d[src] = acc_dmu
    return grads


def _rotmat_quat_jacobian(qhat: np.ndarray) -> np.ndarray:
    """dR/dq of the quaternion-to-matrix polynomial, evaluated at unit
    quaternions: (n, 4, 3, 3). Caller projects out the radial component."""
    w, x, y, z = qhat[:, 0], qhat[:, 1], qhat[:, 2], qhat[:, 3]
    n = len(qhat)
    d = np.zeros((n, 4, 3, 3))
    zero = np.zeros(n)
    d[:, 0] = 2.0 * np.stack([
        np.stack([zero, -z, y], axis=1),
        np.stack([z, zero, -x], axis=1),
        np.stack([-y, x, zero], axis=1),
    ], axis=1)
    d[:, 1] = 2.0 * np.stack([
        np.stack([zero, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1),
    ], axis=1)
    d[:, 2] = 2.0 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zero, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1),
    ], axis=1)
    d[:, 3] = 2.0 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zero], axis=1),
    ], axis=1)
    return d
