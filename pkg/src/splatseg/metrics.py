"""Instance-mask evaluation: IoU, boundary IoU, and optimally matched means.

The matched mean assigns predicted instances to ground-truth instances
one-to-one so as to maximize total IoU (Hungarian assignment); unmatched
ground-truth instances score 0 and the mean runs over ground-truth
instances. The boundary variant restricts both masks to the band of mask
pixels within a Chebyshev radius of the in-image complement before
computing IoU.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.optimize import linear_sum_assignment

from .errors import DataError

BOUNDARY_RADIUS = 3


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a & b| / |a | b|; 1.0 when both masks are empty."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def boundary_band(mask: np.ndarray, radius: int) -> np.ndarray:
    """Mask pixels within `radius` (Chebyshev) of the mask's complement.
    The complement is taken inside the image only, so an all-ones mask has
    an empty band."""
    mask = np.asarray(mask) != 0
    if radius < 1:
        raise ValueError("boundary radius must be >= 1")
    near_bg = binary_dilation(~mask, structure=np.ones((2 * radius + 1,) * 2))
    return mask & near_bg


def boundary_iou(a: np.ndarray, b: np.ndarray, radius: int = BOUNDARY_RADIUS) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return iou(boundary_band(a, radius), boundary_band(b, radius))


def matched_mean_iou(pred: np.ndarray, gt: np.ndarray, boundary: bool = False,
                     radius: int = BOUNDARY_RADIUS) -> float:
    """Mean IoU over ground-truth instances under the optimal one-to-one
    assignment of predicted instance IDs; invariant to relabeling of either
    input."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    gt_ids = np.unique(gt)
    gt_ids = gt_ids[gt_ids > 0]
    if len(gt_ids) == 0:
        raise DataError("ground truth contains no instances")
    pred_ids = np.unique(pred)
    pred_ids = pred_ids[pred_ids > 0]
    if len(pred_ids) == 0:
        return 0.0

    score = boundary_iou if boundary else iou
    table = np.empty((len(pred_ids), len(gt_ids)))
    for i, pid in enumerate(pred_ids):
        pm = pred == pid
        for j, gid in enumerate(gt_ids):
            gm = gt == gid
            table[i, j] = score(pm, gm, radius) if boundary else score(pm, gm)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / len(gt_ids))
