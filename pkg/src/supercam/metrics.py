"""Superpixel and depth quality metrics.

Ground-truth label maps may mark unlabeled (void) pixels with a negative id;
those pixels are dropped from every count.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_labels, check_same_shape, compact_labels

BOUNDARY_TOLERANCE_FRACTION = 0.0025
DELTA1_THRESHOLD = 1.25


@dataclass
class MetricReport:
    ue: float = None
    precision: float = None
    recall: float = None
    miou_error: float = None
    abs_rel: float = None
    delta1: float = None
    tp: int = None
    fp: int = None
    fn: int = None
    tp_gt: int = None

    def to_dict(self):
        return asdict(self)


def _valid_pairs(seg, gt):
    seg = check_labels(seg, "segmentation")
    gt = check_labels(gt, "ground truth")
    check_same_shape(seg, gt, ("segmentation", "ground truth"))
    keep = gt >= 0
    return compact_labels(seg[keep]), compact_labels(gt[keep])


def _contingency(s, g):
    ks, kg = s.max() + 1, g.max() + 1
    table = np.bincount(s * kg + g, minlength=ks * kg).reshape(ks, kg)
    return table


def under_segmentation_error(seg, gt):
    """Under-segmentation error.

    ``(1/N) * sum over GT segments G_i, sum over S_j touching G_i of
    min(|S_j & G_i|, |S_j - G_i|)``.
    """
    s, g = _valid_pairs(seg, gt)
    if s.size == 0:
        raise ValueError("ground truth has no labeled pixels")
    table = _contingency(s, g)
    seg_sizes = table.sum(axis=1, keepdims=True)
    leak = np.minimum(table, seg_sizes - table)
    return float(leak[table > 0].sum()) / s.size


def boundary_map(labels):
    """Pixels whose label differs from their right or bottom neighbour."""
    lab = check_labels(labels)
    b = np.zeros(lab.shape, dtype=bool)
    b[:, :-1] |= lab[:, :-1] != lab[:, 1:]
    b[:-1, :] |= lab[:-1, :] != lab[1:, :]
    return b


def tolerance_radius(height, width):
    """Band half-width: 0.25% of the diagonal, rounded up."""
    return int(math.ceil(BOUNDARY_TOLERANCE_FRACTION * math.hypot(height, width)))


def _within_band(mask, radius):
    if radius == 0:
        return mask.copy()
    size = 2 * radius + 1
    return ndimage.binary_dilation(mask, structure=np.ones((size, size), dtype=bool))


def boundary_precision_recall(pred_boundary, gt_boundary, radius=None):
    """Boundary precision and recall within a square tolerance band.

    A predicted boundary pixel is a true positive when a ground-truth
    boundary pixel lies in the ``(2r+1) x (2r+1)`` window around it; recall
    counts ground-truth pixels with a predicted pixel in their window.

    Returns ``(precision, recall, tp, fp, fn, tp_gt)``. An empty side gives
    precision or recall of 1.0 when the other side is also empty, else 0.0.
    """
    pred = np.asarray(pred_boundary, dtype=bool)
    gt = np.asarray(gt_boundary, dtype=bool)
    check_same_shape(pred, gt, ("prediction", "ground truth"))
    r = tolerance_radius(*pred.shape) if radius is None else int(radius)
    if r < 0:
        raise ValueError("radius must be non-negative")
    tp = int(np.count_nonzero(pred & _within_band(gt, r)))
    fp = int(np.count_nonzero(pred)) - tp
    tp_gt = int(np.count_nonzero(gt & _within_band(pred, r)))
    fn = int(np.count_nonzero(gt)) - tp_gt
    both_empty = tp + fp == 0 and tp_gt + fn == 0
    precision = tp / (tp + fp) if tp + fp else (1.0 if both_empty else 0.0)
    recall = tp_gt / (tp_gt + fn) if tp_gt + fn else (1.0 if both_empty else 0.0)
    return precision, recall, tp, fp, fn, tp_gt


def miou_error(seg, gt):
    """Mean over predicted segments of ``1 - IoU`` with the best-overlap GT segment.

    Overlap ties go to the lowest GT id.
    """
    s, g = _valid_pairs(seg, gt)
    if s.size == 0:
        raise ValueError("empty prediction")
    table = _contingency(s, g)
    best = table.argmax(axis=1)
    inter = table[np.arange(table.shape[0]), best]
    union = table.sum(axis=1) + table.sum(axis=0)[best] - inter
    return float(np.mean(1.0 - inter / union))


def depth_metrics(pred, gt, mask=None):
    """AbsRel and delta_1 for one depth map.

    ``mask`` selects valid pixels (default: ``gt > 0``). Scale or shift
    alignment of relative predictions is the caller's job.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, ("prediction", "ground truth"))
    valid = gt > 0 if mask is None else np.asarray(mask, dtype=bool)
    if not valid.any():
        raise ValueError("empty depth mask")
    d, dh = gt[valid], pred[valid]
    if np.any(d <= 0) or np.any(dh <= 0):
        raise ValueError("depths must be positive on the mask")
    abs_rel = float(np.mean(np.abs(d - dh) / d))
    delta1 = float(np.mean(np.maximum(d / dh, dh / d) < DELTA1_THRESHOLD))
    return abs_rel, delta1


def dataset_depth_metrics(pairs):
    """Average per-image AbsRel and delta_1 over ``(pred, gt[, mask])`` tuples."""
    per_image = [depth_metrics(*p) for p in pairs]
    if not per_image:
        raise ValueError("no depth images")
    arr = np.asarray(per_image)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def evaluate(seg, gt, radius=None):
    """All label-map metrics for one prediction."""
    seg = check_labels(seg, "segmentation")
    gt = check_labels(gt, "ground truth")
    # void pixels carry no ground-truth boundary
    gt_b = boundary_map(gt)
    if np.any(gt < 0):
        gt_b &= gt >= 0
    p, r, tp, fp, fn, tp_gt = boundary_precision_recall(boundary_map(seg), gt_b, radius)
    return MetricReport(
        ue=under_segmentation_error(seg, gt), precision=p, recall=r,
        miou_error=miou_error(seg, gt), tp=tp, fp=fp, fn=fn, tp_gt=tp_gt,
    )
