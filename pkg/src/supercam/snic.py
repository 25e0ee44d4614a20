"""Memory-restricted SNIC baseline.

A fixed byte budget is split between a downsampled copy of the image and
the per-superpixel centroid state; SNIC then runs on the downsampled image
and the painted result is upsampled back to the source size.
"""

import math
from dataclasses import dataclass

import numba
import numpy as np
from skimage.color import rgb2lab
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_channels, check_image, check_positive_int
from .core import (BYTES_PER_SUPERPIXEL, BlurKernel, BudgetError, BudgetReport, derive_blur_kernel,
                   gaussian_blur, partition_grid)

BYTES_PER_PIXEL = 3
# five running means (l, a, b, x, y) at 4 bytes each
BYTES_PER_SNIC_SUPERPIXEL = 20
DEFAULT_RATIO = 5


@dataclass(frozen=True)
class BudgetSplit:
    total_bytes: int
    image_bytes: int
    superpixel_bytes: int
    ratio: float
    scaled_width: int
    scaled_height: int
    n_superpixels: int
    bytes_per_pixel: int = BYTES_PER_PIXEL
    bytes_per_superpixel: int = BYTES_PER_SNIC_SUPERPIXEL

    @property
    def used_bytes(self):
        return (self.bytes_per_pixel * self.scaled_width * self.scaled_height
                + self.bytes_per_superpixel * self.n_superpixels)


def allocate_budget(total_bytes, source_width, source_height, ratio=DEFAULT_RATIO,
                    bytes_per_pixel=BYTES_PER_PIXEL, bytes_per_superpixel=BYTES_PER_SNIC_SUPERPIXEL):
    """Split ``total_bytes`` between image storage and superpixel state.

    Image data gets ``ratio`` times the superpixel share. The stored image
    keeps the source aspect ratio and is never larger than the source.
    """
    total_bytes = check_positive_int(total_bytes, "total_bytes")
    if not ratio > 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    image_bytes = int(math.floor(total_bytes * ratio / (ratio + 1)))
    superpixel_bytes = int(math.floor(total_bytes / (ratio + 1)))
    if image_bytes < bytes_per_pixel or superpixel_bytes < bytes_per_superpixel:
        raise BudgetError(f"budget of {total_bytes} B cannot hold one pixel and one superpixel")
    max_pixels = image_bytes // bytes_per_pixel
    scale = min(1.0, math.sqrt(max_pixels / (source_width * source_height)))
    w = max(1, int(math.floor(source_width * scale)))
    h = max(1, int(math.floor(source_height * scale)))
    while w * h > max_pixels:
        if w >= h and w > 1:
            w -= 1
        else:
            h -= 1
    k = min(superpixel_bytes // bytes_per_superpixel, w * h)
    return BudgetSplit(total_bytes, image_bytes, superpixel_bytes, ratio, w, h, k,
                       bytes_per_pixel, bytes_per_superpixel)


def _area_weights(src, dst):
    edges = np.arange(dst + 1) * (src / dst)
    lo = np.maximum(edges[:-1, None], np.arange(src)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(1, src + 1)[None, :])
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def downsample(image, target_width, target_height):
    """Area-average resampling to ``target_width`` x ``target_height``."""
    img = check_image(image, allow_negative=True)
    h, w = img.shape[:2]
    if not (1 <= target_width <= w and 1 <= target_height <= h):
        raise ValueError(f"target {target_width}x{target_height} must lie within 1..{w}x{h}")
    if (target_width, target_height) == (w, h):
        return img.copy()
    ay = _area_weights(h, target_height)
    ax = _area_weights(w, target_width)
    chans = as_channels(img)
    out = np.stack([ay @ chans[:, :, k] @ ax.T for k in range(chans.shape[2])], axis=-1)
    return out[:, :, 0] if img.ndim == 2 else out


def to_lab(image):
    """CIELAB of an intensity image (sRGB, D65); gray is replicated to RGB."""
    rgb = as_channels(image)
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    elif rgb.shape[2] != 3:
        raise ValueError("SNIC needs gray or RGB input")
    return rgb2lab(np.clip(rgb, 0.0, 1.0))


@numba.njit(cache=True)
def _heap_less(keys, order, i, j):
    return keys[i] < keys[j] or (keys[i] == keys[j] and order[i] < order[j])


@numba.njit(cache=True)
def _heap_swap(keys, order, pix, lab, i, j):
    keys[i], keys[j] = keys[j], keys[i]
    order[i], order[j] = order[j], order[i]
    pix[i], pix[j] = pix[j], pix[i]
    lab[i], lab[j] = lab[j], lab[i]


@numba.njit(cache=True)
def _snic_kernel(lab_img, values, seed_y, seed_x, pos_weight):
    h, w = lab_img.shape[0], lab_img.shape[1]
    nc = values.shape[2]
    k = seed_y.shape[0]
    labels = -np.ones((h, w), dtype=np.int64)
    lab_mean = np.zeros((k, 3))
    pos_mean = np.zeros((k, 2))
    val_mean = np.zeros((k, nc))
    counts = np.zeros(k, dtype=np.int64)

    cap = 4 * h * w + k + 1
    keys = np.empty(cap)
    order = np.empty(cap, dtype=np.int64)
    pix = np.empty(cap, dtype=np.int64)
    lab = np.empty(cap, dtype=np.int64)
    size = 0
    ticket = 0

    for i in range(k):
        # push with d = 0
        keys[size] = 0.0
        order[size] = ticket
        pix[size] = seed_y[i] * w + seed_x[i]
        lab[size] = i
        ticket += 1
        j = size
        size += 1
        while j > 0:
            parent = (j - 1) // 2
            if _heap_less(keys, order, j, parent):
                _heap_swap(keys, order, pix, lab, j, parent)
                j = parent
            else:
                break

    dy = (-1, 0, 0, 1)
    dx = (0, -1, 1, 0)
    while size > 0:
        p = pix[0]
        c = lab[0]
        size -= 1
        if size > 0:
            _heap_swap(keys, order, pix, lab, 0, size)
            j = 0
            while True:
                left = 2 * j + 1
                if left >= size:
                    break
                best = left
                right = left + 1
                if right < size and _heap_less(keys, order, right, left):
                    best = right
                if _heap_less(keys, order, best, j):
                    _heap_swap(keys, order, pix, lab, best, j)
                    j = best
                else:
                    break
        y = p // w
        x = p - y * w
        if labels[y, x] >= 0:
            continue
        labels[y, x] = c
        counts[c] += 1
        inv = 1.0 / counts[c]
        for t in range(3):
            lab_mean[c, t] += (lab_img[y, x, t] - lab_mean[c, t]) * inv
        pos_mean[c, 0] += (x - pos_mean[c, 0]) * inv
        pos_mean[c, 1] += (y - pos_mean[c, 1]) * inv
        for t in range(nc):
            val_mean[c, t] += (values[y, x, t] - val_mean[c, t]) * inv

        for n in range(4):
            ny = y + dy[n]
            nx = x + dx[n]
            if ny < 0 or ny >= h or nx < 0 or nx >= w or labels[ny, nx] >= 0:
                continue
            d2 = 0.0
            for t in range(3):
                diff = lab_img[ny, nx, t] - lab_mean[c, t]
                d2 += diff * diff
            ex = nx - pos_mean[c, 0]
            ey = ny - pos_mean[c, 1]
            d2 += pos_weight * (ex * ex + ey * ey)
            keys[size] = d2
            order[size] = ticket
            pix[size] = ny * w + nx
            lab[size] = c
            ticket += 1
            j = size
            size += 1
            while j > 0:
                parent = (j - 1) // 2
                if _heap_less(keys, order, j, parent):
                    _heap_swap(keys, order, pix, lab, j, parent)
                    j = parent
                else:
                    break
    return labels, val_mean, counts


def snic_seeds(width, height, n_superpixels):
    """Centres of a regular grid of at most ``n_superpixels`` cells."""
    grid = partition_grid(width, height, n_superpixels)
    x0, x1, y0, y1 = grid.cell_bounds()
    return (x0 + x1 - 1) // 2, (y0 + y1 - 1) // 2


def snic_segment(image, n_superpixels, compactness=10.0, seeds=None):
    """Simple Non-Iterative Clustering.

    Pixels are grown out of grid seeds in order of their distance to the
    claiming cluster's running centroid,
    ``d^2 = |lab - lab_c|^2 + (compactness / s)^2 |xy - xy_c|^2`` with
    ``s = sqrt(pixels / K)``. Queue ties go to the earlier push.

    Returns ``(labels, means)`` where ``means[k]`` is the running mean of
    cluster ``k`` in the input's own value space.
    """
    img = check_image(image)
    h, w = img.shape[:2]
    n_superpixels = check_positive_int(n_superpixels, "n_superpixels")
    if n_superpixels > h * w:
        raise ValueError(f"{n_superpixels} superpixels exceed {h * w} pixels")
    if not compactness > 0:
        raise ValueError("compactness must be positive")
    if seeds is None:
        xs, ys = snic_seeds(w, h, n_superpixels)
    else:
        xs, ys = (np.asarray(a, dtype=np.int64) for a in seeds)
    s = math.sqrt(h * w / len(xs))
    lab = np.ascontiguousarray(to_lab(img))
    vals = np.ascontiguousarray(as_channels(img))
    labels, means, _ = _snic_kernel(lab, vals, np.asarray(ys, np.int64), np.asarray(xs, np.int64),
                                    (compactness / s) ** 2)
    if img.ndim == 2:
        means = means[:, 0]
    return labels, means


def upsample_indices(small, large):
    return (np.arange(large) * small) // large


def render_and_upsample(labels, means, target_width, target_height):
    """Paint each pixel with its segment mean, then nearest-upsample."""
    labels = np.asarray(labels)
    painted = np.asarray(means)[labels]
    iy = upsample_indices(labels.shape[0], target_height)
    ix = upsample_indices(labels.shape[1], target_width)
    return painted[iy[:, None], ix[None, :]]


def upsample_labels(labels, target_width, target_height):
    iy = upsample_indices(labels.shape[0], target_height)
    ix = upsample_indices(labels.shape[1], target_width)
    return labels[iy[:, None], ix[None, :]]


@dataclass
class SnicResult:
    rendered: np.ndarray
    raw: np.ndarray
    labels: np.ndarray
    report: BudgetReport
    split: BudgetSplit
    kernel: BlurKernel


def supercam_equivalent_kernel(width, height, budget_bytes):
    """Blur kernel of the SuperCam grid that the same budget would buy."""
    n = min(budget_bytes // BYTES_PER_SUPERPIXEL, width * height)
    if n < 1:
        raise BudgetError(f"budget of {budget_bytes} B is below one superpixel")
    return derive_blur_kernel(partition_grid(width, height, n))


def run_snic_restricted(image, budget_bytes, with_blur=False, compactness=10.0, ratio=DEFAULT_RATIO,
                        bytes_per_pixel=BYTES_PER_PIXEL, bytes_per_superpixel=BYTES_PER_SNIC_SUPERPIXEL):
    img = check_image(image)
    h, w = img.shape[:2]
    split = allocate_budget(budget_bytes, w, h, ratio, bytes_per_pixel, bytes_per_superpixel)
    small = downsample(img, split.scaled_width, split.scaled_height)
    small_labels, means = snic_segment(small, split.n_superpixels, compactness)
    raw = render_and_upsample(small_labels, means, w, h)
    labels = upsample_labels(small_labels, w, h)
    kernel = supercam_equivalent_kernel(w, h, budget_bytes)
    rendered = gaussian_blur(raw, kernel) if with_blur else raw
    report = BudgetReport(
        pipeline="snic_blur" if with_blur else "snic", budget_bytes=int(budget_bytes),
        realized_units=int(means.shape[0]),
        footprint_bytes=bytes_per_pixel * split.scaled_width * split.scaled_height
        + bytes_per_superpixel * int(means.shape[0]),
        image_bytes=split.image_bytes, superpixel_bytes=split.superpixel_bytes,
        scaled_width=split.scaled_width, scaled_height=split.scaled_height,
        notes="priority queue is transient work memory and not charged",
    )
    return SnicResult(rendered, raw, labels, report, split, kernel)


class RestrictedSNIC(TransformerMixin, BaseEstimator):
    """SNIC confined to a byte budget shared with its working image.

    Each call segments the image it is given; ``fit`` also keeps the labels,
    rendering and budget report of that image.

    Parameters
    ----------
    budget_bytes : int
    with_blur : bool
        Blur the rendering with the kernel SuperCam would use at this budget.
    compactness : float
    ratio : float
        Image bytes per superpixel-state byte.
    """

    def __init__(self, budget_bytes=68_000, with_blur=False, compactness=10.0, ratio=DEFAULT_RATIO,
                 bytes_per_pixel=BYTES_PER_PIXEL, bytes_per_superpixel=BYTES_PER_SNIC_SUPERPIXEL):
        self.budget_bytes = budget_bytes
        self.with_blur = with_blur
        self.compactness = compactness
        self.ratio = ratio
        self.bytes_per_pixel = bytes_per_pixel
        self.bytes_per_superpixel = bytes_per_superpixel

    def _run(self, X):
        return run_snic_restricted(X, self.budget_bytes, self.with_blur, self.compactness, self.ratio,
                                   self.bytes_per_pixel, self.bytes_per_superpixel)

    def fit(self, X, y=None):
        res = self._run(X)
        self.labels_ = res.labels
        self.rendered_ = res.rendered
        self.report_ = res.report
        self.split_ = res.split
        self.kernel_ = res.kernel
        self.n_superpixels_ = res.report.realized_units
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).rendered_

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_

    def transform(self, X):
        return self._run(X).rendered
