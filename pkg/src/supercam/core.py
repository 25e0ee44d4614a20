"""The SuperCam pipeline: grid seeding, sparse exposure, Voronoi fill, blur.

Only the sparse superpixel set (one seed coordinate and intensity per grid
cell) ever exists on the sensor side. The dense label map and rendered image
are produced afterwards from that set alone.
"""

import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import rng
from ._validation import check_image, check_positive_int
from .spad import SensorConfig, SensorPlane, _draw_counts, detection_probability, intensity_from_counts

BYTES_PER_SUPERPIXEL = 10
# a Gaussian tap falls to 1/255 of its peak one pixel past the blur radius
_LOG255_FACTOR = math.sqrt(2.0 * math.log(255.0))
# exact factorizations are preferred while cells stay this close to square
_MAX_CELL_ASPECT = 1.5


class BudgetError(ValueError):
    """Memory budget cannot hold even the minimal data structure."""


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    cols: int
    rows: int
    col_edges: np.ndarray
    row_edges: np.ndarray

    @property
    def n_cells(self):
        return self.cols * self.rows

    @property
    def cell_width(self):
        return self.width / self.cols

    @property
    def cell_height(self):
        return self.height / self.rows

    def cell_bounds(self):
        """Per-cell ``(x0, x1, y0, y1)`` half-open bounds, row-major cell order."""
        r, c = np.divmod(np.arange(self.n_cells), self.cols)
        return (self.col_edges[c], self.col_edges[c + 1], self.row_edges[r], self.row_edges[r + 1])

    def cell_index_map(self):
        """(H, W) map of the cell index covering each pixel."""
        col_of = np.repeat(np.arange(self.cols), np.diff(self.col_edges))
        row_of = np.repeat(np.arange(self.rows), np.diff(self.row_edges))
        return row_of[:, None] * self.cols + col_of[None, :]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _cell_distortion(width, height, cols, rows):
    return abs(math.log((width / cols) / (height / rows)))


def _choose_grid_shape(width, height, n):
    best = None
    for cols in range(1, min(n, width) + 1):
        if n % cols:
            continue
        rows = n // cols
        if rows > height:
            continue
        d = _cell_distortion(width, height, cols, rows)
        if best is None or d < best[0]:
            best = (d, cols, rows)
    if best is not None and best[0] <= math.log(_MAX_CELL_ASPECT):
        return best[1], best[2]
    cols = min(max(_round_half_up(math.sqrt(n * width / height)), 1), width, n)
    rows = min(max(n // cols, 1), height)
    return cols, rows


def _edges(extent, parts):
    return (np.arange(parts + 1, dtype=np.int64) * extent) // parts


def partition_grid(width, height, n_cells):
    """Split a ``width`` x ``height`` image into ~``n_cells`` equal rectangles.

    An exact factorization ``cols * rows == n_cells`` is used when one keeps
    the cells within 1.5:1 of square; otherwise ``cols`` follows the image
    aspect and ``rows = floor(n_cells / cols)``, so the realized count never
    exceeds the request. Integer remainders are spread so cell extents differ
    by at most one pixel.
    """
    width = check_positive_int(width, "width")
    height = check_positive_int(height, "height")
    n_cells = check_positive_int(n_cells, "n_cells")
    if n_cells > width * height:
        raise ValueError(f"cannot place {n_cells} cells in a {width}x{height} image")
    cols, rows = _choose_grid_shape(width, height, n_cells)
    return GridSpec(width, height, cols, rows, _edges(width, cols), _edges(height, rows))


def seed_cells(grid, seed):
    """One uniformly random pixel inside each cell, as ``(xs, ys)``."""
    x0, x1, y0, y1 = grid.cell_bounds()
    cells = np.arange(grid.n_cells)
    ux = rng.keyed_uniform(seed, rng.STREAM_SEED, cells, 0)
    uy = rng.keyed_uniform(seed, rng.STREAM_SEED, cells, 1)
    xs = x0 + np.floor(ux * (x1 - x0)).astype(np.int64)
    ys = y0 + np.floor(uy * (y1 - y0)).astype(np.int64)
    return xs, ys


# -- sparse superpixel set ---------------------------------------------------

SET_MAGIC = b"SPS1"
_SET_HEADER = struct.Struct("<4sIII")
_SET_ENTRY = np.dtype([("x", "<u2"), ("y", "<u2"), ("rgb", "u1", (3,)),
                       ("cell", "<u2"), ("reserved", "u1")])
assert _SET_ENTRY.itemsize == BYTES_PER_SUPERPIXEL


@dataclass
class SuperpixelSet:
    """Seed coordinates and intensity estimates, one entry per grid cell."""

    width: int
    height: int
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    cells: np.ndarray = None

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.int64).ravel()
        self.ys = np.asarray(self.ys, dtype=np.int64).ravel()
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.xs), -1)
        if self.cells is None:
            self.cells = np.arange(len(self.xs))
        self.cells = np.asarray(self.cells, dtype=np.int64)

    def __len__(self):
        return len(self.xs)

    @property
    def channels(self):
        return self.values.shape[1]

    @property
    def footprint_bytes(self):
        return BYTES_PER_SUPERPIXEL * len(self)

    def to_bytes(self):
        """SPS1 serialization; intensities are quantized to 8 bits here.

        Each entry is x u16 | y u16 | R G B u8 | cell u16 | reserved u8, all
        little-endian. Bits 16-23 of the cell index go in the reserved byte,
        so sets up to 2**24 cells round-trip.
        """
        if self.width > 65536 or self.height > 65536:
            raise ValueError("SPS1 coordinates are u16; image too large")
        if len(self) and self.cells.max() >= 1 << 24:
            raise ValueError("too many cells for SPS1")
        rec = np.zeros(len(self), dtype=_SET_ENTRY)
        rec["x"] = self.xs
        rec["y"] = self.ys
        vals = self.values if self.channels == 3 else np.repeat(self.values[:, :1], 3, axis=1)
        rec["rgb"] = np.clip(np.floor(vals * 255.0 + 0.5), 0, 255).astype(np.uint8)
        rec["cell"] = self.cells & 0xFFFF
        rec["reserved"] = (self.cells >> 16) & 0xFF
        head = _SET_HEADER.pack(SET_MAGIC, len(self), self.width, self.height)
        return head + rec.tobytes()

    @classmethod
    def from_bytes(cls, data, gray=False):
        if len(data) < _SET_HEADER.size:
            raise ValueError("truncated SPS1 header")
        magic, n, w, h = _SET_HEADER.unpack_from(data)
        if magic != SET_MAGIC:
            raise ValueError(f"bad magic bytes {magic!r}, expected {SET_MAGIC!r}")
        body = memoryview(data)[_SET_HEADER.size:]
        if len(body) != n * BYTES_PER_SUPERPIXEL:
            raise ValueError(f"SPS1 body is {len(body)} bytes, expected {n * BYTES_PER_SUPERPIXEL}")
        rec = np.frombuffer(body, dtype=_SET_ENTRY)
        vals = rec["rgb"].astype(np.float64) / 255.0
        cells = rec["cell"].astype(np.int64) | (rec["reserved"].astype(np.int64) << 16)
        return cls(w, h, rec["x"], rec["y"], vals[:, :1] if gray else vals, cells)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, gray=False):
        return cls.from_bytes(Path(path).read_bytes(), gray=gray)


def measure_seeds(image, xs, ys, mode="spad", config=None, exposure_scale=None, seed=0):
    """Measure the scene at the seed pixels only.

    ``image`` may be an array or a :class:`SensorPlane` (whose counters then
    record the reads). In ``"direct"`` mode the ground-truth flux is copied;
    in ``"spad"`` mode each seed pixel is exposed for ``config.frames``
    binary frames and the flux recovered from its detection count. Without
    an explicit ``exposure_scale`` the exposure is calibrated on the mean
    flux of the seed pixels themselves.
    """
    plane = image if isinstance(image, SensorPlane) else SensorPlane(image)
    xs = np.asarray(xs, dtype=np.int64).ravel()
    ys = np.asarray(ys, dtype=np.int64).ravel()
    flux = plane.read(xs, ys)
    if mode == "direct":
        values = flux.astype(np.float64)
    elif mode == "spad":
        if config is None:
            config = SensorConfig()
        c = exposure_scale
        if c is None:
            mean = float(flux.mean())
            # a black scene gives no detections at any exposure
            c = config.per_frame_rate / (mean if mean > 0 else 1.0)
        q = detection_probability(flux, c, config)
        counts = _draw_counts(seed, xs, ys, q, config.frames, plane.channels)
        plane.bernoulli_draws += int(xs.size) * config.frames
        values = intensity_from_counts(counts, config.frames, c, config)
    else:
        raise ValueError(f"mode must be 'spad' or 'direct', got {mode!r}")
    return SuperpixelSet(plane.width, plane.height, xs, ys, values)


def nearest_fill(sset, width=None, height=None):
    """Label each pixel with its Euclidean-nearest seed and paint its value.

    Equidistant pixels go to the lowest seed index. Returns
    ``(labels, image)``; the image is 2-D for single-channel sets.
    """
    width = sset.width if width is None else width
    height = sset.height if height is None else height
    n = len(sset)
    if n < 1:
        raise ValueError("need at least one seed")
    pts = np.column_stack([sset.xs, sset.ys]).astype(np.float64)
    gy, gx = np.mgrid[0:height, 0:width]
    pix = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64)
    labels = np.zeros(pix.shape[0], dtype=np.int64)
    if n > 1:
        tree = cKDTree(pts)
        todo = np.arange(pix.shape[0])
        k = min(n, 4)
        while todo.size:
            dist, idx = tree.query(pix[todo], k=k)
            # integer coordinates: equal squared distances give identical floats
            tied = dist == dist[:, :1]
            labels[todo] = np.where(tied, idx, n).min(axis=1)
            if k == n:
                break
            # all k neighbours tied: more may hide beyond k
            todo = todo[tied[:, -1]]
            k = min(n, 4 * k)
    labels = labels.reshape(height, width)
    img = sset.values[labels]
    if sset.channels == 1:
        img = img[:, :, 0]
    return labels, img


# -- blur ----------------------------------------------------------------------

def sigma_for_radius(radius):
    """Standard deviation whose Gaussian drops to 1/255 at ``radius + 1``."""
    return (radius + 1) / _LOG255_FACTOR


def gaussian_taps(radius, sigma):
    """Normalized taps at integer offsets ``-(radius+1) .. radius+1``."""
    x = np.arange(-(radius + 1), radius + 2, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


@dataclass(frozen=True)
class BlurKernel:
    radius_x: int
    radius_y: int
    sigma_x: float = field(default=None)
    sigma_y: float = field(default=None)

    def __post_init__(self):
        if self.radius_x < 0 or self.radius_y < 0:
            raise ValueError("blur radii must be non-negative")
        if self.sigma_x is None:
            object.__setattr__(self, "sigma_x", sigma_for_radius(self.radius_x))
        if self.sigma_y is None:
            object.__setattr__(self, "sigma_y", sigma_for_radius(self.radius_y))

    @property
    def taps_x(self):
        return gaussian_taps(self.radius_x, self.sigma_x)

    @property
    def taps_y(self):
        return gaussian_taps(self.radius_y, self.sigma_y)


def derive_blur_kernel(grid):
    """Blur radii of half the nominal cell width and height (rounded half-up)."""
    return BlurKernel(_round_half_up(grid.cell_width / 2.0), _round_half_up(grid.cell_height / 2.0))


def gaussian_blur(image, kernel):
    """Separable Gaussian blur, x pass then y pass, replicating the border."""
    img = check_image(image, allow_negative=True)
    out = ndimage.correlate1d(img, kernel.taps_x, axis=1, mode="nearest")
    return ndimage.correlate1d(out, kernel.taps_y, axis=0, mode="nearest")


# -- pipeline ------------------------------------------------------------------

@dataclass
class BudgetReport:
    pipeline: str
    budget_bytes: int
    realized_units: int
    footprint_bytes: int
    image_bytes: int = 0
    superpixel_bytes: int = 0
    scaled_width: int = None
    scaled_height: int = None
    pixel_reads: int = None
    bernoulli_draws: int = None
    notes: str = ""

    def to_dict(self):
        return asdict(self)


@dataclass
class SuperCamResult:
    rendered: np.ndarray
    raw: np.ndarray
    labels: np.ndarray
    superpixels: SuperpixelSet
    report: BudgetReport
    grid: GridSpec
    kernel: BlurKernel


def superpixels_for_budget(budget_bytes):
    if isinstance(budget_bytes, bool) or int(budget_bytes) != budget_bytes:
        raise TypeError(f"budget must be an integer byte count, got {budget_bytes!r}")
    if budget_bytes < BYTES_PER_SUPERPIXEL:
        raise BudgetError(f"budget of {budget_bytes} B cannot hold one {BYTES_PER_SUPERPIXEL}-byte superpixel")
    return int(budget_bytes) // BYTES_PER_SUPERPIXEL


def run_supercam(image, budget_bytes, sensor=None, seed=0, blur=True, exposure_scale=None):
    """Run the full SuperCam pipeline on one image.

    ``sensor=None`` measures seeds directly (noise-free); a
    :class:`SensorConfig` exposes them on the simulated SPAD array.
    """
    plane = SensorPlane(image)
    n = min(superpixels_for_budget(budget_bytes), plane.width * plane.height)
    grid = partition_grid(plane.width, plane.height, n)
    xs, ys = seed_cells(grid, seed)
    mode = "direct" if sensor is None else "spad"
    sset = measure_seeds(plane, xs, ys, mode=mode, config=sensor, exposure_scale=exposure_scale, seed=seed)
    sset.cells = np.arange(grid.n_cells)
    labels, raw = nearest_fill(sset)
    kernel = derive_blur_kernel(grid)
    rendered = gaussian_blur(raw, kernel) if blur else raw
    report = BudgetReport(
        pipeline="supercam", budget_bytes=int(budget_bytes), realized_units=len(sset),
        footprint_bytes=sset.footprint_bytes, superpixel_bytes=sset.footprint_bytes,
        pixel_reads=plane.pixel_reads, bernoulli_draws=plane.bernoulli_draws,
        notes=f"mode={mode}",
    )
    return SuperCamResult(rendered, raw, labels, sset, report, grid, kernel)


class SuperCam(TransformerMixin, BaseEstimator):
    """Superpixel camera under a fixed on-sensor memory budget.

    ``fit`` lays out the seed grid for the image size and captures the image;
    the fitted seed layout is the sensor configuration. ``transform`` exposes
    a new scene of the same size at the fitted seeds (e.g. the next video
    frame) and returns its rendered superpixel image.

    Parameters
    ----------
    budget_bytes : int
        On-sensor memory; the superpixel count is ``budget_bytes // 10``.
    mode : {"spad", "direct"}
        Expose seeds on a simulated SPAD array, or read them noise-free.
    frames, mean_photons_per_pixel, quantum_efficiency, dark_count_rate
        SPAD settings, used in ``"spad"`` mode.
    blur : bool
        Apply the grid-derived Gaussian blur to the filled image.
    random_state : int or None
    """

    def __init__(self, budget_bytes=68_000, mode="spad", frames=256, mean_photons_per_pixel=2.0,
                 quantum_efficiency=1.0, dark_count_rate=0.0, blur=True, random_state=None):
        self.budget_bytes = budget_bytes
        self.mode = mode
        self.frames = frames
        self.mean_photons_per_pixel = mean_photons_per_pixel
        self.quantum_efficiency = quantum_efficiency
        self.dark_count_rate = dark_count_rate
        self.blur = blur
        self.random_state = random_state

    def _sensor(self):
        if self.mode == "direct":
            return None
        if self.mode != "spad":
            raise ValueError(f"mode must be 'spad' or 'direct', got {self.mode!r}")
        return SensorConfig(self.quantum_efficiency, self.dark_count_rate, self.frames,
                            self.mean_photons_per_pixel)

    def fit(self, X, y=None):
        self.seed_ = rng.as_seed(self.random_state)
        res = run_supercam(X, self.budget_bytes, sensor=self._sensor(), seed=self.seed_, blur=self.blur)
        self.grid_ = res.grid
        self.kernel_ = res.kernel
        self.superpixels_ = res.superpixels
        self.labels_ = res.labels
        self.raw_ = res.raw
        self.rendered_ = res.rendered
        self.report_ = res.report
        self.n_superpixels_ = len(res.superpixels)
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).rendered_

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_

    def transform(self, X):
        check_is_fitted(self)
        img = check_image(X)
        if img.shape[:2] != self.labels_.shape:
            raise ValueError(f"expected a {self.labels_.shape} image, got {img.shape[:2]}")
        sp = self.superpixels_
        sset = measure_seeds(img, sp.xs, sp.ys, mode=self.mode, config=self._sensor(), seed=self.seed_)
        raw = sset.values[self.labels_]
        if img.ndim == 2:
            raw = raw[:, :, 0]
        return gaussian_blur(raw, self.kernel_) if self.blur else raw
