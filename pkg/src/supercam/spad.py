"""Passive SPAD array simulation.

Photon arrivals at a pixel are Poisson, and a SPAD pixel latches at most one
detection per binary frame, so each frame is a Bernoulli draw with

    P{B = 1} = 1 - exp(-(c * I * eta + c * r_q))

where ``c`` is the per-image exposure scale (exposure time folded in), ``I``
the linear intensity, ``eta`` the quantum efficiency and ``r_q`` the dark
count rate in intensity units. Summing ``F`` frames and log-compressing
recovers the flux:

    phi_hat = -ln(1 - S / F) / (c * eta) - r_q / eta
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import rng
from ._validation import as_channels, check_image


class DegenerateInputError(ValueError):
    """Input carries no signal to calibrate against (e.g. an all-zero image)."""


class PhotonCubeFormatError(ValueError):
    """A photon-cube file does not match its declared layout."""


@dataclass(frozen=True)
class SensorConfig:
    quantum_efficiency: float = 1.0
    dark_count_rate: float = 0.0
    frames: int = 256
    mean_photons_per_pixel: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.quantum_efficiency <= 1.0:
            raise ValueError(f"quantum_efficiency must lie in (0, 1], got {self.quantum_efficiency}")
        if not self.dark_count_rate >= 0.0:
            raise ValueError(f"dark_count_rate must be >= 0, got {self.dark_count_rate}")
        if isinstance(self.frames, bool) or int(self.frames) != self.frames or self.frames < 1:
            raise ValueError(f"frames must be a positive integer, got {self.frames}")
        if not self.mean_photons_per_pixel > 0.0:
            raise ValueError(f"mean_photons_per_pixel must be > 0, got {self.mean_photons_per_pixel}")
        if self.mean_photons_per_pixel / self.frames >= 1.0:
            raise ValueError(
                "mean_photons_per_pixel / frames must be < 1 for a valid per-frame "
                f"detection probability (got {self.mean_photons_per_pixel}/{self.frames})"
            )

    @property
    def per_frame_rate(self):
        return self.mean_photons_per_pixel / self.frames


@dataclass
class PhotonCube:
    """Bit-packed stack of binary frames.

    ``packed`` has shape (frame_count, height, ceil(width / 8)); bits are
    MSB-first within a byte and each row is padded to a byte boundary.
    ``counts`` holds the per-pixel detection sums S(x, y).
    """

    width: int
    height: int
    frame_count: int
    packed: np.ndarray
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        row_bytes = (self.width + 7) // 8
        expected = (self.frame_count, self.height, row_bytes)
        if self.packed.shape != expected:
            raise PhotonCubeFormatError(f"packed frames have shape {self.packed.shape}, expected {expected}")
        if self.counts is None:
            self.counts = self._popcount()

    @classmethod
    def from_frames(cls, frames):
        frames = np.asarray(frames, dtype=bool)
        if frames.ndim != 3:
            raise ValueError("frames must be (F, H, W)")
        f, h, w = frames.shape
        packed = np.packbits(frames, axis=-1, bitorder="big")
        return cls(w, h, f, packed, frames.sum(axis=0, dtype=np.int64))

    def frames(self):
        """Unpacked frames as a (F, H, W) bool array."""
        bits = np.unpackbits(self.packed, axis=-1, count=self.width, bitorder="big")
        return bits.astype(bool)

    def _popcount(self):
        total = np.zeros((self.height, self.width), dtype=np.int64)
        for start in range(0, self.frame_count, 256):
            chunk = self.packed[start:start + 256]
            bits = np.unpackbits(chunk, axis=-1, count=self.width, bitorder="big")
            total += bits.sum(axis=0, dtype=np.int64)
        return total

    def validate(self):
        """Recompute the popcount and check it against ``counts``."""
        if self.counts.shape != (self.height, self.width):
            raise PhotonCubeFormatError("detection sums have the wrong shape")
        if not np.array_equal(self._popcount(), self.counts):
            raise PhotonCubeFormatError("detection sums disagree with the frame bits")
        if self.counts.min() < 0 or self.counts.max() > self.frame_count:
            raise PhotonCubeFormatError("detection sums outside [0, frame_count]")
        return self

    def __eq__(self, other):
        if not isinstance(other, PhotonCube):
            return NotImplemented
        return (
            (self.width, self.height, self.frame_count) == (other.width, other.height, other.frame_count)
            and np.array_equal(self.packed, other.packed)
        )


class SensorPlane:
    """Read-counting view of a ground-truth image.

    Stands in for the physical sensor plane: every flux lookup goes through
    :meth:`read`, so pipelines can prove they touched only the pixels they
    exposed.
    """

    def __init__(self, image):
        self._image = as_channels(check_image(image))
        self.height, self.width, self.channels = self._image.shape
        self.pixel_reads = 0
        self.bernoulli_draws = 0

    @property
    def is_gray(self):
        return self.channels == 1

    def read(self, xs, ys):
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        if np.any((xs < 0) | (xs >= self.width) | (ys < 0) | (ys >= self.height)):
            raise IndexError(f"pixel coordinates outside the {self.width}x{self.height} sensor")
        self.pixel_reads += int(xs.size)
        return self._image[ys, xs]


def compute_exposure_scale(image, config):
    """Exposure scale ``c = p / (F * I_avg)``.

    Under the low-flux approximation ``1 - exp(-cI) ~ cI`` this makes the
    expected detections per pixel per frame average to ``p / F``.
    """
    if not isinstance(config, SensorConfig):
        raise TypeError("config must be a SensorConfig")
    image = check_image(image)
    i_avg = float(image.mean())
    if i_avg <= 0.0:
        raise DegenerateInputError("cannot calibrate exposure on an all-zero image")
    return config.mean_photons_per_pixel / (config.frames * i_avg)


def detection_probability(intensity, c, config):
    """Per-frame probability that a pixel of the given intensity fires."""
    rate = c * (np.asarray(intensity, dtype=np.float64) * config.quantum_efficiency + config.dark_count_rate)
    return -np.expm1(-rate)


def intensity_from_counts(counts, frames, c, config):
    """Log-compression MLE of the flux from detection sums.

    Saturated pixels (S = F) are evaluated at S = F - 1/2; negative
    estimates after dark-count subtraction clamp to zero.
    """
    s = np.asarray(counts, dtype=np.float64)
    s = np.where(s >= frames, frames - 0.5, s)
    eta = config.quantum_efficiency
    phi = -np.log1p(-s / frames) / (c * eta) - config.dark_count_rate / eta
    return np.maximum(phi, 0.0)


def _check_scale(c):
    if not (np.isfinite(c) and c > 0):
        raise ValueError(f"exposure scale must be a positive finite number, got {c}")


def _frame_chunk(pixels, frames, budget=1 << 22):
    return max(1, min(frames, budget // max(pixels, 1)))


def sample_photon_cube(image, c, config, seed, channel=0):
    """Draw ``config.frames`` binary frames for a single-channel image.

    Frames are keyed per ``(seed, channel, y, x, frame)`` so any pixel can be
    re-drawn on its own with :func:`expose_pixel`.
    """
    _check_scale(c)
    image = check_image(image)
    if image.ndim == 3:
        if image.shape[2] != 1:
            raise ValueError("sample_photon_cube takes one channel; index the channel first")
        image = image[:, :, 0]
    h, w = image.shape
    q = detection_probability(image, c, config)
    ys, xs = np.mgrid[0:h, 0:w]
    row_bytes = (w + 7) // 8
    packed = np.empty((config.frames, h, row_bytes), dtype=np.uint8)
    counts = np.zeros((h, w), dtype=np.int64)
    step = _frame_chunk(h * w, config.frames)
    for f0 in range(0, config.frames, step):
        f = np.arange(f0, min(f0 + step, config.frames))[:, None, None]
        u = rng.keyed_uniform(seed, rng.STREAM_PHOTON, channel, ys[None], xs[None], f)
        hits = u < q[None]
        counts += hits.sum(axis=0)
        packed[f0:f0 + len(f)] = np.packbits(hits, axis=-1, bitorder="big")
    return PhotonCube(w, h, config.frames, packed, counts)


def recover_intensity(cube, c, config):
    """Per-pixel flux estimate from a photon cube."""
    _check_scale(c)
    if cube.frame_count < 1:
        raise ValueError("photon cube has no frames")
    return intensity_from_counts(cube.counts, cube.frame_count, c, config)


def _draw_counts(seed, xs, ys, q, frames, channels):
    """Detection sums for a batch of pixels, shape (n, C)."""
    n = xs.size
    counts = np.zeros((n, channels), dtype=np.int64)
    chan = np.arange(channels)[None, :, None]
    step = _frame_chunk(n * channels, frames)
    for f0 in range(0, frames, step):
        f = np.arange(f0, min(f0 + step, frames))[None, None, :]
        u = rng.keyed_uniform(seed, rng.STREAM_PHOTON, chan, ys[:, None, None], xs[:, None, None], f)
        counts += (u < q[:, :, None]).sum(axis=2)
    return counts


def expose_pixels(plane, xs, ys, c, config, seed):
    """Expose only the listed pixels of a :class:`SensorPlane`.

    Returns an (n, C) array of flux estimates. Each pixel's draws are
    identical to the corresponding entries of :func:`sample_photon_cube`.
    """
    _check_scale(c)
    xs = np.asarray(xs, dtype=np.int64).ravel()
    ys = np.asarray(ys, dtype=np.int64).ravel()
    flux = plane.read(xs, ys)
    q = detection_probability(flux, c, config)
    counts = _draw_counts(seed, xs, ys, q, config.frames, plane.channels)
    plane.bernoulli_draws += int(xs.size) * config.frames
    return intensity_from_counts(counts, config.frames, c, config)


def expose_pixel(image, x, y, c, config, seed):
    """Expose one pixel for a full exposure and return its flux estimate.

    Scalar for grayscale input, per-channel array otherwise.
    """
    plane = image if isinstance(image, SensorPlane) else SensorPlane(image)
    est = expose_pixels(plane, [x], [y], c, config, seed)[0]
    return float(est[0]) if plane.is_gray else est


# -- SPC1 photon-cube files --------------------------------------------------

CUBE_MAGIC = b"SPC1"
_CUBE_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class CubeLayout:
    """How a photon-cube file is laid out.

    With ``header=True`` the file starts with the SPC1 header and any
    dimensions given here are checked against it. With ``header=False`` the
    file is bare frame data and all three dimensions are required.
    """

    header: bool = True
    width: int = None
    height: int = None
    frame_count: int = None


def photon_cube_bytes(cube):
    head = _CUBE_HEADER.pack(CUBE_MAGIC, cube.width, cube.height, cube.frame_count)
    return head + np.ascontiguousarray(cube.packed, dtype=np.uint8).tobytes()


def write_photon_cube(path, cube):
    Path(path).write_bytes(photon_cube_bytes(cube))


def parse_photon_cube(data, layout=CubeLayout()):
    if layout.header:
        if len(data) < _CUBE_HEADER.size:
            raise PhotonCubeFormatError(f"truncated header: {len(data)} of {_CUBE_HEADER.size} bytes")
        magic, w, h, f = _CUBE_HEADER.unpack_from(data)
        if magic != CUBE_MAGIC:
            raise PhotonCubeFormatError(f"bad magic bytes {magic!r}, expected {CUBE_MAGIC!r}")
        for name, declared, found in (("width", layout.width, w), ("height", layout.height, h),
                                      ("frame_count", layout.frame_count, f)):
            if declared is not None and declared != found:
                raise PhotonCubeFormatError(f"{name} mismatch: layout says {declared}, file says {found}")
        body = memoryview(data)[_CUBE_HEADER.size:]
    else:
        if None in (layout.width, layout.height, layout.frame_count):
            raise ValueError("headerless layout needs width, height and frame_count")
        w, h, f = layout.width, layout.height, layout.frame_count
        body = memoryview(data)
    if w < 1 or h < 1 or f < 1:
        raise PhotonCubeFormatError(f"invalid dimensions {w}x{h}x{f}")
    row_bytes = (w + 7) // 8
    need = f * h * row_bytes
    if len(body) < need:
        raise PhotonCubeFormatError(f"truncated frame data: {len(body)} of {need} bytes")
    if len(body) > need:
        raise PhotonCubeFormatError(f"{len(body) - need} trailing bytes after frame data")
    packed = np.frombuffer(body, dtype=np.uint8).reshape(f, h, row_bytes).copy()
    return PhotonCube(w, h, f, packed).validate()


def load_photon_cube(path, layout=CubeLayout()):
    return parse_photon_cube(Path(path).read_bytes(), layout)


class SPADSensor(TransformerMixin, BaseEstimator):
    """Simulated SPAD camera.

    ``fit`` calibrates the exposure scale on a reference image; ``transform``
    captures an image at that exposure and returns the recovered flux.

    Parameters
    ----------
    frames : int
        Binary frames per exposure.
    mean_photons_per_pixel : float
        Target mean detections per pixel over the whole exposure.
    quantum_efficiency : float
    dark_count_rate : float
        Spurious detection rate, in the same units as image intensity.
    random_state : int or None
    """

    def __init__(self, frames=256, mean_photons_per_pixel=2.0, quantum_efficiency=1.0,
                 dark_count_rate=0.0, random_state=None):
        self.frames = frames
        self.mean_photons_per_pixel = mean_photons_per_pixel
        self.quantum_efficiency = quantum_efficiency
        self.dark_count_rate = dark_count_rate
        self.random_state = random_state

    def _config(self):
        return SensorConfig(self.quantum_efficiency, self.dark_count_rate, self.frames,
                            self.mean_photons_per_pixel)

    def fit(self, X, y=None):
        self.config_ = self._config()
        self.exposure_scale_ = compute_exposure_scale(X, self.config_)
        self.seed_ = rng.as_seed(self.random_state)
        return self

    def capture(self, X):
        """Photon cubes for each channel of ``X``."""
        check_is_fitted(self)
        img = as_channels(check_image(X))
        return [sample_photon_cube(img[:, :, k], self.exposure_scale_, self.config_, self.seed_, channel=k)
                for k in range(img.shape[2])]

    def transform(self, X):
        cubes = self.capture(X)
        out = np.stack([recover_intensity(cb, self.exposure_scale_, self.config_) for cb in cubes], axis=-1)
        return out[:, :, 0] if np.ndim(X) == 2 else out
