import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from supercam import rng
from supercam.spad import (CubeLayout, DegenerateInputError, PhotonCube, PhotonCubeFormatError, SensorConfig,
                           SensorPlane, SPADSensor, compute_exposure_scale, detection_probability, expose_pixel,
                           expose_pixels, intensity_from_counts, parse_photon_cube, photon_cube_bytes,
                           recover_intensity, sample_photon_cube)

from . import oracles


def test_sensor_config_rejects_bad_values():
    for kwargs in ({"quantum_efficiency": 0.0}, {"quantum_efficiency": 1.5}, {"dark_count_rate": -1.0},
                   {"frames": 0}, {"frames": 2.5}, {"mean_photons_per_pixel": 0.0},
                   {"frames": 4, "mean_photons_per_pixel": 4.0}):
        with pytest.raises(ValueError):
            SensorConfig(**kwargs)


def test_exposure_scale_formula():
    img = np.full((4, 5), 0.25)
    cfg = SensorConfig(frames=100, mean_photons_per_pixel=2.0)
    assert compute_exposure_scale(img, cfg) == pytest.approx(2.0 / (100 * 0.25))


def test_exposure_scale_rejects_black_image():
    with pytest.raises(DegenerateInputError):
        compute_exposure_scale(np.zeros((3, 3)), SensorConfig())


def test_detection_probability_matches_closed_form():
    cfg = SensorConfig(quantum_efficiency=0.6, dark_count_rate=0.05)
    for i in (0.0, 0.1, 1.0, 7.0):
        assert detection_probability(i, 0.3, cfg) == pytest.approx(1 - math.exp(-(0.3 * i * 0.6 + 0.3 * 0.05)))


@settings(max_examples=200, deadline=None)
@given(intensity=st.floats(0.0, 50.0), c=st.floats(1e-3, 1.0), eta=st.floats(0.05, 1.0),
       dark=st.floats(0.0, 2.0), frames=st.integers(1, 10_000))
def test_recovery_inverts_expected_counts(intensity, c, eta, dark, frames):
    cfg = SensorConfig(quantum_efficiency=eta, dark_count_rate=dark, frames=frames,
                       mean_photons_per_pixel=min(0.5, frames * 0.5))
    q = float(detection_probability(intensity, c, cfg))
    if frames * q >= frames - 0.5:
        return  # saturated regime is clipped by design
    est = float(intensity_from_counts(frames * q, frames, c, cfg))
    assert est == pytest.approx(intensity, rel=1e-7, abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(frames=st.integers(1, 5000), c=st.floats(1e-3, 2.0))
def test_recovery_bounded_and_monotone(frames, c):
    cfg = SensorConfig(frames=frames, mean_photons_per_pixel=min(0.5, frames * 0.5))
    s = np.arange(frames + 1)
    phi = intensity_from_counts(s, frames, c, cfg)
    assert np.all(np.isfinite(phi))
    assert phi[0] == 0.0
    assert np.all(np.diff(phi) > 0)


def test_dark_counts_clamp_to_zero():
    cfg = SensorConfig(dark_count_rate=1.0, frames=100, mean_photons_per_pixel=1.0)
    assert intensity_from_counts(0, 100, 0.01, cfg) == 0.0


def test_cube_counts_are_popcounts_and_frames_round_trip():
    img = np.random.default_rng(0).uniform(0, 1, (7, 13))
    cfg = SensorConfig(frames=40, mean_photons_per_pixel=4.0)
    cube = sample_photon_cube(img, compute_exposure_scale(img, cfg), cfg, seed=3)
    frames = cube.frames()
    assert frames.shape == (40, 7, 13)
    assert np.array_equal(frames.sum(axis=0), cube.counts)
    assert PhotonCube.from_frames(frames) == cube
    cube.validate()


def test_sampling_is_deterministic_per_seed():
    img = np.full((5, 9), 0.4)
    cfg = SensorConfig(frames=64, mean_photons_per_pixel=8.0)
    a = sample_photon_cube(img, 0.3, cfg, seed=1)
    assert a == sample_photon_cube(img, 0.3, cfg, seed=1)
    assert a != sample_photon_cube(img, 0.3, cfg, seed=2)


def test_single_pixel_exposure_matches_dense_cube():
    img = np.random.default_rng(1).uniform(0.1, 1, (6, 11))
    cfg = SensorConfig(frames=300, mean_photons_per_pixel=20.0)
    c = compute_exposure_scale(img, cfg)
    dense = recover_intensity(sample_photon_cube(img, c, cfg, seed=9), c, cfg)
    for y, x in [(0, 0), (5, 10), (2, 7)]:
        assert expose_pixel(img, x, y, c, cfg, seed=9) == dense[y, x]


def test_rgb_channels_use_separate_streams():
    img = np.full((4, 4, 3), 0.5)
    cfg = SensorConfig(frames=256, mean_photons_per_pixel=32.0)
    plane = SensorPlane(img)
    est = expose_pixels(plane, np.arange(4), np.zeros(4, int), 0.2, cfg, seed=0)
    assert est.shape == (4, 3)
    assert not np.all(est[:, 0] == est[:, 1])
    dense = [recover_intensity(sample_photon_cube(img[:, :, k], 0.2, cfg, 0, channel=k), 0.2, cfg)[0, :4]
             for k in range(3)]
    assert np.array_equal(est, np.stack(dense, axis=1))


def test_plane_counts_reads_and_draws():
    plane = SensorPlane(np.ones((3, 3)))
    cfg = SensorConfig(frames=16, mean_photons_per_pixel=1.0)
    expose_pixels(plane, [0, 1], [2, 2], 0.1, cfg, seed=0)
    assert plane.pixel_reads == 2
    assert plane.bernoulli_draws == 32
    with pytest.raises(IndexError):
        plane.read([3], [0])


def test_detection_counts_follow_binomial():
    # Total detections over N pixels x F frames ~ Binomial(N F, q): check the
    # mean and variance against 5-sigma bounds.
    img = np.full((64, 64), 0.5)
    cfg = SensorConfig(frames=128, mean_photons_per_pixel=16.0)
    c = compute_exposure_scale(img, cfg)
    q = float(detection_probability(0.5, c, cfg))
    counts = sample_photon_cube(img, c, cfg, seed=5).counts.ravel()
    n = counts.size
    se_mean = math.sqrt(cfg.frames * q * (1 - q) / n)
    assert abs(counts.mean() - cfg.frames * q) < 5 * se_mean
    var = cfg.frames * q * (1 - q)
    assert abs(counts.var() - var) < 5 * var * math.sqrt(2 / (n - 1))


def test_keyed_uniform_range_and_spread():
    u = rng.keyed_uniform(0, rng.STREAM_PHOTON, np.arange(200_000))
    assert u.min() >= 0.0 and u.max() < 1.0
    hist = np.bincount((u * 20).astype(int), minlength=20)
    expected = u.size / 20
    chi2 = ((hist - expected) ** 2 / expected).sum()
    assert chi2 < 45.3  # chi-square 19 dof, p = 0.999


def test_keyed_bits_depend_on_every_counter():
    base = rng.keyed_bits(7, 1, 2, 3)
    assert base != rng.keyed_bits(8, 1, 2, 3)
    assert base != rng.keyed_bits(7, 1, 2, 4)
    assert base != rng.keyed_bits(7, 2, 1, 3)


def test_as_seed():
    assert rng.as_seed(5) == 5
    assert isinstance(rng.as_seed(None), int)
    assert rng.as_seed(np.random.default_rng(0)) == rng.as_seed(np.random.default_rng(0))
    with pytest.raises(ValueError):
        rng.as_seed(-1)
    with pytest.raises(TypeError):
        rng.as_seed("x")


def test_calibration_exact_rate_oracle():
    img = np.random.default_rng(2).uniform(0, 1, (20, 20))
    cfg = SensorConfig(frames=200, mean_photons_per_pixel=2.0)
    c = compute_exposure_scale(img, cfg)
    exact = float(detection_probability(img, c, cfg).mean())
    assert exact == pytest.approx(oracles.expected_detection_rate(img, c), rel=1e-12)
    target = cfg.per_frame_rate
    bound = (c * img.max()) ** 2 / 2
    assert target - bound <= exact <= target


# -- SPC1 files ----------------------------------------------------------------

@pytest.fixture
def cube():
    frames = np.random.default_rng(4).uniform(size=(5, 3, 11)) < 0.3
    return PhotonCube.from_frames(frames)


def test_spc1_round_trip(cube, tmp_path):
    from supercam.spad import load_photon_cube, write_photon_cube
    write_photon_cube(tmp_path / "c.spc", cube)
    back = load_photon_cube(tmp_path / "c.spc")
    assert back == cube
    assert np.array_equal(back.counts, cube.counts)
    data = (tmp_path / "c.spc").read_bytes()
    assert data[:4] == b"SPC1" and len(data) == 16 + 5 * 3 * 2


def test_spc1_headerless(cube):
    body = photon_cube_bytes(cube)[16:]
    assert parse_photon_cube(body, CubeLayout(header=False, width=11, height=3, frame_count=5)) == cube
    with pytest.raises(ValueError):
        parse_photon_cube(body, CubeLayout(header=False, width=11))


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d[:10], "truncated header"),
    (lambda d: d[:-1], "truncated frame data"),
    (lambda d: d + b"\0", "trailing"),
    (lambda d: b"XXXX" + d[4:], "bad magic"),
])
def test_spc1_corruption_is_reported(cube, mutate, message):
    with pytest.raises(PhotonCubeFormatError, match=message):
        parse_photon_cube(mutate(photon_cube_bytes(cube)))


def test_spc1_layout_mismatch(cube):
    with pytest.raises(PhotonCubeFormatError, match="width mismatch"):
        parse_photon_cube(photon_cube_bytes(cube), CubeLayout(width=12))


# -- estimator -----------------------------------------------------------------

def test_sensor_estimator_api():
    img = np.random.default_rng(3).uniform(0.2, 1, (8, 8, 3))
    est = SPADSensor(frames=128, mean_photons_per_pixel=16.0, random_state=0)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.transform(img)
    out = est.fit_transform(img)
    assert out.shape == img.shape
    assert est.exposure_scale_ == pytest.approx(16.0 / (128 * img.mean()))
    assert np.array_equal(out, est.transform(img))
    est.set_params(frames=0)
    with pytest.raises(ValueError):
        est.fit(img)
