import numpy as np
import pytest
from PIL import Image

from supercam.io import (ImageFormatError, load_image, load_labels, netpbm_bytes, parse_netpbm, save_image,
                         save_labels)


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_rgb_round_trip_is_exact_at_8_bits(tmp_path, suffix):
    q = np.random.default_rng(0).integers(0, 256, (7, 9, 3))
    save_image(tmp_path / f"a{suffix}", q / 255.0)
    assert np.array_equal(np.rint(load_image(tmp_path / f"a{suffix}") * 255), q)


def test_gray_pgm_and_png(tmp_path):
    q = np.random.default_rng(1).integers(0, 256, (5, 6))
    for name in ("g.pgm", "g.png"):
        save_image(tmp_path / name, q / 255.0)
        img = load_image(tmp_path / name)
        assert img.shape == (5, 6)
        assert np.array_equal(np.rint(img * 255), q)


def test_sixteen_bit_pgm():
    arr = np.array([[0, 1000], [65535, 42]], dtype=np.uint16)
    back, maxval = parse_netpbm(netpbm_bytes(arr, 65535))
    assert maxval == 65535 and np.array_equal(back, arr)


def test_netpbm_header_with_comment():
    data = b"P5\n# made by hand\n2 1\n255\n\x00\xff"
    arr, _ = parse_netpbm(data)
    assert arr.tolist() == [[0, 255]]


def test_truncated_netpbm_names_offset():
    data = netpbm_bytes(np.zeros((4, 4), np.uint8), 255)
    with pytest.raises(ImageFormatError, match="byte offset"):
        parse_netpbm(data[:-3])
    with pytest.raises(ImageFormatError, match="not a binary"):
        parse_netpbm(b"P2\n1 1\n255\n0")


def test_unreadable_png(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not an image")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "x.png")


def test_label_round_trips(tmp_path):
    lab = np.random.default_rng(2).integers(0, 300, (6, 8))
    compact = np.unique(lab, return_inverse=True)[1].reshape(lab.shape)
    for name in ("l.pgm", "l.csv"):
        save_labels(tmp_path / name, lab)
        assert np.array_equal(load_labels(tmp_path / name), compact)


def test_label_png_and_shape_check(tmp_path):
    lab = np.array([[5, 5, 9], [9, 7, 7]], dtype=np.uint16)
    Image.fromarray(lab).save(tmp_path / "l.png")
    assert load_labels(tmp_path / "l.png").tolist() == [[0, 0, 2], [2, 1, 1]]
    with pytest.raises(ValueError, match="paired image"):
        load_labels(tmp_path / "l.png", shape=(3, 3))


def test_label_csv_variants(tmp_path):
    (tmp_path / "a.csv").write_text("1,2;3,4")
    assert load_labels(tmp_path / "a.csv").tolist() == [[0, 1], [2, 3]]
    (tmp_path / "b.csv").write_text("1,2\n3\n")
    with pytest.raises(ImageFormatError, match="ragged"):
        load_labels(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("1,x\n")
    with pytest.raises(ImageFormatError, match="non-integer"):
        load_labels(tmp_path / "c.csv")


def test_zero_is_void(tmp_path):
    (tmp_path / "v.csv").write_text("0,4,4\n0,9,9\n")
    assert load_labels(tmp_path / "v.csv", zero_is_void=True).tolist() == [[-1, 0, 0], [-1, 1, 1]]


def test_save_labels_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        save_labels(tmp_path / "n.pgm", np.array([[-1, 0]]))
