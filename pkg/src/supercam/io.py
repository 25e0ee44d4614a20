"""Image and label-map files: PNG, binary PGM/PPM, and CSV label grids."""

from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import check_labels, compact_labels


class ImageFormatError(ValueError):
    pass


_WHITESPACE = b" \t\r\n\v\f"


def _netpbm_tokens(data, count):
    """Read ``count`` header tokens; return them and the offset after the last one."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in _WHITESPACE:
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise ImageFormatError(f"truncated netpbm header at byte offset {pos}")
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        tokens.append(bytes(data[start:pos]))
    return tokens, pos


def parse_netpbm(data):
    """Decode binary PGM (P5) or PPM (P6) bytes.

    Returns ``(array, maxval)``; the array is uint16 and (H, W) or (H, W, 3).
    """
    if data[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"not a binary PGM/PPM file (magic {bytes(data[:2])!r})")
    channels = 1 if data[:2] == b"P5" else 3
    tokens, pos = _netpbm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"malformed netpbm header {tokens!r}") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"invalid netpbm dimensions {width}x{height} maxval {maxval}")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise ImageFormatError(f"missing whitespace after netpbm header at byte offset {pos}")
    pos += 1
    sample = 1 if maxval < 256 else 2
    need = width * height * channels * sample
    end = pos + need
    if len(data) < end:
        raise ImageFormatError(
            f"truncated pixel data: file ends at byte offset {len(data)}, expected {end}")
    dtype = np.uint8 if sample == 1 else np.dtype(">u2")
    arr = np.frombuffer(data, dtype=dtype, count=width * height * channels, offset=pos)
    arr = arr.astype(np.uint16).reshape((height, width, channels) if channels == 3 else (height, width))
    return arr, maxval


def netpbm_bytes(arr, maxval=None):
    arr = np.asarray(arr)
    if maxval is None:
        maxval = 255 if arr.max(initial=0) < 256 else 65535
    magic = b"P5" if arr.ndim == 2 else b"P6"
    h, w = arr.shape[:2]
    head = magic + f"\n{w} {h}\n{maxval}\n".encode()
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    return head + np.ascontiguousarray(arr.astype(dtype)).tobytes()


def _is_netpbm(path):
    return Path(path).suffix.lower() in (".pgm", ".ppm", ".pnm")


def load_image(path):
    """Read an image as linear float values in [0, 1].

    No gamma transform is applied; 8-bit values are divided by 255.
    """
    path = Path(path)
    if _is_netpbm(path):
        arr, maxval = parse_netpbm(path.read_bytes())
        return arr.astype(np.float64) / maxval
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return arr / (65535.0 if arr.max(initial=0) > 255 else 255.0)
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc


def quantize8(image):
    return np.clip(np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_image(path, image):
    """Write an image, quantizing to 8 bits. Format follows the suffix."""
    path = Path(path)
    q = quantize8(image)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[:, :, 0]
    if _is_netpbm(path):
        path.write_bytes(netpbm_bytes(q, 255))
    else:
        Image.fromarray(q).save(path)


def _parse_label_csv(text):
    rows = [r for r in text.replace(";", "\n").splitlines() if r.strip()]
    try:
        grid = [[int(v) for v in r.split(",")] for r in rows]
    except ValueError as exc:
        raise ImageFormatError(f"label CSV holds a non-integer id: {exc}") from None
    if not grid or len({len(r) for r in grid}) != 1:
        raise ImageFormatError("label CSV rows are ragged or empty")
    return np.asarray(grid, dtype=np.int64)


def load_labels(path, shape=None, zero_is_void=False):
    """Read a label map from a PGM (8/16-bit), 16-bit PNG, or CSV file.

    Ids are compacted to ``0..K-1``. With ``zero_is_void`` id 0 becomes -1
    and is ignored by the metrics. ``shape`` is the (H, W) the map must
    have, typically that of its paired image.
    """
    path = Path(path)
    if path.suffix.lower() in (".csv", ".txt"):
        raw = _parse_label_csv(path.read_text())
    elif _is_netpbm(path):
        raw, _ = parse_netpbm(path.read_bytes())
        if raw.ndim != 2:
            raise ImageFormatError("label maps must be single-channel PGM")
        raw = raw.astype(np.int64)
    else:
        with Image.open(path) as im:
            raw = np.asarray(im).astype(np.int64)
        if raw.ndim != 2:
            raise ImageFormatError("label maps must be single-channel")
    if shape is not None and raw.shape != tuple(shape):
        raise ValueError(f"label map {path} is {raw.shape}, paired image is {tuple(shape)}")
    if zero_is_void:
        out = np.full(raw.shape, -1, dtype=np.int64)
        keep = raw != 0
        if keep.any():
            out[keep] = compact_labels(raw[keep])
        return out
    return compact_labels(raw)


def save_labels(path, labels):
    """Write a label map as 16-bit PGM or CSV (by suffix)."""
    lab = check_labels(labels)
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text("\n".join(",".join(str(v) for v in row) for row in lab) + "\n")
        return
    if lab.min() < 0 or lab.max() > 65535:
        raise ValueError("PGM label ids must lie in 0..65535")
    path.write_bytes(netpbm_bytes(lab, 65535))
