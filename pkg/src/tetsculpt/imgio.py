"""Binary PPM (P6) / PGM (P5) image files, 8-bit.

Values are linear in [0, 1] scaled by 255 and rounded; no gamma handling
anywhere in the pipeline, so a round trip is exact on the 256-level lattice.
"""

from __future__ import annotations

import numpy as np


def _quantize(img):
    arr = np.asarray(img, np.float32)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    """img: [H, W, 3] floats in [0, 1]."""
    arr = _quantize(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.tobytes())


def write_pgm(path, img):
    """img: [H, W] floats in [0, 1]."""
    arr = _quantize(img)
    if arr.ndim != 2:
        raise ValueError(f"expected H x W image, got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(arr.tobytes())


def _read_header(data, magic, path):
    if data[:2] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} file, "
                         f"got {data[:2]!r}")
    # header tokens: magic, width, height, maxval; '#' comments allowed
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        tokens.append(int(data[start:i]))
    i += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images supported, "
                         f"maxval={maxval}")
    return w, h, i


def read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    w, h, ofs = _read_header(data, b"P6", path)
    arr = np.frombuffer(data, np.uint8, count=w * h * 3, offset=ofs)
    return (arr.reshape(h, w, 3).astype(np.float32)) / 255.0


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    w, h, ofs = _read_header(data, b"P5", path)
    arr = np.frombuffer(data, np.uint8, count=w * h, offset=ofs)
    return (arr.reshape(h, w).astype(np.float32)) / 255.0
