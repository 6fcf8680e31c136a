"""8-bit grayscale grid dumps of sample batches (binary PGM or PNG)."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError


def to_grid(images, per_row=None, pad=1) -> np.ndarray:
    """Tile [N,C,H,W] images (channel 0) into one uint8 grayscale canvas."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ArgumentError("expected [N,C,H,W] images")
    n, _, h, w = images.shape
    if per_row is None:
        per_row = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / per_row))
    canvas = np.zeros((rows * (h + pad) - pad, per_row * (w + pad) - pad))
    for i in range(n):
        r, c = divmod(i, per_row)
        canvas[r * (h + pad):r * (h + pad) + h,
               c * (w + pad):c * (w + pad) + w] = images[i, 0]
    return np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, gray: np.ndarray):
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ArgumentError("not a binary PGM file")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=h * w).reshape(h, w)


def write_grid(path, images, per_row=None):
    """Write a sample grid; format chosen by suffix (.pgm or .png)."""
    gray = to_grid(images, per_row=per_row)
    path = str(path)
    if path.endswith(".pgm"):
        write_pgm(path, gray)
    elif path.endswith(".png"):
        from PIL import Image
        Image.fromarray(gray, mode="L").save(path)
    else:
        raise ArgumentError("grid path must end in .pgm or .png")
    return gray.shape
