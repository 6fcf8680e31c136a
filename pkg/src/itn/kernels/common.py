"""Shared geometry helpers for the conv / resampling kernels."""

import numpy as np


def same_pad(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) for zero same-padding.

    out = ceil(size / stride), matching the usual SAME convention.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return out, before, total - before


def conv_out_shape(x_shape, k_shape, stride):
    n, c, h, w = x_shape
    kk, kc, kh, kw = k_shape
    if kc != c:
        raise ValueError(
            f"kernel expects {kc} input channels, got {c}"
        )
    ho, pt, pb = same_pad(h, kh, stride)
    wo, pl, pr = same_pad(w, kw, stride)
    return (n, kk, ho, wo), (pt, pb, pl, pr)


def pad_input(x, pads):
    pt, pb, pl, pr = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


# Sub-ulp drift from the normalized-coordinate round trip would otherwise
# keep integer grids from landing exactly on pixel centers.
PIXEL_SNAP = 1e-9


def base_lattice(h: int, w: int) -> np.ndarray:
    """Normalized target coordinates, shape [h, w, 2] with (x, y) last."""
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    lat = np.empty((h, w, 2))
    lat[..., 0] = xs[None, :]
    lat[..., 1] = ys[:, None]
    return lat
