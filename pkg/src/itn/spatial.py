"""Differentiable affine warps (grid generation + bilinear sampling) and
the small CNN that predicts per-sample transformation parameters."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, _make
from .errors import DimensionError

IDENTITY_AFFINE = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


class AffineParams:
    """Per-sample 2x3 affine matrices in the normalized [-1,1]^2 frame."""

    def __init__(self, matrices):
        t = matrices if isinstance(matrices, Tensor) else Tensor(matrices)
        if t.data.ndim != 3 or t.shape[1:] != (2, 3):
            raise DimensionError(f"affine params must be [N,2,3], got {t.shape}")
        self.matrices = t

    @classmethod
    def identity(cls, n):
        return cls(np.broadcast_to(IDENTITY_AFFINE, (n, 2, 3)).copy())

    @property
    def count(self):
        return self.matrices.shape[0]

    def detach(self):
        return AffineParams(self.matrices.detach())


@lru_cache(maxsize=32)
def _lattice(h, w):
    from .kernels.common import base_lattice
    lat = base_lattice(h, w)
    lat.setflags(write=False)
    return lat


def affine_grid(params, out_h, out_w):
    """Map the base target lattice through each sample's matrix.

    grid[n,i,j] = M_n @ (x_j, y_i, 1); identity matrices reproduce the
    lattice bit-for-bit.
    """
    mats = params.matrices if isinstance(params, AffineParams) else ad._as_tensor(params)
    if out_h < 1 or out_w < 1:
        raise DimensionError("grid size must be >= 1")
    lat = _lattice(out_h, out_w)
    xs, ys = lat[..., 0], lat[..., 1]
    m = mats.data
    n = m.shape[0]
    grid = np.empty((n, out_h, out_w, 2))
    grid[..., 0] = (m[:, 0, 0, None, None] * xs + m[:, 0, 1, None, None] * ys
                    + m[:, 0, 2, None, None])
    grid[..., 1] = (m[:, 1, 0, None, None] * xs + m[:, 1, 1, None, None] * ys
                    + m[:, 1, 2, None, None])

    def rule(g):
        with ad.no_grad():
            d = np.empty((n, 2, 3))
            gx, gy = g.data[..., 0], g.data[..., 1]
            for row, gr in ((0, gx), (1, gy)):
                d[:, row, 0] = (gr * xs).sum(axis=(1, 2))
                d[:, row, 1] = (gr * ys).sum(axis=(1, 2))
                d[:, row, 2] = gr.sum(axis=(1, 2))
        return Tensor(d)

    return _make(grid, "affine_grid", (mats,), (rule,))


def transform(batch, params):
    """Warp each image by its affine matrix at the input's own resolution.

    Labels are untouched by construction; identity parameters return the
    batch bit-for-bit.
    """
    batch = ad._as_tensor(batch)
    h, w = batch.shape[2], batch.shape[3]
    return ad.bilinear_sample(batch, affine_grid(params, h, w))


class PredictorState:
    """Weights of the transformation-parameter network g(x): two stride-2
    conv layers with swish, then one fully connected layer emitting the six
    affine entries. The final layer starts at exactly zero weight with an
    identity bias, so a fresh predictor is the identity transform."""

    def __init__(self, in_channels, image_size, rng, channels=16,
                 noise_scale=0.05):
        self.in_channels = in_channels
        self.image_size = image_size
        self.channels = channels
        self.noise_scale = float(noise_scale)
        c = channels
        self.conv1 = Parameter(_he(rng, (c, in_channels, 5, 5)))
        self.conv2 = Parameter(_he(rng, (c, c, 5, 5)))
        side = -(-image_size // 2)
        side = -(-side // 2)
        self.feat_dim = c * side * side
        self.fc_w = Parameter(np.zeros((self.feat_dim, 6)))
        self.fc_b = Parameter(IDENTITY_AFFINE.reshape(6).copy())

    def parameters(self):
        return [self.conv1, self.conv2, self.fc_w, self.fc_b]

    def named_parameters(self):
        return {"predictor.conv1": self.conv1, "predictor.conv2": self.conv2,
                "predictor.fc_w": self.fc_w, "predictor.fc_b": self.fc_b}


def _he(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def predict_sigma(batch, state: PredictorState, rng, noise_scale=None) -> AffineParams:
    """sigma = g(x) + noise_scale * zeta with zeta ~ N(0,1) per entry.

    Differentiable with respect to the predictor weights; the noise draw is
    a constant. noise_scale=0 skips the draw entirely, so the result is a
    deterministic function of (batch, weights).
    """
    batch = ad._as_tensor(batch)
    ns = state.noise_scale if noise_scale is None else float(noise_scale)
    h = ad.swish(ad.conv2d(batch, state.conv1.value, 2))
    h = ad.swish(ad.conv2d(h, state.conv2.value, 2))
    flat = ad.reshape(h, (batch.shape[0], state.feat_dim))
    out = ad.fully_connected(flat, state.fc_w.value, state.fc_b.value)
    if ns != 0.0:
        zeta = rng.standard_normal(size=out.shape)
        out = ad.add(out, Tensor(ns * zeta))
    return AffineParams(ad.reshape(out, (batch.shape[0], 2, 3)))
