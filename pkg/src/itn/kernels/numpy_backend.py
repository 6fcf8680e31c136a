"""Pure-numpy kernels: the fallback path when numba is unavailable or
ITN_KERNELS=numpy is set.

Convolutions are computed as a sum over the kernel window of strided
slices, which keeps the reduction order fixed (deterministic) and stays
vectorized over batch and channels.
"""

import numpy as np

from .common import PIXEL_SNAP, conv_out_shape, pad_input

NAME = "numpy"


def conv2d_forward(x, k, stride):
    (n, kk, ho, wo), pads = conv_out_shape(x.shape, k.shape, stride)
    xp = pad_input(x, pads)
    kh, kw = k.shape[2], k.shape[3]
    out = np.zeros((n, kk, ho, wo))
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                    j : j + (wo - 1) * stride + 1 : stride]
            out += np.einsum("nchw,fc->nfhw", sl, k[:, :, i, j])
    return out


def conv2d_input_grad(dy, k, x_shape, stride):
    (_, _, ho, wo), pads = conv_out_shape(x_shape, k.shape, stride)
    pt, pb, pl, pr = pads
    h, w = x_shape[2], x_shape[3]
    kh, kw = k.shape[2], k.shape[3]
    dxp = np.zeros((x_shape[0], x_shape[1], h + pt + pb, w + pl + pr))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                j : j + (wo - 1) * stride + 1 : stride] += np.einsum(
                "nfhw,fc->nchw", dy, k[:, :, i, j])
    return dxp[:, :, pt : pt + h, pl : pl + w]


def conv2d_kernel_grad(dy, x, k_shape, stride):
    (_, _, ho, wo), pads = conv_out_shape(x.shape, k_shape, stride)
    xp = pad_input(x, pads)
    kh, kw = k_shape[2], k_shape[3]
    dk = np.zeros(k_shape)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                    j : j + (wo - 1) * stride + 1 : stride]
            dk[:, :, i, j] = np.einsum("nfhw,nchw->fc", dy, sl)
    return dk


def _pixel_coords(grid, h, w):
    px = (grid[..., 0] + 1.0) * 0.5 * (w - 1)
    py = (grid[..., 1] + 1.0) * 0.5 * (h - 1)
    rx, ry = np.rint(px), np.rint(py)
    px = np.where(np.abs(px - rx) < PIXEL_SNAP, rx, px)
    py = np.where(np.abs(py - ry) < PIXEL_SNAP, ry, py)
    return px, py


def _corners(px, py, h, w):
    x0 = np.floor(px)
    y0 = np.floor(py)
    wx = px - x0
    wy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    ins = []
    for yy, xx in ((y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)):
        ins.append(((yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)).astype(np.float64))
    return x0, y0, wx, wy, ins


def _gather(img, ni, yy, xx, mask):
    # img[n, :, y, x] with advanced indices lands as [N,Ho,Wo,C]
    v = img[ni, :, yy, xx]
    return np.moveaxis(v, -1, 1) * mask[:, None, :, :]


def bilinear_forward(img, grid):
    n, c, h, w = img.shape
    px, py = _pixel_coords(grid, h, w)
    x0, y0, wx, wy, ins = _corners(px, py, h, w)
    x0c, y0c = np.clip(x0, 0, w - 1), np.clip(y0, 0, h - 1)
    x1c, y1c = np.clip(x0 + 1, 0, w - 1), np.clip(y0 + 1, 0, h - 1)
    ni = np.arange(n)[:, None, None]
    return (_gather(img, ni, y0c, x0c, ins[0] * (1 - wy) * (1 - wx))
            + _gather(img, ni, y0c, x1c, ins[1] * (1 - wy) * wx)
            + _gather(img, ni, y1c, x0c, ins[2] * wy * (1 - wx))
            + _gather(img, ni, y1c, x1c, ins[3] * wy * wx))


def bilinear_input_grads(dy, img, grid):
    n, c, h, w = img.shape
    px, py = _pixel_coords(grid, h, w)
    x0, y0, wx, wy, ins = _corners(px, py, h, w)
    x0c, y0c = np.clip(x0, 0, w - 1), np.clip(y0, 0, h - 1)
    x1c, y1c = np.clip(x0 + 1, 0, w - 1), np.clip(y0 + 1, 0, h - 1)
    ni = np.arange(n)[:, None, None]

    dimg = np.zeros_like(img)
    dimg_v = np.moveaxis(dimg, 1, -1)  # view [N,H,W,C]; add.at writes through
    dyc = np.moveaxis(dy, 1, -1)
    weights = (ins[0] * (1 - wy) * (1 - wx), ins[1] * (1 - wy) * wx,
               ins[2] * wy * (1 - wx), ins[3] * wy * wx)
    corners = ((y0c, x0c), (y0c, x1c), (y1c, x0c), (y1c, x1c))
    for (yy, xx), ww in zip(corners, weights):
        np.add.at(dimg_v, (ni, yy, xx), dyc * ww[..., None])

    v00 = _gather(img, ni, y0c, x0c, ins[0])
    v01 = _gather(img, ni, y0c, x1c, ins[1])
    v10 = _gather(img, ni, y1c, x0c, ins[2])
    v11 = _gather(img, ni, y1c, x1c, ins[3])
    wyb = wy[:, None, :, :]
    wxb = wx[:, None, :, :]
    dpx = ((1 - wyb) * (v01 - v00) + wyb * (v11 - v10)) * dy
    dpy = ((1 - wxb) * (v10 - v00) + wxb * (v11 - v01)) * dy
    dgrid = np.empty_like(grid)
    dgrid[..., 0] = dpx.sum(axis=1) * 0.5 * (w - 1)
    dgrid[..., 1] = dpy.sum(axis=1) * 0.5 * (h - 1)
    return dimg, dgrid
