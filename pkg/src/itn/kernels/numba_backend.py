"""Numba-jitted kernels for the inner loops that dominate runtime.

Convolutions gather the input windows with jitted loops (im2col) and hand
the contraction to BLAS; bilinear sampling is pure jitted loops. All
reductions run in a fixed order per output element, so results are
deterministic run to run. Padding happens outside the jitted code.
"""

import numpy as np
from numba import njit

from .common import PIXEL_SNAP, conv_out_shape, pad_input

NAME = "numba"


@njit(cache=True)
def _im2col(xp, stride, kh, kw, ho, wo):
    n, c, _, _ = xp.shape
    cols = np.empty((n * ho * wo, c * kh * kw))
    for b in range(n):
        for oy in range(ho):
            iy0 = oy * stride
            for ox in range(wo):
                ix0 = ox * stride
                row = (b * ho + oy) * wo + ox
                idx = 0
                for ci in range(c):
                    for ky in range(kh):
                        for kx in range(kw):
                            cols[row, idx] = xp[b, ci, iy0 + ky, ix0 + kx]
                            idx += 1
    return cols


@njit(cache=True)
def _col2im(dcols, n, c, hp, wp, stride, kh, kw, ho, wo):
    dxp = np.zeros((n, c, hp, wp))
    for b in range(n):
        for oy in range(ho):
            iy0 = oy * stride
            for ox in range(wo):
                ix0 = ox * stride
                row = (b * ho + oy) * wo + ox
                idx = 0
                for ci in range(c):
                    for ky in range(kh):
                        for kx in range(kw):
                            dxp[b, ci, iy0 + ky, ix0 + kx] += dcols[row, idx]
                            idx += 1
    return dxp


def _flatten_out(mat, n, kk, ho, wo):
    return np.ascontiguousarray(mat.reshape(n, ho, wo, kk).transpose(0, 3, 1, 2))


def _flatten_dy(dy):
    n, kk, ho, wo = dy.shape
    return np.ascontiguousarray(dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, kk))


def conv2d_forward(x, k, stride):
    (n, kk, ho, wo), pads = conv_out_shape(x.shape, k.shape, stride)
    kh, kw = k.shape[2], k.shape[3]
    xp = np.ascontiguousarray(pad_input(x, pads))
    cols = _im2col(xp, stride, kh, kw, ho, wo)
    kmat = np.ascontiguousarray(k.reshape(kk, -1).T)
    return _flatten_out(cols @ kmat, n, kk, ho, wo)


def conv2d_input_grad(dy, k, x_shape, stride):
    (_, kk, ho, wo), pads = conv_out_shape(x_shape, k.shape, stride)
    pt, pb, pl, pr = pads
    n, c, h, w = x_shape
    kh, kw = k.shape[2], k.shape[3]
    dcols = _flatten_dy(dy) @ np.ascontiguousarray(k.reshape(kk, -1))
    dxp = _col2im(np.ascontiguousarray(dcols), n, c, h + pt + pb, w + pl + pr,
                  stride, kh, kw, ho, wo)
    return np.ascontiguousarray(dxp[:, :, pt:pt + h, pl:pl + w])


def conv2d_kernel_grad(dy, x, k_shape, stride):
    (_, kk, ho, wo), pads = conv_out_shape(x.shape, k_shape, stride)
    kh, kw = k_shape[2], k_shape[3]
    xp = np.ascontiguousarray(pad_input(x, pads))
    cols = _im2col(xp, stride, kh, kw, ho, wo)
    return (_flatten_dy(dy).T @ cols).reshape(k_shape)


@njit(cache=True)
def _pixel(gv, half):
    p = (gv + 1.0) * half
    r = np.rint(p)
    if abs(p - r) < PIXEL_SNAP:
        p = r
    return p


@njit(cache=True)
def _bilinear_fwd(img, grid):
    n, c, h, w = img.shape
    ho, wo = grid.shape[1], grid.shape[2]
    halfx = 0.5 * (w - 1)
    halfy = 0.5 * (h - 1)
    out = np.zeros((n, c, ho, wo))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                px = _pixel(grid[b, i, j, 0], halfx)
                py = _pixel(grid[b, i, j, 1], halfy)
                x0 = int(np.floor(px))
                y0 = int(np.floor(py))
                wx = px - x0
                wy = py - y0
                for ci in range(c):
                    acc = 0.0
                    if 0 <= y0 < h and 0 <= x0 < w:
                        acc += (1 - wy) * (1 - wx) * img[b, ci, y0, x0]
                    if 0 <= y0 < h and 0 <= x0 + 1 < w:
                        acc += (1 - wy) * wx * img[b, ci, y0, x0 + 1]
                    if 0 <= y0 + 1 < h and 0 <= x0 < w:
                        acc += wy * (1 - wx) * img[b, ci, y0 + 1, x0]
                    if 0 <= y0 + 1 < h and 0 <= x0 + 1 < w:
                        acc += wy * wx * img[b, ci, y0 + 1, x0 + 1]
                    out[b, ci, i, j] = acc
    return out


@njit(cache=True)
def _bilinear_bwd(dy, img, grid):
    n, c, h, w = img.shape
    ho, wo = grid.shape[1], grid.shape[2]
    halfx = 0.5 * (w - 1)
    halfy = 0.5 * (h - 1)
    dimg = np.zeros_like(img)
    dgrid = np.zeros_like(grid)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                px = _pixel(grid[b, i, j, 0], halfx)
                py = _pixel(grid[b, i, j, 1], halfy)
                x0 = int(np.floor(px))
                y0 = int(np.floor(py))
                wx = px - x0
                wy = py - y0
                in00 = 0 <= y0 < h and 0 <= x0 < w
                in01 = 0 <= y0 < h and 0 <= x0 + 1 < w
                in10 = 0 <= y0 + 1 < h and 0 <= x0 < w
                in11 = 0 <= y0 + 1 < h and 0 <= x0 + 1 < w
                dpx = 0.0
                dpy = 0.0
                for ci in range(c):
                    g = dy[b, ci, i, j]
                    v00 = img[b, ci, y0, x0] if in00 else 0.0
                    v01 = img[b, ci, y0, x0 + 1] if in01 else 0.0
                    v10 = img[b, ci, y0 + 1, x0] if in10 else 0.0
                    v11 = img[b, ci, y0 + 1, x0 + 1] if in11 else 0.0
                    if in00:
                        dimg[b, ci, y0, x0] += g * (1 - wy) * (1 - wx)
                    if in01:
                        dimg[b, ci, y0, x0 + 1] += g * (1 - wy) * wx
                    if in10:
                        dimg[b, ci, y0 + 1, x0] += g * wy * (1 - wx)
                    if in11:
                        dimg[b, ci, y0 + 1, x0 + 1] += g * wy * wx
                    dpx += g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10))
                    dpy += g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01))
                dgrid[b, i, j, 0] = dpx * halfx
                dgrid[b, i, j, 1] = dpy * halfy
    return dimg, dgrid


def bilinear_forward(img, grid):
    return _bilinear_fwd(np.ascontiguousarray(img), np.ascontiguousarray(grid))


def bilinear_input_grads(dy, img, grid):
    return _bilinear_bwd(np.ascontiguousarray(dy), np.ascontiguousarray(img),
                         np.ascontiguousarray(grid))
