import numpy as np
import pytest

import itn.autodiff as ad
import itn.kernels as kernels
from itn.kernels import numba_backend, numpy_backend


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request, monkeypatch):
    """Run kernel-level tests against both backends."""
    mod = numba_backend if request.param == "numba" else numpy_backend
    for name in ("conv2d_forward", "conv2d_input_grad", "conv2d_kernel_grad",
                 "bilinear_forward", "bilinear_input_grads"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


def central_diff(build, tensor, i, h=1e-5):
    """Central finite difference of the scalar build() wrt tensor.data.flat[i]."""
    flat = tensor.data.reshape(-1)
    old = flat[i]
    flat[i] = old + h
    fp = build().item()
    flat[i] = old - h
    fm = build().item()
    flat[i] = old
    return (fp - fm) / (2.0 * h)


def fd_worst_rel_err(build, tensors, h=1e-5, abs_floor=1e-7, max_coords=None,
                     rng=None):
    """Backward-vs-finite-difference comparison over every coordinate of the
    given tensors (or a random subset when max_coords is set)."""
    for t in tensors:
        t.zero_grad()
    root = build()
    ad.backward(root)
    worst = 0.0
    for t in tensors:
        n = t.data.size
        idx = range(n)
        if max_coords is not None and n > max_coords:
            assert rng is not None
            idx = rng.choice(n, size=max_coords, replace=False)
        for i in idx:
            num = central_diff(build, t, i, h=h)
            ana = t.grad.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
            worst = max(worst, err)
    return worst


def conv2d_loop_oracle(x, k, stride):
    """Direct nested-loop convolution with zero same-padding."""
    n, c, h, w = x.shape
    kk, _, kh, kw = k.shape
    ho, wo = -(-h // stride), -(-w // stride)
    pt = max((ho - 1) * stride + kh - h, 0) // 2
    pl = max((wo - 1) * stride + kw - w, 0) // 2
    out = np.zeros((n, kk, ho, wo))
    for b in range(n):
        for f in range(kk):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride - pt + ky
                                ix = ox * stride - pl + kx
                                if 0 <= iy < h and 0 <= ix < w:
                                    acc += x[b, ci, iy, ix] * k[f, ci, ky, kx]
                    out[b, f, oy, ox] = acc
    return out


def matmul_loop_oracle(a, b):
    n, d = a.shape
    _, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(d):
                out[i, j] += a[i, t] * b[t, j]
    return out
