import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import itn.autodiff as ad
from itn.autodiff import Tensor
from itn.spatial import (AffineParams, PredictorState, affine_grid,
                         predict_sigma, transform)
from itn.kernels.common import base_lattice

from conftest import fd_worst_rel_err


def _params(mat, n=1):
    return AffineParams(np.broadcast_to(np.asarray(mat, dtype=float), (n, 2, 3)).copy())


class TestAffineGrid:
    def test_identity_reproduces_lattice(self):
        grid = affine_grid(AffineParams.identity(2), 5, 7)
        lat = base_lattice(5, 7)
        for n in range(2):
            np.testing.assert_array_equal(grid.data[n], lat)

    def test_translation_offsets_lattice(self):
        grid = affine_grid(_params([[1, 0, 0.5], [0, 1, 0]]), 4, 4)
        lat = base_lattice(4, 4)
        np.testing.assert_array_equal(grid.data[0, ..., 0], lat[..., 0] + 0.5)
        np.testing.assert_array_equal(grid.data[0, ..., 1], lat[..., 1])

    def test_rotation_90deg(self):
        # [[0,-1,0],[1,0,0]] maps (x, y) -> (-y, x); checked at the corners
        grid = affine_grid(_params([[0, -1, 0], [1, 0, 0]]), 3, 3)
        lat = base_lattice(3, 3)
        np.testing.assert_array_equal(grid.data[0, ..., 0], -lat[..., 1])
        np.testing.assert_array_equal(grid.data[0, ..., 1], lat[..., 0])
        for (i, j) in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            x, y = lat[i, j]
            np.testing.assert_array_equal(grid.data[0, i, j], [-y, x])

    def test_gradient_wrt_params(self):
        rng = np.random.default_rng(20)
        mats = Tensor(rng.normal(size=(2, 2, 3)) * 0.3, requires_grad=True)
        w = Tensor(rng.normal(size=(2, 4, 5, 2)))

        def build():
            return ad.sum_(ad.mul(affine_grid(mats, 4, 5), w))

        assert fd_worst_rel_err(build, [mats]) < 1e-6


class TestBilinearSample:
    def test_identity_grid_exact(self):
        rng = np.random.default_rng(21)
        img = rng.normal(size=(2, 3, 7, 9))
        grid = np.broadcast_to(base_lattice(7, 9), (2, 7, 9, 2)).copy()
        out = ad.bilinear_sample(Tensor(img), Tensor(grid))
        np.testing.assert_array_equal(out.data, img)

    def test_center_of_2x2(self):
        img = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
        grid = np.zeros((1, 3, 3, 2))
        out = ad.bilinear_sample(Tensor(img), Tensor(grid))
        np.testing.assert_allclose(out.data, 1.5)

    def test_one_pixel_shift_matches_roll(self):
        rng = np.random.default_rng(22)
        img = rng.uniform(size=(1, 1, 6, 6))
        w = 6
        dx = 2.0 / (w - 1)  # one pixel in normalized units
        grid = np.broadcast_to(base_lattice(6, 6), (1, 6, 6, 2)).copy()
        grid[..., 0] += dx
        out = ad.bilinear_sample(Tensor(img), Tensor(grid))
        expect = np.zeros_like(img)
        expect[..., :-1] = img[..., 1:]  # rightward sample = leftward shift
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_outside_samples_zero(self):
        img = np.ones((1, 1, 4, 4))
        grid = np.full((1, 2, 2, 2), 5.0)
        out = ad.bilinear_sample(Tensor(img), Tensor(grid))
        np.testing.assert_array_equal(out.data, 0.0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_convex_combination_bounds(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.normal(size=(1, 2, 5, 5))
        grid = rng.uniform(-1.6, 1.6, size=(1, 4, 4, 2))
        out = ad.bilinear_sample(Tensor(img), Tensor(grid)).data
        lo, hi = min(img.min(), 0.0), max(img.max(), 0.0)
        assert out.min() >= lo - 1e-12
        assert out.max() <= hi + 1e-12

    def test_gradients_match_fd(self, kernel_backend):
        rng = np.random.default_rng(23)
        img = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
        # keep sampling points 0.257 pixels away from the integer lattice to
        # stay clear of the interpolation kinks
        px = rng.integers(0, 4, size=(2, 3, 3)) + 0.257
        py = rng.integers(0, 4, size=(2, 3, 3)) + 0.257
        grid_np = np.stack([px / 2.0 - 1.0, py / 2.0 - 1.0], axis=-1)
        grid = Tensor(grid_np, requires_grad=True)
        w = Tensor(rng.normal(size=(2, 2, 3, 3)))

        def build():
            return ad.sum_(ad.mul(ad.bilinear_sample(img, grid), w))

        assert fd_worst_rel_err(build, [img, grid], h=1e-5) < 1e-3


class TestTransform:
    def test_identity_bit_equal(self):
        rng = np.random.default_rng(24)
        batch = rng.uniform(size=(3, 1, 28, 28))
        out = transform(Tensor(batch), AffineParams.identity(3))
        np.testing.assert_array_equal(out.data, batch)

    def test_roundtrip_recovers_interior(self):
        # smooth image: broad gaussian bump
        yy, xx = np.mgrid[0:12, 0:12]
        img = np.exp(-((xx - 5.5) ** 2 + (yy - 5.5) ** 2) / 18.0).reshape(1, 1, 12, 12)
        ang = 0.3
        a = np.array([[np.cos(ang), -np.sin(ang), 0.1],
                      [np.sin(ang), np.cos(ang), -0.05]])
        lin_inv = np.linalg.inv(a[:, :2])
        inv = np.hstack([lin_inv, -lin_inv @ a[:, 2:]])
        once = transform(Tensor(img), _params(a))
        back = transform(once, _params(inv))
        inner = slice(2, -2)
        err = np.abs(back.data - img)[0, 0, inner, inner].max()
        assert err <= 0.05

    def test_scale_zero_collapses_to_center(self):
        rng = np.random.default_rng(25)
        img = rng.uniform(size=(1, 1, 5, 5))
        out = transform(Tensor(img), _params([[0, 0, 0], [0, 0, 0]]))
        np.testing.assert_allclose(out.data, img[0, 0, 2, 2])

    def test_gradients_through_transform(self, kernel_backend):
        rng = np.random.default_rng(26)
        img = Tensor(rng.normal(size=(2, 1, 6, 6)), requires_grad=True)
        # offset rotation+shift keeps sample points off the integer lattice
        mats = Tensor(np.tile(np.array([[0.93, -0.21, 0.0514],
                                        [0.21, 0.93, -0.0514]]), (2, 1, 1)),
                      requires_grad=True)
        w = Tensor(rng.normal(size=(2, 1, 6, 6)))

        def build():
            return ad.sum_(ad.mul(transform(img, AffineParams(mats)), w))

        assert fd_worst_rel_err(build, [img, mats], h=1e-5) < 1e-3


class TestPredictSigma:
    def test_fresh_state_is_identity(self):
        rng = np.random.default_rng(27)
        state = PredictorState(1, 8, rng, noise_scale=0.0)
        batch = Tensor(rng.uniform(size=(5, 1, 8, 8)))
        sig = predict_sigma(batch, state, rng)
        expect = np.broadcast_to(np.array([[1.0, 0, 0], [0, 1, 0]]), (5, 2, 3))
        np.testing.assert_array_equal(sig.matrices.data, expect)

    def test_deterministic_without_noise(self):
        rng = np.random.default_rng(28)
        state = PredictorState(1, 8, rng, noise_scale=0.0)
        state.fc_w.value.data[...] = rng.normal(size=state.fc_w.shape) * 0.01
        batch = Tensor(rng.uniform(size=(4, 1, 8, 8)))
        s1 = predict_sigma(batch, state, rng)
        s2 = predict_sigma(batch, state, rng)
        np.testing.assert_array_equal(s1.matrices.data, s2.matrices.data)

    def test_noise_mean_clt_bound(self):
        rng = np.random.default_rng(29)
        state = PredictorState(1, 8, rng, noise_scale=0.1)
        batch = Tensor(np.zeros((10_000, 1, 8, 8)))
        sig = predict_sigma(batch, state, rng)
        ident = np.array([[1.0, 0, 0], [0, 1, 0]])
        dev = sig.matrices.data.mean(axis=0) - ident
        # mean of noise_scale*N(0,1) over 10^4 draws: 3 sigma = 3*0.1/100
        assert np.abs(dev).max() < 3.0 * 0.1 / 100.0

    def test_gradient_flows_to_weights(self):
        rng = np.random.default_rng(30)
        state = PredictorState(1, 8, rng, noise_scale=0.0)
        batch = Tensor(rng.uniform(size=(3, 1, 8, 8)))
        sig = predict_sigma(batch, state, rng)
        ad.backward(ad.sum_(ad.mul(sig.matrices, sig.matrices)))
        assert np.abs(state.fc_w.value.grad).max() > 0
        assert np.isfinite(state.fc_b.value.grad).all()
