import numpy as np
import pytest

import itn.autodiff as ad
from itn.autodiff import Parameter, Tensor
from itn.errors import DegenerateBatchError, DimensionError, NumericError

from conftest import conv2d_loop_oracle, fd_worst_rel_err, matmul_loop_oracle


class TestConv2d:
    def test_identity_kernel(self, kernel_backend):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        k = np.zeros((1, 1, 5, 5))
        k[0, 0, 2, 2] = 1.0
        out = ad.conv2d(Tensor(x), Tensor(k), 1)
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input(self, kernel_backend):
        rng = np.random.default_rng(1)
        out = ad.conv2d(Tensor(np.zeros((2, 3, 4, 4))),
                        Tensor(rng.normal(size=(5, 3, 5, 5))), 2)
        assert np.all(out.data == 0.0)

    def test_matches_loop_oracle(self, kernel_backend):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 2, 6, 6))
        k = rng.normal(size=(3, 2, 5, 5))
        out = ad.conv2d(Tensor(x), Tensor(k), 2)
        expect = conv2d_loop_oracle(x, k, 2)
        assert np.abs(out.data - expect).max() < 1e-12

    @pytest.mark.parametrize("shape,stride", [((4, 4, 8, 8), 1), ((4, 4, 8, 8), 2),
                                              ((2, 3, 7, 5), 2), ((3, 1, 6, 6), 3)])
    def test_oracle_sweep(self, kernel_backend, shape, stride):
        rng = np.random.default_rng(hash((shape, stride)) % 2**31)
        x = rng.normal(size=shape)
        k = rng.normal(size=(3, shape[1], 5, 5))
        out = ad.conv2d(Tensor(x), Tensor(k), stride)
        assert np.abs(out.data - conv2d_loop_oracle(x, k, stride)).max() < 1e-12

    def test_output_shape_is_ceil(self, kernel_backend):
        out = ad.conv2d(Tensor(np.zeros((1, 1, 7, 5))), Tensor(np.zeros((1, 1, 5, 5))), 2)
        assert out.shape == (1, 1, 4, 3)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 5, 5))), 1)

    def test_gradients_match_fd(self, kernel_backend):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5, requires_grad=True)
        w = Tensor(rng.normal(size=(2, 3, 3, 3)))

        def build():
            return ad.sum_(ad.mul(ad.conv2d(x, k, 2), w))

        assert fd_worst_rel_err(build, [x, k]) < 1e-4


class TestBatchNorm:
    def test_already_normalized_passthrough(self):
        # exactly zero-mean unit-variance (+-1 pattern); the eps=1e-5 in the
        # denominator bounds the deviation by |x| * eps / 2 = 5e-6
        x = np.tile(np.array([1.0, -1.0]), 8 * 3 * 4 * 2).reshape(8, 3, 4, 4)
        stats = ad.RunningStats(3, eps=1e-5)
        out = ad.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                            "train", stats)
        assert np.abs(out.data - x).max() < 1e-5

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(5)
        beta = np.array([1.0, -2.0])
        out = ad.batch_norm(Tensor(rng.normal(size=(4, 2, 3, 3))),
                            Tensor(np.zeros(2)), Tensor(beta), "train",
                            ad.RunningStats(2))
        expect = np.broadcast_to(beta.reshape(1, 2, 1, 1), (4, 2, 3, 3))
        np.testing.assert_array_equal(out.data, expect)

    def test_normalizes_batch_statistics(self):
        rng = np.random.default_rng(6)
        # output variance is var/(var+eps); keep var >~ 10 so the deviation
        # eps/(var+eps) stays under the 1e-6 bound
        x = rng.normal(loc=3.0, scale=4.0, size=(16, 4, 5, 5))
        out = ad.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)),
                            "train", ad.RunningStats(4))
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-10
        assert np.abs(var - 1.0).max() < 1e-6

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatchError):
            ad.batch_norm(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.ones(2)),
                          Tensor(np.zeros(2)), "train", ad.RunningStats(2))

    def test_eval_uses_running_stats(self):
        stats = ad.RunningStats(1, eps=0.0)
        stats.mean = np.array([2.0])
        stats.var = np.array([4.0])
        x = np.full((2, 1, 1, 1), 6.0)
        out = ad.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                            "eval", stats)
        np.testing.assert_allclose(out.data, 2.0)

    def test_gradients_match_fd(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 2, 3, 3)), requires_grad=True)
        gamma = Tensor(rng.normal(size=2), requires_grad=True)
        beta = Tensor(rng.normal(size=2), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 2, 3, 3)))

        def build():
            out = ad.batch_norm(x, gamma, beta, "train", ad.RunningStats(2))
            return ad.sum_(ad.mul(out, w))

        assert fd_worst_rel_err(build, [x, gamma, beta]) < 1e-4


class TestSwish:
    def test_zero(self):
        x = Tensor(np.array(0.0), requires_grad=True)
        y = ad.swish(x)
        assert y.item() == 0.0
        ad.backward(ad.sum_(y))
        assert abs(x.grad - 0.5) < 1e-12

    def test_large_positive_asymptote(self):
        assert abs(ad.swish(Tensor(np.array(20.0))).item() - 20.0) < 1e-6

    def test_hand_value_at_one(self):
        # 1 * sigmoid(1) = 1 / (1 + e^-1)
        assert abs(ad.swish(Tensor(np.array(1.0))).item() - 0.7310585786300049) < 1e-12

    def test_gradient_matches_fd(self):
        x = Tensor(np.linspace(-3, 3, 11), requires_grad=True)

        def build():
            return ad.sum_(ad.swish(x))

        assert fd_worst_rel_err(build, [x]) < 1e-4


class TestFullyConnected:
    def test_identity_weight(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 4))
        out = ad.fully_connected(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input_gives_bias(self):
        bias = np.array([1.0, 2.0, 3.0])
        out = ad.fully_connected(Tensor(np.zeros((2, 5))), Tensor(np.zeros((5, 3))),
                                 Tensor(bias))
        np.testing.assert_array_equal(out.data, np.broadcast_to(bias, (2, 3)))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(3, 4))
        out = ad.fully_connected(Tensor(a), Tensor(b), Tensor(np.zeros(4)))
        assert np.abs(out.data - matmul_loop_oracle(a, b)).max() < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            ad.fully_connected(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))),
                               Tensor(np.zeros(2)))

    def test_gradients_match_fd(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        m = Tensor(rng.normal(size=(3, 2)))

        def build():
            return ad.sum_(ad.mul(ad.fully_connected(x, w, b), m))

        assert fd_worst_rel_err(build, [x, w, b]) < 1e-4


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ad.backward(ad.sum_(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_unrelated_root_leaves_zeros(self):
        x = Tensor(np.ones(4), requires_grad=True)
        z = Tensor(np.ones(3), requires_grad=True)
        ad.backward(ad.sum_(z))
        np.testing.assert_array_equal(x.grad, np.zeros(4))

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            ad.backward(ad.mul(x, x))

    def test_root_without_tape_rejected(self):
        with pytest.raises(DimensionError):
            ad.backward(Tensor(np.array(1.0), requires_grad=True))

    def test_accumulates_across_calls(self):
        x = Tensor(np.ones(3), requires_grad=True)
        root = ad.sum_(x)
        ad.backward(root)
        ad.backward(root)
        np.testing.assert_array_equal(x.grad, 2 * np.ones(3))

    def test_same_tape_twice_identical(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        root = ad.sum_(ad.swish(ad.mul(x, x)))
        ad.backward(root)
        first = x.grad.copy()
        x.zero_grad()
        ad.backward(root)
        np.testing.assert_array_equal(x.grad, first)

    def test_composed_graph_matches_fd(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 3)), requires_grad=True)

        def build():
            h = ad.sigmoid(ad.matmul(x, w))
            return ad.sum_(ad.mul(h, ad.exp(ad.scale(h, 0.3))))

        assert fd_worst_rel_err(build, [x, w]) < 1e-4


class TestAdam:
    def test_zero_grad_leaves_value(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.value.grad[...] = 0.0
        ad.adam_step(p, lr=0.1, beta1=0.0, beta2=0.9, eps=1e-8)
        np.testing.assert_array_equal(p.value.data, [1.0, -2.0])
        assert p.step_count == 1

    def test_constant_grad_asymptotic_sign_step(self):
        p = Parameter(np.zeros(2))
        g = np.array([0.37, -1.4])
        lr = 1e-3
        prev = p.value.data.copy()
        for _ in range(200):
            p.value.grad[...] = g
            prev = p.value.data.copy()
            ad.adam_step(p, lr=lr, beta1=0.0, beta2=0.9, eps=1e-8)
        step = p.value.data - prev
        np.testing.assert_allclose(step, -lr * np.sign(g), rtol=1e-6)

    def test_one_step_hand_unroll(self):
        # beta1=0: m=g, v=0.1 g^2, vhat=g^2 -> update = -lr*g/(|g|+eps)
        p = Parameter(np.array([2.0]))
        g = np.array([0.5])
        p.value.grad[...] = g
        lr, eps = 0.01, 1e-8
        ad.adam_step(p, lr=lr, beta1=0.0, beta2=0.9, eps=eps)
        expect = 2.0 - lr * 0.5 / (0.5 + eps)
        np.testing.assert_allclose(p.value.data, [expect], rtol=1e-15)
        np.testing.assert_allclose(p.adam_m.data, [0.5])
        np.testing.assert_allclose(p.adam_v.data, [0.025])

    def test_nonfinite_grad_rejected(self):
        p = Parameter(np.array([1.0]))
        p.value.grad[...] = np.nan
        with pytest.raises(NumericError):
            ad.adam_step(p)
        np.testing.assert_array_equal(p.value.data, [1.0])
        assert p.step_count == 0


class TestElementwiseOps:
    """Identity / zero / finite-difference triples for the remaining ops."""

    def test_sigmoid(self):
        assert ad.sigmoid(Tensor(np.array(0.0))).item() == 0.5
        assert abs(ad.sigmoid(Tensor(np.array(np.log(3.0)))).item() - 0.75) < 1e-12
        x = Tensor(np.linspace(-4, 4, 9), requires_grad=True)
        assert fd_worst_rel_err(lambda: ad.sum_(ad.sigmoid(x)), [x]) < 1e-4

    def test_exp_log(self):
        assert ad.exp(Tensor(np.array(0.0))).item() == 1.0
        assert ad.log(Tensor(np.array(1.0))).item() == 0.0
        x = Tensor(np.array([0.5, 1.5, 2.5]), requires_grad=True)
        assert fd_worst_rel_err(lambda: ad.sum_(ad.log(ad.exp(x))), [x]) < 1e-4

    def test_mean_sum(self):
        x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        assert ad.mean_(x).item() == 5.5
        assert ad.sum_(x).item() == 66.0
        np.testing.assert_array_equal(ad.sum_(x, axis=0).data, [12.0, 15, 18, 21])
        assert fd_worst_rel_err(lambda: ad.sum_(ad.mul(ad.mean_(x, axis=1), ad.mean_(x, axis=1))), [x]) < 1e-4

    def test_add_mul(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
        np.testing.assert_array_equal(ad.add(a, b).data, [4.0, 6.0])
        np.testing.assert_array_equal(ad.mul(a, b).data, [3.0, 8.0])
        np.testing.assert_array_equal(ad.add(a, ad.neg(a)).data, [0.0, 0.0])
        assert fd_worst_rel_err(lambda: ad.sum_(ad.mul(ad.add(a, b), b)), [a, b]) < 1e-4

    def test_broadcast_add(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        out = ad.add(a, b)
        assert out.shape == (2, 3)
        ad.backward(ad.sum_(out))
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_reshape(self):
        x = Tensor(np.arange(6.0), requires_grad=True)
        y = ad.reshape(x, (2, 3))
        assert y.shape == (2, 3)
        np.testing.assert_array_equal(y.data.reshape(-1), x.data)
        assert fd_worst_rel_err(lambda: ad.sum_(ad.mul(ad.reshape(x, (2, 3)), ad.reshape(x, (2, 3)))), [x]) < 1e-4

    def test_concat_batch(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(2 * np.ones((1, 3)), requires_grad=True)
        out = ad.concat([a, b])
        assert out.shape == (3, 3)
        w = Tensor(np.arange(9.0).reshape(3, 3))
        ad.backward(ad.sum_(ad.mul(out, w)))
        np.testing.assert_array_equal(a.grad, w.data[:2])
        np.testing.assert_array_equal(b.grad, w.data[2:])

    def test_division_and_sqrt_fd(self):
        x = Tensor(np.array([0.7, 1.3, 2.9]), requires_grad=True)
        y = Tensor(np.array([1.1, 0.4, 3.0]), requires_grad=True)

        def build():
            return ad.sum_(ad.div(ad.sqrt(x), y))

        assert fd_worst_rel_err(build, [x, y]) < 1e-4

    def test_softplus_stable_and_fd(self):
        big = ad.softplus(Tensor(np.array([800.0]))).data[0]
        assert abs(big - 800.0) < 1e-9
        small = ad.softplus(Tensor(np.array([-800.0]))).data[0]
        assert small == 0.0 or small < 1e-300
        assert abs(ad.softplus(Tensor(np.array(0.0))).item() - np.log(2.0)) < 1e-15
        x = Tensor(np.array([-2.0, 0.3, 4.0]), requires_grad=True)
        assert fd_worst_rel_err(lambda: ad.sum_(ad.softplus(x)), [x]) < 1e-4


class TestRandomComposedGraphs:
    """Three random compositions of the primitive set vs finite differences."""

    @pytest.mark.parametrize("seed", [100, 200, 300])
    def test_fd(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 2, 4, 4)), requires_grad=True)
        k = Tensor(rng.normal(size=(2, 2, 3, 3)) * 0.4, requires_grad=True)
        w = Tensor(rng.normal(size=(8, 3)) * 0.5, requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)

        def build():
            h = ad.swish(ad.conv2d(x, k, 2))
            flat = ad.reshape(h, (2, 8))
            z = ad.fully_connected(flat, w, b)
            p = ad.log_softmax(z)
            return ad.add(ad.sum_(ad.mul(p, p)), ad.mean_(ad.sigmoid(z)))

        assert fd_worst_rel_err(build, [x, k, w, b]) < 1e-4


class TestTapeProperties:
    def test_topological_order_and_unique_visits(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = ad.mul(x, x)
        z = ad.add(y, y)
        root = ad.sum_(z)
        tape = ad.build_tape(root)
        pos = {id(t): i for i, t in enumerate(tape)}
        assert len(pos) == len(tape)  # visited once
        for node in tape:
            for p in node.parents:
                assert pos[id(p)] < pos[id(node)]

    def test_grad_finite_after_backward(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        ad.backward(ad.sum_(ad.swish(ad.matmul(x, x))))
        assert np.isfinite(x.grad).all()
