"""Central finite-difference verification of every registered differentiable
operation, including the loss surfaces and the double-backward gradient
penalty path. Used by the gradcheck CLI command and the acceptance suite."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import discriminator as dm
from .autodiff import Tensor
from .explorer import ExplorerConfig, exploration_objective
from .spatial import AffineParams, PredictorState, affine_grid, predict_sigma, transform

OP_TOL = 1e-4
LOSS_TOL = 1e-3

REGISTRY = {}


def case(name, tol=OP_TOL):
    def deco(fn):
        REGISTRY[name] = (fn, tol)
        return fn
    return deco


def _t(rng, shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _fd_worst(build, tensors, h=1e-5, abs_floor=1e-7):
    for t in tensors:
        t.zero_grad()
    ad.backward(build())
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = build().item()
            flat[i] = old - h
            fm = build().item()
            flat[i] = old
            num = (fp - fm) / (2 * h)
            ana = t.grad.reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), abs_floor))
    return worst


@case("conv2d")
def _conv2d():
    rng = np.random.default_rng(1)
    x = _t(rng, (1, 2, 4, 4))
    k = _t(rng, (2, 2, 3, 3), 0.5)
    w = Tensor(rng.normal(size=(1, 2, 2, 2)))
    return lambda: ad.sum_(ad.mul(ad.conv2d(x, k, 2), w)), [x, k]


@case("batch_norm")
def _batch_norm():
    rng = np.random.default_rng(2)
    x = _t(rng, (4, 2, 3, 3))
    g = _t(rng, (2,))
    b = _t(rng, (2,))
    w = Tensor(rng.normal(size=(4, 2, 3, 3)))
    return (lambda: ad.sum_(ad.mul(ad.batch_norm(x, g, b, "train",
                                                 ad.RunningStats(2)), w)),
            [x, g, b])


@case("swish")
def _swish():
    x = Tensor(np.linspace(-3, 3, 13), requires_grad=True)
    return lambda: ad.sum_(ad.swish(x)), [x]


@case("fully_connected")
def _fc():
    rng = np.random.default_rng(3)
    x = _t(rng, (3, 4))
    w = _t(rng, (4, 2))
    b = _t(rng, (2,))
    m = Tensor(rng.normal(size=(3, 2)))
    return lambda: ad.sum_(ad.mul(ad.fully_connected(x, w, b), m)), [x, w, b]


@case("sigmoid")
def _sigmoid():
    x = Tensor(np.linspace(-4, 4, 9), requires_grad=True)
    return lambda: ad.sum_(ad.mul(ad.sigmoid(x), ad.sigmoid(x))), [x]


@case("exp")
def _exp():
    x = Tensor(np.linspace(-1, 1.5, 7), requires_grad=True)
    return lambda: ad.sum_(ad.exp(x)), [x]


@case("log")
def _log():
    x = Tensor(np.linspace(0.3, 2.5, 7), requires_grad=True)
    return lambda: ad.sum_(ad.mul(ad.log(x), ad.log(x))), [x]


@case("sqrt")
def _sqrt():
    x = Tensor(np.linspace(0.4, 3.0, 6), requires_grad=True)
    return lambda: ad.sum_(ad.sqrt(x)), [x]


@case("div")
def _div():
    rng = np.random.default_rng(4)
    a = _t(rng, (5,))
    b = Tensor(rng.uniform(0.5, 2.0, 5), requires_grad=True)
    return lambda: ad.sum_(ad.div(a, b)), [a, b]


@case("add_mul")
def _add_mul():
    rng = np.random.default_rng(5)
    a = _t(rng, (3, 3))
    b = _t(rng, (3, 3))
    return lambda: ad.sum_(ad.mul(ad.add(a, b), b)), [a, b]


@case("sum_mean")
def _sum_mean():
    rng = np.random.default_rng(6)
    x = _t(rng, (3, 4))
    return (lambda: ad.add(ad.sum_(ad.mul(ad.mean_(x, axis=1), ad.mean_(x, axis=1))),
                           ad.mean_(ad.mul(x, x))), [x])


@case("reshape_concat")
def _reshape_concat():
    rng = np.random.default_rng(7)
    a = _t(rng, (2, 3))
    b = _t(rng, (1, 3))
    w = Tensor(rng.normal(size=(3, 3)))
    return (lambda: ad.sum_(ad.mul(ad.reshape(ad.concat([a, b]), (3, 3)), w)),
            [a, b])


@case("softplus")
def _softplus():
    x = Tensor(np.linspace(-3, 3, 9), requires_grad=True)
    return lambda: ad.sum_(ad.softplus(x)), [x]


@case("log_softmax")
def _log_softmax():
    rng = np.random.default_rng(8)
    z = _t(rng, (3, 4))
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda: ad.sum_(ad.mul(ad.log_softmax(z), w)), [z]


@case("affine_grid")
def _affine_grid():
    rng = np.random.default_rng(9)
    mats = Tensor(rng.normal(size=(2, 2, 3)) * 0.3, requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3, 4, 2)))
    return lambda: ad.sum_(ad.mul(affine_grid(mats, 3, 4), w)), [mats]


@case("bilinear_sample", tol=1e-3)
def _bilinear():
    rng = np.random.default_rng(10)
    img = _t(rng, (2, 2, 5, 5))
    px = rng.integers(0, 4, size=(2, 3, 3)) + 0.257  # stay off the kinks
    py = rng.integers(0, 4, size=(2, 3, 3)) + 0.257
    grid = Tensor(np.stack([px / 2 - 1, py / 2 - 1], axis=-1), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 2, 3, 3)))
    return lambda: ad.sum_(ad.mul(ad.bilinear_sample(img, grid), w)), [img, grid]


@case("transform", tol=1e-3)
def _transform():
    rng = np.random.default_rng(11)
    img = _t(rng, (2, 1, 6, 6))
    mats = Tensor(np.tile(np.array([[0.93, -0.21, 0.0514],
                                    [0.21, 0.93, -0.0514]]), (2, 1, 1)),
                  requires_grad=True)
    w = Tensor(rng.normal(size=(2, 1, 6, 6)))
    return (lambda: ad.sum_(ad.mul(transform(img, AffineParams(mats)), w)),
            [img, mats])


@case("binary_prob")
def _binary_prob():
    rng = np.random.default_rng(12)
    f = _t(rng, (5, 1))
    return lambda: ad.sum_(ad.mul(dm.binary_prob(f, 1), dm.binary_prob(f, 1))), [f]


@case("multiclass_prob")
def _multiclass_prob():
    rng = np.random.default_rng(13)
    z = _t(rng, (3, 4))
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda: ad.sum_(ad.mul(dm.multiclass_prob(z), w)), [z]


def _tiny_state(seed, mode="binary", num_classes=2):
    cfg = dm.BCnnConfig(in_channels=1, image_size=(3, 3), num_classes=num_classes,
                        mode=mode, conv_channels=2, num_layers=1, fc_hidden=3)
    return dm.DiscriminatorState(cfg, np.random.default_rng(seed))


@case("classification_loss_binary", tol=LOSS_TOL)
def _cls_binary():
    rng = np.random.default_rng(14)
    state = _tiny_state(14)
    x = rng.uniform(size=(4, 1, 3, 3))
    labels = np.array([1, -1, 1, -1])
    params = [p.value for p in state.theta()]
    return lambda: dm.classification_loss(x, labels, state), params


@case("classification_loss_multiclass", tol=LOSS_TOL)
def _cls_multiclass():
    rng = np.random.default_rng(15)
    state = _tiny_state(15, "multiclass", 3)
    x = rng.uniform(size=(4, 1, 3, 3))
    labels = np.array([0, 2, -1, 1])
    params = [p.value for p in state.theta()]
    return (lambda: dm.classification_loss(x, labels, state, neg_classes=[1]),
            params)


@case("wasserstein_loss_gp", tol=LOSS_TOL)
def _wloss():
    rng = np.random.default_rng(16)
    state = _tiny_state(16)
    xt = rng.uniform(size=(2, 1, 3, 3))
    xn = rng.uniform(size=(2, 1, 3, 3))
    eps = rng.uniform(size=2)
    params = [p.value for p in state.parameters()]
    return (lambda: dm.wasserstein_loss(xt, xn, state, 10.0, rng, eps=eps).loss,
            params)


@case("combined_objective", tol=LOSS_TOL)
def _combined():
    rng = np.random.default_rng(17)
    state = _tiny_state(17)
    batch = dm.StepBatch(rng.uniform(size=(2, 1, 3, 3)), np.array([1, 1]),
                         rng.uniform(size=(2, 1, 3, 3)),
                         rng.uniform(size=(2, 1, 3, 3)))
    eps = rng.uniform(size=2)
    params = [p.value for p in state.parameters()]
    return (lambda: dm.combined_objective(batch, state, 10.0, rng, eps=eps).loss,
            params)


@case("exploration_objective", tol=LOSS_TOL)
def _explore_obj():
    rng = np.random.default_rng(18)
    state = _tiny_state(18)
    pred = PredictorState(1, 3, np.random.default_rng(19), channels=2,
                          noise_scale=0.0)
    pred.fc_w.value.data[...] = rng.normal(size=pred.fc_w.shape) * 0.02
    x = rng.uniform(size=(3, 1, 3, 3))
    labels = np.ones(3)
    cfg = ExplorerConfig(noise_scale=0.0)
    params = [p.value for p in pred.parameters()]
    return (lambda: exploration_objective(x, labels, pred, state, cfg, rng),
            params)


@case("predict_sigma")
def _predict_sigma():
    rng = np.random.default_rng(20)
    pred = PredictorState(1, 4, np.random.default_rng(20), channels=2,
                          noise_scale=0.0)
    pred.fc_w.value.data[...] = rng.normal(size=pred.fc_w.shape) * 0.05
    x = rng.uniform(size=(2, 1, 4, 4))
    w = Tensor(rng.normal(size=(2, 2, 3)))
    params = [p.value for p in pred.parameters()]
    return (lambda: ad.sum_(ad.mul(predict_sigma(Tensor(x), pred, rng).matrices, w)),
            params)


def run_gradcheck(names=None):
    """Run every registered case; returns [(name, worst_rel_err, tol, ok)]."""
    results = []
    for name, (builder, tol) in REGISTRY.items():
        if names and name not in names:
            continue
        build, tensors = builder()
        worst = _fd_worst(build, tensors)
        results.append((name, worst, tol, bool(worst < tol)))
    return results
