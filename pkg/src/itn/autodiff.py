"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive records, per parent, a rule mapping the upstream gradient
to that parent's gradient. Rules are themselves written in terms of
primitives, so a backward pass run with ``create_graph=True`` yields
gradients that are further differentiable (used by the critic's gradient
penalty). With ``create_graph=False`` the same rules run with recording
switched off and only produce values.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DegenerateBatchError, DimensionError, NumericError

_recording = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _recording
        self._prev = _recording
        _recording = False
        return self

    def __exit__(self, *exc):
        global _recording
        _recording = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "parents", "rules", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        # leaves carry a zero accumulator from birth; interior nodes get one
        # lazily on the first backward that reaches them
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.parents = ()
        self.rules = ()
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _rank_err(self)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _rank_err(t):
    raise DimensionError(f"expected a scalar tensor, got shape {t.shape}")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, op, parents, rules):
    """Create an op output; records the node only while recording is on and
    some parent participates in differentiation."""
    out = Tensor(data)
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.rules = tuple(rules)
        out.op = op
    return out


# -- primitives -----------------------------------------------------------

def add(a, b):
    a, b = _broadcast_pair(_as_tensor(a), _as_tensor(b))
    return _make(a.data + b.data, "add", (a, b),
                 (lambda g: g, lambda g: g))


def sub(a, b):
    a, b = _broadcast_pair(_as_tensor(a), _as_tensor(b))
    return _make(a.data - b.data, "sub", (a, b),
                 (lambda g: g, lambda g: neg(g)))


def mul(a, b):
    a, b = _broadcast_pair(_as_tensor(a), _as_tensor(b))
    return _make(a.data * b.data, "mul", (a, b),
                 (lambda g: mul(g, b), lambda g: mul(g, a)))


def div(a, b):
    a, b = _broadcast_pair(_as_tensor(a), _as_tensor(b))
    return _make(a.data / b.data, "div", (a, b),
                 (lambda g: div(g, b),
                  lambda g: neg(div(mul(g, a), mul(b, b)))))


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, "neg", (a,), (lambda g: neg(g),))


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _make(a.data * c, "scale", (a,), (lambda g: scale(g, c),))


def exp(a):
    a = _as_tensor(a)
    out = _make(np.exp(a.data), "exp", (a,), ())
    if out.parents:
        out.rules = (lambda g: mul(g, out),)
    return out


def log(a):
    a = _as_tensor(a)
    return _make(np.log(a.data), "log", (a,), (lambda g: div(g, a),))


def sqrt(a):
    a = _as_tensor(a)
    out = _make(np.sqrt(a.data), "sqrt", (a,), ())
    if out.parents:
        out.rules = (lambda g: div(scale(g, 0.5), out),)
    return out


def pow_const(a, p):
    a = _as_tensor(a)
    p = float(p)
    return _make(a.data ** p, "pow", (a,),
                 (lambda g: mul(g, scale(pow_const(a, p - 1.0), p)),))


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    with np.errstate(over="ignore"):
        val = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = _make(val, "sigmoid", (a,), ())
    if out.parents:
        out.rules = (lambda g: mul(g, mul(out, sub(1.0, out))),)
    return out


def clip(a, lo, hi):
    """Clamp values; gradient passes through unchanged inside the range."""
    a = _as_tensor(a)
    mask = Tensor(((a.data >= lo) & (a.data <= hi)).astype(np.float64))
    return _make(np.clip(a.data, lo, hi), "clip", (a,),
                 (lambda g: mul(g, mask),))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape}")
    return _make(a.data @ b.data, "matmul", (a, b),
                 (lambda g: matmul(g, transpose(b)),
                  lambda g: matmul(transpose(a), g)))


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError("transpose expects a 2-d tensor")
    return _make(a.data.T.copy(), "transpose", (a,), (lambda g: transpose(g),))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape).copy(), "reshape", (a,),
                 (lambda g: reshape(g, old),))


def broadcast_to(a, shape):
    a = _as_tensor(a)
    shape = tuple(shape)
    padded = (1,) * (len(shape) - len(a.shape)) + tuple(a.shape)
    axes = tuple(i for i, (s, t) in enumerate(zip(padded, shape)) if s == 1 and t != 1)
    old = a.shape

    def rule(g):
        r = sum_(g, axis=axes, keepdims=True) if axes else g
        return reshape(r, old)

    return _make(np.broadcast_to(a.data, shape).copy(), "broadcast", (a,), (rule,))


def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    old = a.shape
    if axis is None:
        kept = (1,) * len(old)
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        ax = tuple(i % len(old) for i in ax)
        kept = tuple(1 if i in ax else s for i, s in enumerate(old))

    def rule(g):
        return broadcast_to(reshape(g, kept), old)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), "sum", (a,), (rule,))


def mean_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.shape[i % a.data.ndim] for i in ((axis,) if isinstance(axis, int) else axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def concat(tensors, axis=0):
    if axis != 0:
        raise DimensionError("concat is only supported along the batch axis")
    ts = [_as_tensor(t) for t in tensors]
    offs = np.cumsum([0] + [t.shape[0] for t in ts])
    rules = []
    for i in range(len(ts)):
        lo, hi = int(offs[i]), int(offs[i + 1])
        rules.append(lambda g, lo=lo, hi=hi: slice_batch(g, lo, hi))
    return _make(np.concatenate([t.data for t in ts], axis=0), "concat", ts, rules)


def slice_batch(a, start, stop):
    a = _as_tensor(a)
    n = a.shape[0]
    return _make(a.data[start:stop].copy(), "slice", (a,),
                 (lambda g: pad_batch(g, start, n),))


def pad_batch(a, start, total):
    a = _as_tensor(a)
    stop = start + a.shape[0]
    data = np.zeros((total,) + a.shape[1:])
    data[start:stop] = a.data
    return _make(data, "pad", (a,), (lambda g: slice_batch(g, start, stop),))


def select_rows(a, idx):
    """a[i, idx[i]] for each row i; gradient scatters back."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    k = a.shape[1]
    return _make(a.data[np.arange(a.shape[0]), idx], "select_rows", (a,),
                 (lambda g: scatter_rows(g, idx, k),))


def scatter_rows(v, idx, width):
    v = _as_tensor(v)
    idx = np.asarray(idx, dtype=np.int64)
    data = np.zeros((v.shape[0], width))
    data[np.arange(v.shape[0]), idx] = v.data
    return _make(data, "scatter_rows", (v,), (lambda g: select_rows(g, idx),))


def conv2d(x, k, stride=1):
    """Stride-s convolution with zero same-padding: H' = ceil(H/stride)."""
    x, k = _as_tensor(x), _as_tensor(k)
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise DimensionError("conv2d expects [N,C,H,W] input and [K,C,kh,kw] kernel")
    if x.shape[1] != k.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape[1]}, kernel {k.shape[1]}")
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    xs = x.shape
    return _make(kernels.conv2d_forward(x.data, k.data, stride), "conv2d", (x, k),
                 (lambda g: conv2d_input_grad(g, k, xs, stride),
                  lambda g: conv2d_kernel_grad(g, x, k.shape, stride)))


def conv2d_input_grad(dy, k, x_shape, stride):
    dy, k = _as_tensor(dy), _as_tensor(k)
    return _make(kernels.conv2d_input_grad(dy.data, k.data, x_shape, stride),
                 "conv2d_input_grad", (dy, k),
                 (lambda g: conv2d(g, k, stride),
                  lambda g: conv2d_kernel_grad(dy, g, k.shape, stride)))


def conv2d_kernel_grad(dy, x, k_shape, stride):
    dy, x = _as_tensor(dy), _as_tensor(x)
    xs = x.shape
    return _make(kernels.conv2d_kernel_grad(dy.data, x.data, k_shape, stride),
                 "conv2d_kernel_grad", (dy, x),
                 (lambda g: conv2d(x, g, stride),
                  lambda g: conv2d_input_grad(dy, g, xs, stride)))


def bilinear_sample(image, grid):
    """Sample image at normalized grid coordinates; zeros outside [-1,1]."""
    image, grid = _as_tensor(image), _as_tensor(grid)
    if image.data.ndim != 4 or grid.data.ndim != 4 or grid.shape[3] != 2:
        raise DimensionError("bilinear_sample expects [N,C,H,W] and [N,H',W',2]")

    def rule_img(g):
        with no_grad():
            dimg, _ = kernels.bilinear_input_grads(g.data, image.data, grid.data)
        return Tensor(dimg)

    def rule_grid(g):
        with no_grad():
            _, dgrid = kernels.bilinear_input_grads(g.data, image.data, grid.data)
        return Tensor(dgrid)

    return _make(kernels.bilinear_forward(image.data, grid.data),
                 "bilinear_sample", (image, grid), (rule_img, rule_grid))


# -- composites -----------------------------------------------------------

def swish(a):
    """x * sigmoid(x)."""
    a = _as_tensor(a)
    return mul(a, sigmoid(a))


def softplus(a):
    """log(1 + exp(x)), stabilized with a detached shift."""
    a = _as_tensor(a)
    m = Tensor(np.maximum(a.data, 0.0))
    return add(m, log(add(exp(neg(m)), exp(sub(a, m)))))


def log_softmax(a):
    """Row-wise log softmax for [N,K] logits."""
    a = _as_tensor(a)
    m = Tensor(a.data.max(axis=1, keepdims=True))
    z = sub(a, broadcast_to(m, a.shape))
    lse = log(sum_(exp(z), axis=1, keepdims=True))
    return sub(z, broadcast_to(lse, a.shape))


def fully_connected(x, weight, bias):
    """x @ weight + bias for [N,D] inputs."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"fully_connected shapes {x.shape} x {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError("bias must match the output width")
    y = matmul(x, weight)
    return add(y, broadcast_to(reshape(bias, (1, weight.shape[1])), y.shape))


class RunningStats:
    """Per-channel EMA of batch mean/variance for eval-mode batch norm."""

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = float(momentum)
        self.eps = float(eps)


def batch_norm(x, gamma, beta, mode, stats: RunningStats):
    """Per-channel normalization over (N,H,W); train mode uses batch stats
    and updates the running averages, eval mode uses the running stats."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 4:
        raise DimensionError("batch_norm expects [N,C,H,W]")
    c = x.shape[1]
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch_norm needs N >= 2 in train mode")
        mu = mean_(x, axis=(0, 2, 3), keepdims=True)
        xc = sub(x, broadcast_to(mu, x.shape))
        var = mean_(mul(xc, xc), axis=(0, 2, 3), keepdims=True)
        xhat = div(xc, broadcast_to(sqrt(add(var, stats.eps)), x.shape))
        m = stats.momentum
        stats.mean = m * stats.mean + (1 - m) * mu.data.reshape(c)
        stats.var = m * stats.var + (1 - m) * var.data.reshape(c)
    else:
        rm = Tensor(stats.mean.reshape(1, c, 1, 1))
        rv = Tensor(np.sqrt(stats.var + stats.eps).reshape(1, c, 1, 1))
        xhat = div(sub(x, broadcast_to(rm, x.shape)), broadcast_to(rv, x.shape))
    g = broadcast_to(reshape(gamma, (1, c, 1, 1)), x.shape)
    b = broadcast_to(reshape(beta, (1, c, 1, 1)), x.shape)
    return add(mul(xhat, g), b)


def _broadcast_pair(a, b):
    if a.shape == b.shape:
        return a, b
    target = np.broadcast_shapes(a.shape, b.shape)
    if a.shape != target:
        a = broadcast_to(a, target)
    if b.shape != target:
        b = broadcast_to(b, target)
    return a, b


# -- backward machinery ----------------------------------------------------

def build_tape(root):
    """Topologically ordered record of the operations below ``root``
    (parents come before the nodes that consume them)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _needed_set(tape, targets):
    """Ids of nodes whose value depends on some target."""
    target_ids = {id(t) for t in targets}
    needed = set()
    for node in tape:
        if id(node) in target_ids or any(id(p) in needed or id(p) in target_ids
                                         for p in node.parents):
            needed.add(id(node))
    return needed | target_ids


def _run_backward(root, targets, create_graph, write_grads):
    if root.data.size != 1:
        raise DimensionError(f"backward root must be a scalar, got shape {root.shape}")
    if not root.parents:
        raise DimensionError("backward root has no recorded operations")
    tape = build_tape(root)
    if targets is None:
        follow = None  # follow requires_grad
        collect = {}
    else:
        follow = _needed_set(tape, targets)
        collect = {id(t): None for t in targets}

    grads = {id(root): Tensor(np.ones_like(root.data))}
    ctx = no_grad() if not create_graph else _NullCtx()
    with ctx:
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if targets is not None and id(node) in collect:
                collect[id(node)] = g
            if write_grads and node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g.data
            for parent, rule in zip(node.parents, node.rules):
                if follow is None:
                    if not parent.requires_grad:
                        continue
                elif id(parent) not in follow:
                    continue
                pg = rule(g)
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    if targets is not None:
        return [collect[id(t)] if collect[id(t)] is not None
                else Tensor(np.zeros_like(t.data)) for t in targets]
    return None


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def backward(root):
    """Accumulate d(root)/d(t) into t.grad for every reachable tensor with
    requires_grad; accumulates across calls until grads are zeroed."""
    _run_backward(root, None, create_graph=False, write_grads=True)


def gradients(root, wrt, create_graph=False):
    """Return d(root)/d(t) for each t in wrt as tensors, without touching
    any .grad accumulator. With create_graph=True the results are
    differentiable further."""
    return _run_backward(root, list(wrt), create_graph, write_grads=False)


# -- parameters and Adam ----------------------------------------------------

class Parameter:
    """Trainable tensor plus its Adam moment estimates."""

    def __init__(self, value):
        self.value = Tensor(value, requires_grad=True)
        self.adam_m = Tensor(np.zeros_like(self.value.data))
        self.adam_v = Tensor(np.zeros_like(self.value.data))
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.value.zero_grad()


def adam_step(param: Parameter, lr=1e-4, beta1=0.0, beta2=0.9, eps=1e-8):
    """One Adam update with bias correction; leaves the parameter untouched
    when the gradient is non-finite."""
    g = param.value.grad
    if g is None or not np.isfinite(g).all():
        raise NumericError("adam_step requires a finite gradient")
    m = param.adam_m.data
    v = param.adam_v.data
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    param.step_count += 1
    t = param.step_count
    mhat = m / (1.0 - beta1 ** t) if beta1 > 0 else m
    vhat = v / (1.0 - beta2 ** t)
    param.value.data -= lr * mhat / (np.sqrt(vhat) + eps)
