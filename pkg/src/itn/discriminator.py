"""The shared-trunk CNN classifier: four stride-2 conv blocks (batch norm +
swish) feeding two fully connected layers, with a scalar critic head on the
penultimate features, plus the classification / critic losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RunningStats, Tensor
from .errors import ArgumentError, DimensionError, LabelError

GP_NORM_EPS = 1e-24  # inside the gradient-norm sqrt; keeps d|g|/dg finite at 0


@dataclass
class BCnnConfig:
    in_channels: int
    image_size: int | tuple[int, int]
    num_classes: int = 2
    mode: str = "binary"
    conv_channels: int = 64
    num_layers: int = 4
    fc_hidden: int = 128

    def __post_init__(self):
        if isinstance(self.image_size, int):
            self.image_size = (self.image_size, self.image_size)
        else:
            self.image_size = tuple(self.image_size)
        if self.mode not in ("binary", "multiclass"):
            raise ArgumentError(f"mode must be binary or multiclass, got {self.mode!r}")
        if self.mode == "multiclass" and self.num_classes < 2:
            raise ArgumentError("multiclass needs num_classes >= 2")

    @property
    def logit_dim(self):
        return 1 if self.mode == "binary" else self.num_classes


def _he(rng, shape):
    fan_in = int(np.prod(shape[1:])) if len(shape) > 2 else shape[0]
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


@dataclass
class Dense:
    w: Parameter
    b: Parameter

    def __call__(self, x, frozen=False):
        w = self.w.value.detach() if frozen else self.w.value
        b = self.b.value.detach() if frozen else self.b.value
        return ad.fully_connected(x, w, b)


class DiscriminatorState:
    """Conv trunk + logit head (theta) and the critic head (omega)."""

    def __init__(self, config: BCnnConfig, rng):
        self.config = config
        c = config.conv_channels
        self.convs: list[Parameter] = []
        self.bn_gamma: list[Parameter] = []
        self.bn_beta: list[Parameter] = []
        self.bn_stats: list[RunningStats] = []
        ch = config.in_channels
        h, w = config.image_size
        for _ in range(config.num_layers):
            self.convs.append(Parameter(_he(rng, (c, ch, 5, 5))))
            self.bn_gamma.append(Parameter(np.ones(c)))
            self.bn_beta.append(Parameter(np.zeros(c)))
            self.bn_stats.append(RunningStats(c))
            ch = c
            h, w = -(-h // 2), -(-w // 2)
        self.feat_dim = ch * h * w
        hid = config.fc_hidden
        self.fc1 = Dense(Parameter(_he(rng, (self.feat_dim, hid))),
                         Parameter(np.zeros(hid)))
        self.logits = Dense(Parameter(rng.normal(0, 0.05, (hid, config.logit_dim))),
                            Parameter(np.zeros(config.logit_dim)))
        self.critic = Dense(Parameter(rng.normal(0, 0.05, (hid, 1))),
                            Parameter(np.zeros(1)))

    def theta(self):
        ps = []
        for i in range(self.config.num_layers):
            ps += [self.convs[i], self.bn_gamma[i], self.bn_beta[i]]
        ps += [self.fc1.w, self.fc1.b, self.logits.w, self.logits.b]
        return ps

    def omega(self):
        return [self.critic.w, self.critic.b]

    def parameters(self):
        return self.theta() + self.omega()

    def named_parameters(self):
        out = {}
        for i in range(self.config.num_layers):
            out[f"disc.conv{i}"] = self.convs[i]
            out[f"disc.bn{i}.gamma"] = self.bn_gamma[i]
            out[f"disc.bn{i}.beta"] = self.bn_beta[i]
        out.update({"disc.fc1.w": self.fc1.w, "disc.fc1.b": self.fc1.b,
                    "disc.logits.w": self.logits.w, "disc.logits.b": self.logits.b,
                    "disc.critic.w": self.critic.w, "disc.critic.b": self.critic.b})
        return out

    def named_buffers(self):
        out = {}
        for i, st in enumerate(self.bn_stats):
            out[f"disc.bn{i}.running_mean"] = st.mean
            out[f"disc.bn{i}.running_var"] = st.var
        return out

    def checksum(self):
        """Order-stable digest of all parameter values (mutation checks)."""
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.named_parameters()):
            h.update(self.named_parameters()[name].value.data.tobytes())
        return h.hexdigest()


def forward(batch, state: DiscriminatorState, mode="train", frozen=False):
    """Run the trunk and both heads.

    Returns (logits, critic, features). ``frozen`` detaches the weights so a
    backward pass only reaches the batch (used by the sampler/explorer).
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    cfg = state.config
    if x.shape[1] != cfg.in_channels or x.shape[2:] != cfg.image_size:
        raise DimensionError(
            f"batch {x.shape} does not match configured input "
            f"{cfg.in_channels}x{cfg.image_size}")
    h = x
    for i in range(cfg.num_layers):
        k = state.convs[i].value.detach() if frozen else state.convs[i].value
        g = state.bn_gamma[i].value.detach() if frozen else state.bn_gamma[i].value
        b = state.bn_beta[i].value.detach() if frozen else state.bn_beta[i].value
        h = ad.conv2d(h, k, 2)
        h = ad.batch_norm(h, g, b, mode, state.bn_stats[i])
        h = ad.swish(h)
    flat = ad.reshape(h, (x.shape[0], state.feat_dim))
    feat = ad.swish(state.fc1(flat, frozen))
    return state.logits(feat, frozen), state.critic(feat, frozen), feat


def binary_prob(f, y):
    """q(y|x) = 1 / (1 + exp(-y f)) for y in {+1,-1}."""
    f = f if isinstance(f, Tensor) else Tensor(f)
    y_arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y_arr, (-1.0, 1.0))):
        raise LabelError("binary labels must be +-1")
    return ad.sigmoid(ad.mul(f, Tensor(np.broadcast_to(y_arr, f.shape).copy())))


def multiclass_prob(logits):
    """Row-wise softmax."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError("multiclass_prob expects [N,K] logits with K >= 2")
    return ad.exp(ad.log_softmax(logits))


def logit_score(batch, state, classes=None, mode="eval", frozen=True):
    """Per-sample classifier score f used by the sampler and the tracker:
    the lone logit in binary mode, or the logit of the given class."""
    logits, _, _ = forward(batch, state, mode=mode, frozen=frozen)
    if state.config.mode == "binary":
        return ad.reshape(logits, (logits.shape[0],))
    if classes is None:
        raise ArgumentError("multiclass score needs target classes")
    idx = np.broadcast_to(np.asarray(classes, dtype=np.int64), (logits.shape[0],))
    return ad.select_rows(logits, idx)


def classification_loss(batch, labels, state, mode="train", neg_classes=None):
    """Mean negative log-likelihood of Eq. (4)/(13); pseudo-negatives carry
    label -1, and in multiclass mode are charged log(1+exp(1+f_k)) against
    the class k they were synthesized for."""
    labels = np.asarray(labels, dtype=np.int64)
    logits, _, _ = forward(batch, state, mode=mode)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise LabelError(f"labels must be shape ({n},)")
    if state.config.mode == "binary":
        if not np.all(np.isin(labels, (-1, 1))):
            raise LabelError("binary labels must be +-1")
        f = ad.reshape(logits, (n,))
        y = Tensor(labels.astype(np.float64))
        return ad.mean_(ad.softplus(ad.neg(ad.mul(y, f))))
    k = state.config.num_classes
    pos_mask = labels >= 0
    if np.any((labels >= k) | (labels < -1)):
        raise LabelError(f"labels must be in [0,{k}) or -1")
    if (~pos_mask).any() and neg_classes is None:
        raise LabelError("pseudo-negative rows need their generating class")
    terms = []
    if pos_mask.any():
        safe = np.where(pos_mask, labels, 0)
        ce = ad.neg(ad.select_rows(ad.log_softmax(logits), safe))
        m = Tensor(pos_mask.astype(np.float64))
        terms.append(ad.scale(ad.sum_(ad.mul(ce, m)), 1.0 / pos_mask.sum()))
    if (~pos_mask).any():
        kcls = np.broadcast_to(np.asarray(neg_classes, dtype=np.int64),
                               ((~pos_mask).sum(),))
        if np.any((kcls < 0) | (kcls >= k)):
            raise LabelError("generating classes out of range")
        safe = np.zeros(n, dtype=np.int64)
        safe[~pos_mask] = kcls
        fk = ad.select_rows(logits, safe)
        pen = ad.softplus(ad.add(fk, 1.0))
        m = Tensor((~pos_mask).astype(np.float64))
        terms.append(ad.scale(ad.sum_(ad.mul(pen, m)), 1.0 / (~pos_mask).sum()))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


class WassersteinParts(NamedTuple):
    loss: Tensor
    gap: float
    penalty: float


def gradient_penalty(critic_fn: Callable, transformed_pos, pseudo_neg, rng,
                     eps=None):
    """Mean of (|grad_xhat critic| - 1)^2 over interpolants xhat pairing the
    two batches by index (pair count = min size), epsilon ~ U(0,1) per pair.

    The inner gradient is taken with create_graph=True, so the result is
    differentiable with respect to anything the critic depends on.
    """
    xt = transformed_pos if isinstance(transformed_pos, Tensor) else Tensor(transformed_pos)
    xn = pseudo_neg if isinstance(pseudo_neg, Tensor) else Tensor(pseudo_neg)
    if xt.shape[0] == 0 or xn.shape[0] == 0:
        raise ArgumentError("gradient penalty needs nonempty batches")
    pairs = min(xt.shape[0], xn.shape[0])
    if eps is None:
        eps = rng.uniform(size=pairs)
    eps = np.asarray(eps, dtype=np.float64).reshape(pairs, 1, 1, 1)
    full = (pairs,) + xt.shape[1:]
    xhat = ad.add(ad.mul(ad.broadcast_to(Tensor(eps), full),
                         ad.slice_batch(xt, 0, pairs)),
                  ad.mul(ad.broadcast_to(Tensor(1.0 - eps), full),
                         ad.slice_batch(xn, 0, pairs)))
    if not xhat.requires_grad:
        # plain interpolant of constants: make it the differentiation leaf
        xhat = Tensor(xhat.data, requires_grad=True)
    g = ad.gradients(ad.sum_(critic_fn(xhat)), [xhat], create_graph=True)[0]
    sq = ad.sum_(ad.mul(g, g), axis=tuple(range(1, len(xhat.shape))))
    norm = ad.sqrt(ad.add(sq, GP_NORM_EPS))
    return ad.mean_(ad.mul(ad.sub(norm, 1.0), ad.sub(norm, 1.0)))


def wasserstein_terms(critic_fn: Callable, transformed_pos, pseudo_neg,
                      lambda_gp, rng, eps=None) -> WassersteinParts:
    """Difference of critic means plus the scaled gradient penalty."""
    xt = transformed_pos if isinstance(transformed_pos, Tensor) else Tensor(transformed_pos)
    xn = pseudo_neg if isinstance(pseudo_neg, Tensor) else Tensor(pseudo_neg)
    if xt.shape[0] == 0 or xn.shape[0] == 0:
        raise ArgumentError("wasserstein loss needs nonempty batches")
    gap = ad.sub(ad.mean_(critic_fn(xt)), ad.mean_(critic_fn(xn)))
    pen = gradient_penalty(critic_fn, xt, xn, rng, eps=eps)
    loss = ad.add(gap, ad.scale(pen, lambda_gp))
    return WassersteinParts(loss, gap.item(), pen.item())


def wasserstein_loss(transformed_pos, pseudo_neg, state, lambda_gp, rng,
                     mode="train", eps=None) -> WassersteinParts:
    """Eq. (5): critic means over transformed positives vs pseudo-negatives
    with the interpolant gradient penalty, through the shared trunk."""

    def critic_fn(x):
        _, w, _ = forward(x, state, mode=mode)
        return w

    return wasserstein_terms(critic_fn, transformed_pos, pseudo_neg,
                             lambda_gp, rng, eps=eps)


@dataclass
class StepBatch:
    """One discriminator step: positives, their transformed copies, and
    pseudo-negatives (with generating classes in multiclass mode)."""
    positives: np.ndarray
    labels: np.ndarray
    transformed: np.ndarray
    negatives: np.ndarray
    neg_classes: np.ndarray | None = None


class CombinedParts(NamedTuple):
    loss: Tensor
    ce: float
    w_gap: float
    penalty: float


def combined_objective(batches: StepBatch, state, lambda_gp, rng,
                       mode="train", eps=None) -> CombinedParts:
    """Eq. (6): classification loss over positives + transformed positives +
    pseudo-negatives, plus the critic objective, as one scalar."""
    cfg = state.config
    pos = np.asarray(batches.positives)
    xt = np.asarray(batches.transformed)
    neg = np.asarray(batches.negatives)
    union = np.concatenate([pos, xt, neg], axis=0)
    if cfg.mode == "binary":
        labels = np.concatenate([np.ones(len(pos) + len(xt), dtype=np.int64),
                                 -np.ones(len(neg), dtype=np.int64)])
        neg_classes = None
    else:
        y = np.asarray(batches.labels, dtype=np.int64)
        labels = np.concatenate([y, y, -np.ones(len(neg), dtype=np.int64)])
        neg_classes = batches.neg_classes
    ce = classification_loss(union, labels, state, mode=mode,
                             neg_classes=neg_classes)
    wparts = wasserstein_loss(xt, neg, state, lambda_gp, rng, mode=mode, eps=eps)
    return CombinedParts(ad.add(ce, wparts.loss), ce.item(), wparts.gap,
                         wparts.penalty)
