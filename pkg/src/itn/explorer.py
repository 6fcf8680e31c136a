"""Worst-case transformation search: gradient ascent on the predictor
weights so the transformed positives become hard for the current classifier.
The classifier itself is read-only here (weights detached, eval-mode batch
norm), so exploring never mutates discriminator state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import discriminator as disc
from .autodiff import Tensor
from .errors import ArgumentError, ExplorerFault
from .spatial import IDENTITY_AFFINE, AffineParams, predict_sigma, transform


@dataclass
class ExplorerConfig:
    steps_per_iteration: int = 3
    lr: float = 1e-3
    noise_scale: float = 0.05
    use_full_objective: bool = False
    clip: float = 1.5  # per-entry bound on |sigma - identity|
    lambda_gp: float = 10.0
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps_per_iteration < 1:
            raise ArgumentError("steps_per_iteration must be >= 1")
        if self.clip <= 0:
            raise ArgumentError("clip must be positive")


def clip_sigma(params: AffineParams, bound: float) -> AffineParams:
    """Clamp each matrix entry to identity +- bound (pass-through gradient
    inside the box). The unconstrained maximization is degenerate: collapsing
    every image to one pixel maximizes the loss trivially."""
    mats = params.matrices
    ident = Tensor(np.broadcast_to(IDENTITY_AFFINE, mats.shape).copy())
    dev = ad.clip(ad.sub(mats, ident), -bound, bound)
    return AffineParams(ad.add(dev, ident))


def exploration_objective(positives, labels, predictor_state, discriminator_state,
                          config: ExplorerConfig, rng, negatives=None):
    """Classification loss on the transformed positives as a function of the
    predictor weights (discriminator weights held constant). With
    use_full_objective the critic mean and gradient penalty terms are added.
    """
    x = positives if isinstance(positives, Tensor) else Tensor(np.asarray(positives))
    sigma = clip_sigma(predict_sigma(x, predictor_state, rng,
                                     noise_scale=config.noise_scale), config.clip)
    xt = transform(x, sigma)
    logits, _, _ = disc.forward(xt, discriminator_state, mode="eval", frozen=True)
    n = logits.shape[0]
    if discriminator_state.config.mode == "binary":
        y = Tensor(np.broadcast_to(np.asarray(labels, dtype=np.float64), (n,)).copy())
        obj = ad.mean_(ad.softplus(ad.neg(ad.mul(y, ad.reshape(logits, (n,))))))
    else:
        idx = np.asarray(labels, dtype=np.int64)
        obj = ad.neg(ad.mean_(ad.select_rows(ad.log_softmax(logits), idx)))
    if config.use_full_objective:
        if negatives is None:
            raise ArgumentError("full exploration objective needs pseudo-negatives")

        def critic_fn(z):
            _, w, _ = disc.forward(z, discriminator_state, mode="eval", frozen=True)
            return w

        obj = ad.add(obj, ad.mean_(critic_fn(xt)))
        pen = disc.gradient_penalty(critic_fn, xt, Tensor(np.asarray(negatives)), rng)
        obj = ad.add(obj, ad.scale(pen, config.lambda_gp))
    return obj


def explore(positives, labels, predictor_state, discriminator_state,
            config: ExplorerConfig, rng, negatives=None) -> AffineParams:
    """Run the configured number of ascent steps on the predictor weights,
    then return the (clipped, detached) transformation parameters for the
    batch. Restores the predictor and signals a recoverable fault if the
    objective goes non-finite."""
    params = predictor_state.parameters()
    snapshot = [(p.value.data.copy(), p.adam_m.data.copy(),
                 p.adam_v.data.copy(), p.step_count) for p in params]
    try:
        for _ in range(config.steps_per_iteration):
            for p in params:
                p.zero_grad()
            obj = exploration_objective(positives, labels, predictor_state,
                                        discriminator_state, config, rng,
                                        negatives=negatives)
            if not np.isfinite(obj.data).all():
                raise ExplorerFault("exploration objective is non-finite")
            if config.lr == 0.0:
                continue
            ad.backward(ad.neg(obj))  # ascent = Adam on the negated objective
            for p in params:
                ad.adam_step(p, lr=config.lr, beta1=config.beta1,
                             beta2=config.beta2, eps=config.eps)
    except Exception:
        for p, (v, m, vv, t) in zip(params, snapshot):
            p.value.data[...] = v
            p.adam_m.data[...] = m
            p.adam_v.data[...] = vv
            p.step_count = t
        raise
    x = positives if isinstance(positives, Tensor) else Tensor(np.asarray(positives))
    sigma = clip_sigma(predict_sigma(x, predictor_state, rng,
                                     noise_scale=config.noise_scale), config.clip)
    return AffineParams(sigma.matrices.detach())
