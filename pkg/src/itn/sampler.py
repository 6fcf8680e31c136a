"""Pseudo-negative synthesis: annealed Langevin ascent on the classifier
score with a stop threshold drawn from the tracked distribution of positive
scores, plus the growing pool of synthesized negatives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, SamplerFault, TrackerError


@dataclass
class SamplerConfig:
    step_size: float = 0.05
    anneal_factor: float = 0.98
    noise_std: float = 0.01  # pixel units; annealed along with the step size
    max_steps: int = 200
    t_u: float = 1e-3
    pool_cap: int = 0  # 0 = unbounded

    def __post_init__(self):
        if not (0.0 < self.anneal_factor <= 1.0):
            raise ArgumentError("anneal_factor must be in (0, 1]")
        if self.max_steps < 1:
            raise ArgumentError("max_steps must be >= 1")
        if not (0.0 < self.t_u < 1.0):
            raise ArgumentError("t_u must be in (0, 1)")


class ThresholdTracker:
    """History D of per-iteration mean positive scores with its mean a and
    population standard deviation b, kept exactly in sync with D."""

    def __init__(self):
        self.history: list[float] = []
        self.a = 0.0
        self.b = 0.0

    def record(self, value: float):
        self.history.append(float(value))
        d = np.asarray(self.history)
        self.a = float(d.mean())
        self.b = float(d.std())  # population std: b = 0 for a single entry

    def __len__(self):
        return len(self.history)


def stop_threshold(tracker: ThresholdTracker, t_u: float, rng) -> float:
    """Draw s ~ N(a, b) and shift it by z(T_u) = ndtri(1 - T_u) standard
    deviations upward: small T_u demands chain scores at or above the
    positive-score distribution, large T_u stops chains earlier (lower
    quality samples)."""
    if len(tracker) == 0:
        raise TrackerError("stop threshold requires recorded positive scores")
    s = tracker.a + tracker.b * rng.standard_normal()
    return s + float(ndtri(1.0 - t_u)) * tracker.b


def init_reference(count, shape, rng) -> np.ndarray:
    """Reference draws: N(0.5, 0.3^2) per pixel, clipped to [0, 1]."""
    if count < 1:
        raise ArgumentError("count must be >= 1")
    return np.clip(rng.normal(0.5, 0.3, size=(count,) + tuple(shape)), 0.0, 1.0)


def _score_and_grad(x, score_fn):
    xt = Tensor(x, requires_grad=True)
    s = score_fn(xt)
    mean = float(s.data.mean())
    g = ad.gradients(ad.sum_(s), [xt])[0].data
    if not np.isfinite(g).all():
        raise SamplerFault("non-finite score gradient; chain discarded")
    return mean, g


def langevin_step(x, score_fn, step_size, noise_std, rng) -> np.ndarray:
    """x + step_size * grad(score) + noise_std * eta, clipped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    _, g = _score_and_grad(x, score_fn)
    out = x + step_size * g
    if noise_std != 0.0:
        out = out + noise_std * rng.standard_normal(size=x.shape)
    return np.clip(out, 0.0, 1.0)


@dataclass
class ChainResult:
    samples: np.ndarray
    steps_used: int
    mean_score: float
    hit_max_steps: bool = False


def run_chain(seed_images, score_fn, config: SamplerConfig,
              tracker: ThresholdTracker, rng) -> ChainResult:
    """Run annealed Langevin updates until the mean score clears a fresh
    stop-threshold draw or max_steps is reached (the latter is a success,
    flagged). Seeds are the previous iteration's samples, or reference draws
    at the start of training."""
    thr = stop_threshold(tracker, config.t_u, rng)
    x = np.asarray(seed_images, dtype=np.float64).copy()
    for k in range(config.max_steps):
        xt = Tensor(x, requires_grad=True)
        s = score_fn(xt)
        mean = float(s.data.mean())
        if mean >= thr:
            return ChainResult(x, k, mean)
        g = ad.gradients(ad.sum_(s), [xt])[0].data
        if not np.isfinite(g).all():
            raise SamplerFault("non-finite score gradient; chain discarded")
        x = x + config.step_size * config.anneal_factor ** k * g
        noise = config.noise_std * config.anneal_factor ** k
        if noise != 0.0:
            x = x + noise * rng.standard_normal(size=x.shape)
        x = np.clip(x, 0.0, 1.0)
    final = float(score_fn(Tensor(x)).data.mean())
    return ChainResult(x, config.max_steps, final, hit_max_steps=final < thr)


def record_positive_scores(tracker: ThresholdTracker, positives,
                           discriminator_state, labels=None):
    """Append E[f(x)] over the positives to the tracker history (true-class
    logits in multiclass mode); read-only on the discriminator."""
    from .discriminator import logit_score
    scores = logit_score(np.asarray(positives), discriminator_state,
                         classes=labels, mode="eval", frozen=True)
    tracker.record(float(scores.data.mean()))


@dataclass
class NegativePool:
    """Synthesized pseudo-negatives with their generating class and birth
    iteration; oldest entries are evicted beyond the cap."""

    cap: int = 0  # 0 = unbounded
    images: np.ndarray = field(default_factory=lambda: np.zeros((0,)))
    class_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    iteration_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.class_tags)

    def augment(self, samples, class_tag, iteration):
        samples = np.asarray(samples, dtype=np.float64)
        n = len(samples)
        tags = np.broadcast_to(np.asarray(class_tag, dtype=np.int64), (n,))
        if len(self) == 0:
            self.images = samples.copy()
            self.class_tags = tags.copy()
            self.iteration_tags = np.full(n, iteration, dtype=np.int64)
        else:
            self.images = np.concatenate([self.images, samples])
            self.class_tags = np.concatenate([self.class_tags, tags])
            self.iteration_tags = np.concatenate(
                [self.iteration_tags, np.full(n, iteration, dtype=np.int64)])
        if self.cap and len(self) > self.cap:
            self.images = self.images[-self.cap:]
            self.class_tags = self.class_tags[-self.cap:]
            self.iteration_tags = self.iteration_tags[-self.cap:]

    def sample(self, n, rng):
        if len(self) == 0:
            raise ArgumentError("cannot sample from an empty pool")
        idx = rng.choice(len(self), size=n, replace=len(self) < n)
        return self.images[idx], self.class_tags[idx]


def augment_pool(pool: NegativePool, samples, class_tag, iteration):
    pool.augment(samples, class_tag, iteration)
