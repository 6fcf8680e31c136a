"""Training orchestration: alternate exploration of worst-case
transformations, joint classifier+critic updates against the pseudo-negative
pool, positive-score tracking, Langevin synthesis of fresh pseudo-negatives,
and pool growth — with checkpointing, metrics, and the plain/augmented
baseline for matched-budget comparisons."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import discriminator as disc_mod
from .autodiff import Tensor, adam_step
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import DataBundle, standard_augment
from .discriminator import (BCnnConfig, DiscriminatorState, StepBatch,
                            combined_objective, classification_loss, forward,
                            logit_score)
from .errors import ItnError, ArgumentError
from .explorer import clip_sigma, explore
from .images import write_grid
from .sampler import (NegativePool, ThresholdTracker, init_reference,
                      record_positive_scores, run_chain)
from .spatial import PredictorState, predict_sigma, transform

METRICS_HEADER = "iteration,ce_loss,w_loss,gp,pos_score,neg_score,val_error,seconds"

STREAM_NAMES = ("disc_init", "pred_init", "batch", "epsilon", "explore",
                "chain", "reference", "augment")


class TrainAborted(ItnError):
    def __init__(self, iteration, checkpoint_path=None):
        super().__init__(f"training aborted at iteration {iteration}")
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)

    def add(self, iteration, ce, w, gp, pos, neg, val, seconds):
        row = dict(iteration=iteration, ce_loss=ce, w_loss=w, gp=gp,
                   pos_score=pos, neg_score=neg, val_error=val, seconds=seconds)
        for key, v in row.items():
            if not np.isfinite(v):
                raise ItnError(f"non-finite metric {key}={v} at iteration {iteration}")
        self.rows.append(row)

    def to_csv(self) -> str:
        lines = [METRICS_HEADER]
        for r in self.rows:
            lines.append(",".join([
                str(int(r["iteration"])),
                *(format(r[k], ".10g") for k in ("ce_loss", "w_loss", "gp",
                                                 "pos_score", "neg_score",
                                                 "val_error")),
                format(r["seconds"], ".3f")]))
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_csv())


def make_streams(seed):
    seqs = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(s) for name, s in zip(STREAM_NAMES, seqs)}


def build_states(tc: TrainConfig, image_shape, num_classes, streams):
    c, h, w = image_shape
    cfg = BCnnConfig(in_channels=c, image_size=(h, w), num_classes=num_classes,
                     mode=tc.mode, conv_channels=tc.conv_channels,
                     num_layers=tc.num_layers, fc_hidden=tc.fc_hidden)
    disc = DiscriminatorState(cfg, streams["disc_init"])
    pred = PredictorState(c, max(h, w), streams["pred_init"],
                          channels=tc.predictor_channels,
                          noise_scale=tc.explorer.noise_scale)
    return disc, pred


def evaluate(state: DiscriminatorState, dataset, eval_batch=256) -> float:
    """Fraction of misclassified samples, eval-mode batch norm, pure
    classifier path (no explorer or sampler involvement)."""
    wrong = 0
    n = len(dataset)
    for lo in range(0, n, eval_batch):
        chunk = dataset.images[lo:lo + eval_batch]
        labels = dataset.labels[lo:lo + eval_batch]
        logits, _, _ = forward(chunk, state, mode="eval", frozen=True)
        if state.config.mode == "binary":
            pred = (logits.data.reshape(-1) <= 0).astype(np.int64)  # 0 = positive
            wrong += int((pred != labels).sum())
        else:
            wrong += int((logits.data.argmax(axis=1) != labels).sum())
    return wrong / n


def _explorer_labels(labels, mode):
    if mode == "binary":
        return np.ones(len(labels), dtype=np.float64)
    return labels


def _predict_all_sigma(images, pred, tc, rng, chunk=256):
    mats = []
    with ad.no_grad():
        for lo in range(0, len(images), chunk):
            sig = predict_sigma(Tensor(images[lo:lo + chunk]), pred, rng,
                                noise_scale=tc.explorer.noise_scale)
            mats.append(clip_sigma(sig, tc.explorer.clip).matrices.data)
    return np.concatenate(mats, axis=0)


def _transform_all(images, mats, chunk=256):
    from .spatial import AffineParams
    out = []
    with ad.no_grad():
        for lo in range(0, len(images), chunk):
            out.append(transform(Tensor(images[lo:lo + chunk]),
                                 AffineParams(mats[lo:lo + chunk])).data)
    return np.concatenate(out, axis=0)


def _synth_classes(n, num_classes, iteration):
    """Round-robin class assignment; rotation spreads the remainder."""
    return (np.arange(n) + iteration) % num_classes


@dataclass
class TrainResult:
    disc: DiscriminatorState
    pred: PredictorState
    metrics: RunMetrics
    pool: NegativePool
    tracker: ThresholdTracker
    streams: dict
    iterations_run: int


def train(tc: TrainConfig, bundle: DataBundle, out_dir=None,
          config_flat=None) -> TrainResult:
    """Run the full introspective loop on the bundle's train split,
    validating on its val split. Deterministic given the config seed."""
    train_ds, val_ds = bundle.train, bundle.val
    n = len(train_ds)
    if n < tc.batch_size:
        raise ArgumentError(f"train split ({n}) smaller than batch_size")
    streams = make_streams(tc.seed)
    disc, pred = build_states(tc, train_ds.image_shape, train_ds.num_classes,
                              streams)
    tracker = ThresholdTracker()
    pool = NegativePool(cap=tc.sampler.pool_cap)
    metrics = RunMetrics()
    n_synth = tc.synth_per_iteration or n
    current_seeds = init_reference(n_synth, train_ds.image_shape,
                                   streams["reference"])
    seed_tags = _synth_classes(n_synth, train_ds.num_classes, 0)
    grid_rows = []
    best_val, stale, iterations_run = np.inf, 0, 0

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def checkpoint_path(name):
        return os.path.join(out_dir, name) if out_dir else None

    def write_checkpoint(name, iteration):
        if not out_dir:
            return None
        path = checkpoint_path(name)
        save_checkpoint(path, config_flat=config_flat or {}, iteration=iteration,
                        disc=disc, pred=pred, pool=pool, tracker=tracker,
                        streams=streams)
        return path

    for t in range(1, tc.outer_iterations + 1):
        tick = time.perf_counter()
        try:
            # (a) worst-case transformation search, then freeze sigma per sample
            idx = streams["batch"].choice(n, size=min(tc.batch_size, n),
                                          replace=False)
            explore(train_ds.images[idx],
                    _explorer_labels(train_ds.labels[idx], tc.mode),
                    pred, disc, tc.explorer, streams["explore"])
            sigma_all = _predict_all_sigma(train_ds.images, pred, tc,
                                           streams["explore"])
            transformed_all = _transform_all(train_ds.images, sigma_all)

            # (b) joint classifier + critic updates against the pool
            ce_sum = gap_sum = gp_sum = 0.0
            params = disc.parameters()
            for _ in range(tc.disc_steps):
                bidx = streams["batch"].choice(n, size=tc.batch_size,
                                               replace=n < tc.batch_size)
                if len(pool):
                    negs, ktags = pool.sample(tc.batch_size, streams["batch"])
                else:  # first iteration trains against the reference draws
                    ridx = streams["batch"].choice(n_synth, size=tc.batch_size,
                                                   replace=n_synth < tc.batch_size)
                    negs, ktags = current_seeds[ridx], seed_tags[ridx]
                sb = StepBatch(train_ds.images[bidx], train_ds.labels[bidx],
                               transformed_all[bidx], negs,
                               neg_classes=ktags if tc.mode == "multiclass" else None)
                for p in params:
                    p.zero_grad()
                parts = combined_objective(sb, disc, tc.lambda_gp,
                                           streams["epsilon"])
                ad.backward(parts.loss)
                for p in params:
                    adam_step(p, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2,
                              eps=tc.adam_eps)
                ce_sum += parts.ce
                gap_sum += parts.w_gap
                gp_sum += parts.penalty

            # (c) track the positive-score distribution
            record_positive_scores(
                tracker, train_ds.images, disc,
                labels=train_ds.labels if tc.mode == "multiclass" else None)

            # (d) synthesize pseudo-negatives from the previous samples
            seed_tags = _synth_classes(n_synth, train_ds.num_classes, t)
            new_samples = np.empty_like(current_seeds)
            neg_score_sum = 0.0
            if tc.mode == "multiclass":
                for k in range(train_ds.num_classes):
                    mask = seed_tags == k
                    if not mask.any():
                        continue
                    res = run_chain(
                        current_seeds[mask],
                        lambda x, k=k: logit_score(x, disc, classes=k),
                        tc.sampler, tracker, streams["chain"])
                    new_samples[mask] = res.samples
                    neg_score_sum += res.mean_score * mask.sum()
            else:
                res = run_chain(current_seeds,
                                lambda x: logit_score(x, disc),
                                tc.sampler, tracker, streams["chain"])
                new_samples = res.samples
                neg_score_sum = res.mean_score * n_synth

            # (e) grow the pool; chains restart from these samples next round
            pool.augment(new_samples, seed_tags, t)
            current_seeds = new_samples

            val_error = evaluate(disc, val_ds, tc.eval_batch)
            seconds = 0.0 if tc.timing == "fixed" else time.perf_counter() - tick
            metrics.add(t, ce_sum / tc.disc_steps, gap_sum / tc.disc_steps,
                        gp_sum / tc.disc_steps, tracker.history[-1],
                        neg_score_sum / n_synth, val_error, seconds)
        except ItnError:
            path = write_checkpoint("abort.ckpt", t)
            raise TrainAborted(t, path)
        grid_rows.append(new_samples[:tc.grid_samples].copy())
        iterations_run = t

        if val_error < best_val - 1e-12:
            best_val, stale = val_error, 0
        else:
            stale += 1
            if stale >= tc.patience:
                break

    if out_dir:
        metrics.write(os.path.join(out_dir, "metrics.csv"))
        write_checkpoint("final.ckpt", iterations_run)
        if grid_rows:
            write_grid(os.path.join(out_dir, "samples.pgm"),
                       np.concatenate(grid_rows, axis=0),
                       per_row=tc.grid_samples)
    return TrainResult(disc, pred, metrics, pool, tracker, streams,
                       iterations_run)


def train_baseline(tc: TrainConfig, bundle: DataBundle, augmentation="none",
                   out_dir=None) -> tuple[DiscriminatorState, RunMetrics]:
    """Plain cross-entropy training of the same trunk with a matched step
    budget (outer_iterations x disc_steps), optionally with the standard
    random-affine augmentation pipeline."""
    if augmentation not in ("none", "standard"):
        raise ArgumentError("augmentation must be none or standard")
    train_ds, val_ds = bundle.train, bundle.val
    n = len(train_ds)
    streams = make_streams(tc.seed)
    disc, _ = build_states(tc, train_ds.image_shape, train_ds.num_classes,
                           streams)
    metrics = RunMetrics()
    theta = disc.theta()
    best_val, stale = np.inf, 0
    for t in range(1, tc.outer_iterations + 1):
        tick = time.perf_counter()
        ce_sum = 0.0
        for _ in range(tc.disc_steps):
            bidx = streams["batch"].choice(n, size=tc.batch_size,
                                           replace=n < tc.batch_size)
            x = train_ds.images[bidx]
            if augmentation == "standard":
                x = standard_augment(x, tc.augment, streams["augment"])
            y = (np.ones(len(bidx), dtype=np.int64) if tc.mode == "binary"
                 else train_ds.labels[bidx])
            for p in theta:
                p.zero_grad()
            loss = classification_loss(x, y, disc)
            ad.backward(loss)
            for p in theta:
                adam_step(p, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2,
                          eps=tc.adam_eps)
            ce_sum += loss.item()
        val_error = evaluate(disc, val_ds, tc.eval_batch)
        seconds = 0.0 if tc.timing == "fixed" else time.perf_counter() - tick
        metrics.add(t, ce_sum / tc.disc_steps, 0.0, 0.0, 0.0, 0.0, val_error,
                    seconds)
        if val_error < best_val - 1e-12:
            best_val, stale = val_error, 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics.write(os.path.join(out_dir, "metrics.csv"))
    return disc, metrics
