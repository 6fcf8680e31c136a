"""Checkpoint save/restore on top of the binary container: parameters with
their Adam state, batch-norm buffers, the pseudo-negative pool, the score
tracker, the iteration counter, every rng stream position, and the resolved
run config."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from .container import load_container, restore_rng, rng_state, save_container
from .discriminator import BCnnConfig, DiscriminatorState
from .sampler import NegativePool, ThresholdTracker
from .spatial import PredictorState


def _all_params(disc, pred):
    names = dict(disc.named_parameters())
    names.update(pred.named_parameters())
    return names


def save_checkpoint(path, *, config_flat, iteration, disc, pred, pool,
                    tracker, streams):
    entries = {}
    step_counts = {}
    for name, p in _all_params(disc, pred).items():
        entries[f"param/{name}"] = p.value.data
        entries[f"adam_m/{name}"] = p.adam_m.data
        entries[f"adam_v/{name}"] = p.adam_v.data
        step_counts[name] = p.step_count
    for name, buf in disc.named_buffers().items():
        entries[f"buffer/{name}"] = buf
    if len(pool):
        entries["pool/images"] = pool.images
        entries["pool/class_tags"] = pool.class_tags
        entries["pool/iteration_tags"] = pool.iteration_tags
    entries["tracker/history"] = np.asarray(tracker.history, dtype=np.float64)
    cfg = disc.config
    meta = {
        "config": config_flat,
        "iteration": iteration,
        "step_counts": step_counts,
        "rng": {name: rng_state(g) for name, g in streams.items()},
        "bcnn": {"in_channels": cfg.in_channels, "image_size": list(cfg.image_size),
                 "num_classes": cfg.num_classes, "mode": cfg.mode,
                 "conv_channels": cfg.conv_channels, "num_layers": cfg.num_layers,
                 "fc_hidden": cfg.fc_hidden},
        "predictor": {"in_channels": pred.in_channels,
                      "image_size": pred.image_size, "channels": pred.channels,
                      "noise_scale": pred.noise_scale},
        "pool_cap": pool.cap,
    }
    save_container(path, entries, meta, kind="checkpoint")


def load_checkpoint(path) -> SimpleNamespace:
    _, meta, entries = load_container(path, expected_kind="checkpoint")
    rng0 = np.random.default_rng(0)  # placeholder init, overwritten below
    disc = DiscriminatorState(BCnnConfig(
        in_channels=meta["bcnn"]["in_channels"],
        image_size=tuple(meta["bcnn"]["image_size"]),
        num_classes=meta["bcnn"]["num_classes"], mode=meta["bcnn"]["mode"],
        conv_channels=meta["bcnn"]["conv_channels"],
        num_layers=meta["bcnn"]["num_layers"],
        fc_hidden=meta["bcnn"]["fc_hidden"]), rng0)
    pm = meta["predictor"]
    pred = PredictorState(pm["in_channels"], pm["image_size"], rng0,
                          channels=pm["channels"], noise_scale=pm["noise_scale"])
    for name, p in _all_params(disc, pred).items():
        p.value.data[...] = entries[f"param/{name}"]
        p.adam_m.data[...] = entries[f"adam_m/{name}"]
        p.adam_v.data[...] = entries[f"adam_v/{name}"]
        p.step_count = meta["step_counts"][name]
    for name, buf in disc.named_buffers().items():
        buf[...] = entries[f"buffer/{name}"]
    pool = NegativePool(cap=meta.get("pool_cap", 0))
    if "pool/images" in entries:
        pool.images = entries["pool/images"]
        pool.class_tags = entries["pool/class_tags"]
        pool.iteration_tags = entries["pool/iteration_tags"]
    tracker = ThresholdTracker()
    for v in entries["tracker/history"]:
        tracker.record(v)
    streams = {name: restore_rng(state) for name, state in meta["rng"].items()}
    return SimpleNamespace(config=meta["config"], iteration=meta["iteration"],
                           disc=disc, pred=pred, pool=pool, tracker=tracker,
                           streams=streams)
