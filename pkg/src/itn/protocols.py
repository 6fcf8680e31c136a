"""Reproduction protocols: matched-budget comparisons between the
introspective trainer and the plain / augmented baselines under limited
training data, cross-dataset evaluation on a frozen perturbed canvas, and a
stop-threshold sweep. Each writes a (method, seed, error) CSV and prints
ORDER verdict lines."""

from __future__ import annotations

import copy
import csv
import os
from dataclasses import replace

import numpy as np

from .config import to_train_config
from .data import (AugmentRanges, DataBundle, LabeledDataset, center_crop,
                   dataset_from_spec, embed_on_canvas, make_perturbed_testset,
                   split_dataset, subsample)
from .errors import ArgumentError
from .trainer import evaluate, train, train_baseline

PERTURB_SEED = 20_250_101  # frozen test-set transform draw


def _load_base(cfg):
    train_ds = dataset_from_spec(cfg["data.train"], default_seed=cfg["seed"])
    if not cfg["data.test"]:
        raise ArgumentError("protocols need data.test")
    test_ds = dataset_from_spec(cfg["data.test"], default_seed=cfg["seed"])
    return train_ds, test_ds


def _bundle(train_ds, seed, val_fraction):
    tr, va = split_dataset(train_ds, val_fraction, seed)
    return DataBundle(tr, va)


def _embed(ds, pad_to):
    return replace(ds, images=embed_on_canvas(ds.images, pad_to),
                   labels=ds.labels)


def _write_rows(out_dir, rows):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "comparison.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "seed", "error"])
        for method, seed, err in rows:
            w.writerow([method, seed, f"{err:.6f}"])
    return path


def _mean(rows, method):
    vals = [err for m, _, err in rows if m == method]
    return float(np.mean(vals))


def _seed_cfg(cfg, seed):
    c = copy.deepcopy(cfg)
    c["seed"] = seed
    return c


def limited_data(cfg, out_dir, seeds, fraction=0.01, crop=0):
    """Class-balanced fraction of the training set, full test set; the
    introspective run against the plain baseline with matched step budgets.
    """
    train_full, test_ds = _load_base(cfg)
    if crop:
        train_full = center_crop(train_full, crop)
        test_ds = center_crop(test_ds, crop)
    rows = []
    for seed in seeds:
        c = _seed_cfg(cfg, seed)
        small = subsample(train_full, fraction, seed=seed)
        bundle = DataBundle(*split_dataset(small, c["val_fraction"], seed))
        tc = to_train_config(c)
        res = train(tc, bundle)
        rows.append(("itn", seed, evaluate(res.disc, test_ds, tc.eval_batch)))
        base, _ = train_baseline(tc, bundle, augmentation="none")
        rows.append(("baseline", seed, evaluate(base, test_ds, tc.eval_batch)))
    path = _write_rows(out_dir, rows)
    ok = _mean(rows, "itn") < _mean(rows, "baseline")
    verdicts = [f"ORDER itn<baseline: {str(ok).lower()}"]
    return path, rows, verdicts


def cross_dataset(cfg, out_dir, seeds, fraction=0.05, pad_to=None):
    """Train on a fraction of the source set embedded on the enlarged
    canvas; evaluate on the frozen affine-perturbed canvas test set.
    Compares the introspective run against the plain baseline and the
    baseline with matched-range standard augmentation."""
    pad_to = pad_to or cfg["data.pad_to"]
    ranges = AugmentRanges(cfg["augment.rotation_deg"], cfg["augment.translate"],
                           cfg["augment.scale"], cfg["augment.shear"])
    train_full, test_ds = _load_base(cfg)
    perturbed = make_perturbed_testset(test_ds, ranges, pad_to,
                                       seed=PERTURB_SEED)
    rows = []
    for seed in seeds:
        c = _seed_cfg(cfg, seed)
        small = _embed(subsample(train_full, fraction, seed=seed), pad_to)
        bundle = DataBundle(*split_dataset(small, c["val_fraction"], seed))
        tc = to_train_config(c)
        res = train(tc, bundle)
        rows.append(("itn", seed, evaluate(res.disc, perturbed, tc.eval_batch)))
        plain, _ = train_baseline(tc, bundle, augmentation="none")
        rows.append(("baseline", seed, evaluate(plain, perturbed, tc.eval_batch)))
        aug, _ = train_baseline(tc, bundle, augmentation="standard")
        rows.append(("baseline_aug", seed, evaluate(aug, perturbed, tc.eval_batch)))
    path = _write_rows(out_dir, rows)
    itn_mean = _mean(rows, "itn")
    verdicts = [
        f"ORDER itn<baseline: {str(itn_mean < _mean(rows, 'baseline')).lower()}",
        f"ORDER itn<baseline_aug: {str(itn_mean < _mean(rows, 'baseline_aug')).lower()}",
    ]
    return path, rows, verdicts


def threshold_sweep(cfg, out_dir, seeds, fraction=0.01, crop=0,
                    thresholds=(1e-3, 1e-1)):
    """Limited-data introspective runs across stop-threshold settings; the
    loose threshold should not beat the strict default."""
    train_full, test_ds = _load_base(cfg)
    if crop:
        train_full = center_crop(train_full, crop)
        test_ds = center_crop(test_ds, crop)
    rows = []
    for seed in seeds:
        small = subsample(train_full, fraction, seed=seed)
        for t_u in thresholds:
            c = _seed_cfg(cfg, seed)
            c["sampler.t_u"] = float(t_u)
            bundle = DataBundle(*split_dataset(small, c["val_fraction"], seed))
            tc = to_train_config(c)
            res = train(tc, bundle)
            rows.append((f"itn@t_u={t_u:g}", seed,
                         evaluate(res.disc, test_ds, tc.eval_batch)))
    path = _write_rows(out_dir, rows)
    strict = _mean(rows, f"itn@t_u={min(thresholds):g}")
    loose = _mean(rows, f"itn@t_u={max(thresholds):g}")
    verdicts = [f"ORDER itn@t_u={min(thresholds):g}<=itn@t_u={max(thresholds):g}: "
                f"{str(strict <= loose).lower()}"]
    return path, rows, verdicts


PROTOCOLS = {"limited_data": limited_data, "cross_dataset": cross_dataset,
             "threshold_sweep": threshold_sweep}
