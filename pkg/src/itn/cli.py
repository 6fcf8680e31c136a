"""Command-line surface: train, eval, sample, gradcheck, reproduce.

Exit codes: 0 success, 1 runtime fault, 2 usage/config error. ITN_OUT is
the default --out directory; every command is reproducible from the echoed
config plus its seed."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import config as cfg_mod
from .checkpoint import load_checkpoint
from .data import AugmentRanges, DataBundle, dataset_from_spec, split_dataset
from .errors import ArgumentError, ConfigError, ItnError
from .images import write_grid
from .sampler import init_reference, run_chain
from .trainer import evaluate, train

USAGE = """usage: itn <command> [options]

commands:
  train      train the introspective classifier (writes metrics/checkpoints)
  eval       print the error rate of a checkpoint on a dataset spec
  sample     synthesize pseudo-negatives from a checkpoint into an image grid
  gradcheck  finite-difference verification of every differentiable op
  reproduce  run a comparison protocol (limited_data | cross_dataset | threshold_sweep)
"""


def _resolve_config(config_path, override_args):
    pairs = []
    if config_path:
        pairs.extend(cfg_mod.parse_file(config_path))
    pairs.extend(cfg_mod.parse_overrides(override_args))
    return cfg_mod.resolve(pairs)


def _out_dir(explicit):
    out = explicit or os.environ.get("ITN_OUT")
    if not out:
        raise ConfigError("no output directory: pass --out or set ITN_OUT")
    return out


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.cfg"), "w") as f:
        f.write(cfg_mod.resolved_text(cfg))


def cmd_train(args):
    ap = argparse.ArgumentParser(prog="itn train", add_help=True)
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default=None)
    known, overrides = ap.parse_known_args(args)
    cfg = _resolve_config(known.config, overrides)
    out_dir = _out_dir(known.out)
    _echo_config(cfg, out_dir)
    train_full = dataset_from_spec(cfg["data.train"], default_seed=cfg["seed"])
    tr, va = split_dataset(train_full, cfg["val_fraction"], cfg["seed"])
    bundle = DataBundle(tr, va)
    tc = cfg_mod.to_train_config(cfg)
    result = train(tc, bundle, out_dir=out_dir, config_flat=cfg)
    print(f"trained {result.iterations_run} iterations; "
          f"final val_error {result.metrics.rows[-1]['val_error']:.6f}")
    return 0


def _dataset_for_eval(ckpt_cfg, spec):
    if spec.startswith("perturbed:") or spec == "perturbed":
        if not ckpt_cfg.get("data.test"):
            raise ConfigError("checkpoint config has no data.test to perturb")
        base = dataset_from_spec(ckpt_cfg["data.test"],
                                 default_seed=ckpt_cfg["seed"])
        ranges = AugmentRanges(ckpt_cfg["augment.rotation_deg"],
                               ckpt_cfg["augment.translate"],
                               ckpt_cfg["augment.scale"],
                               ckpt_cfg["augment.shear"])
        return dataset_from_spec(spec, default_seed=ckpt_cfg["seed"],
                                 base=base, ranges=ranges,
                                 pad_to=ckpt_cfg["data.pad_to"])
    return dataset_from_spec(spec, default_seed=ckpt_cfg["seed"])


def cmd_eval(args):
    ap = argparse.ArgumentParser(prog="itn eval")
    ap.add_argument("checkpoint")
    ap.add_argument("dataset_spec")
    ap.add_argument("--batch", type=int, default=256)
    ns = ap.parse_args(args)
    if not os.path.exists(ns.checkpoint):
        raise ConfigError(f"checkpoint not found: {ns.checkpoint}")
    ckpt = load_checkpoint(ns.checkpoint)
    dataset = _dataset_for_eval(ckpt.config, ns.dataset_spec)
    print(f"{evaluate(ckpt.disc, dataset, ns.batch):.6f}")
    return 0


def cmd_sample(args):
    ap = argparse.ArgumentParser(prog="itn sample")
    ap.add_argument("checkpoint")
    ap.add_argument("--count", type=int, default=16)
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ns = ap.parse_args(args)
    if not os.path.exists(ns.checkpoint):
        raise ConfigError(f"checkpoint not found: {ns.checkpoint}")
    out_path = ns.out or os.path.join(_out_dir(None), "samples.pgm")
    ckpt = load_checkpoint(ns.checkpoint)
    tc = cfg_mod.to_train_config(ckpt.config)
    rng = np.random.default_rng(ns.seed)
    shape = ckpt.disc.config.in_channels, *ckpt.disc.config.image_size
    if len(ckpt.pool):
        seeds = ckpt.pool.images[-ns.count:]
        tags = ckpt.pool.class_tags[-ns.count:]
    else:
        seeds = init_reference(ns.count, shape, rng)
        tags = np.zeros(ns.count, dtype=np.int64)
    from .discriminator import logit_score
    samples = np.empty_like(seeds)
    if tc.mode == "multiclass":
        for k in np.unique(tags):
            mask = tags == k
            res = run_chain(seeds[mask],
                            lambda x, k=int(k): logit_score(x, ckpt.disc, classes=k),
                            tc.sampler, ckpt.tracker, rng)
            samples[mask] = res.samples
    else:
        res = run_chain(seeds, lambda x: logit_score(x, ckpt.disc),
                        tc.sampler, ckpt.tracker, rng)
        samples = res.samples
    shape_px = write_grid(out_path, samples)
    print(f"wrote {out_path} ({shape_px[1]}x{shape_px[0]} px, {len(samples)} samples)")
    return 0


def cmd_gradcheck(args):
    ap = argparse.ArgumentParser(prog="itn gradcheck")
    ap.add_argument("--op", action="append", default=None,
                    help="restrict to specific op names")
    ns = ap.parse_args(args)
    from .gradcheck import run_gradcheck
    results = run_gradcheck(ns.op)
    failed = []
    for name, worst, tol, ok in results:
        print(f"{name:32s} worst_rel {worst:.3e}  tol {tol:.0e}  "
              f"{'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_reproduce(args):
    ap = argparse.ArgumentParser(prog="itn reproduce")
    ap.add_argument("protocol",
                    choices=("limited_data", "cross_dataset", "threshold_sweep"))
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--fraction", type=float, default=None)
    ap.add_argument("--crop", type=int, default=0)
    ap.add_argument("--pad-to", type=int, default=None)
    ap.add_argument("--thresholds", default="1e-3,1e-1")
    known, overrides = ap.parse_known_args(args)
    cfg = _resolve_config(known.config, overrides)
    out_dir = _out_dir(known.out)
    _echo_config(cfg, out_dir)
    seeds = [int(s) for s in known.seeds.split(",") if s]
    from . import protocols
    if known.protocol == "limited_data":
        path, _, verdicts = protocols.limited_data(
            cfg, out_dir, seeds, fraction=known.fraction or 0.01,
            crop=known.crop)
    elif known.protocol == "cross_dataset":
        path, _, verdicts = protocols.cross_dataset(
            cfg, out_dir, seeds, fraction=known.fraction or 0.05,
            pad_to=known.pad_to)
    else:
        thresholds = tuple(float(t) for t in known.thresholds.split(","))
        path, _, verdicts = protocols.threshold_sweep(
            cfg, out_dir, seeds, fraction=known.fraction or 0.01,
            crop=known.crop, thresholds=thresholds)
    print(f"wrote {path}")
    for v in verdicts:
        print(v)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sample": cmd_sample,
            "gradcheck": cmd_gradcheck, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0
    command = argv[0]
    if command not in COMMANDS:
        print(f"unknown command: {command}\n{USAGE}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[command](argv[1:])
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ItnError as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
