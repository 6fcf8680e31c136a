"""Datasets and synthetic generators: IDX loading, class-balanced
subsampling, the standard-augmentation pipeline, the affine-perturbed test
set, 2-d Gaussian toys, and the exact discrete update oracle used by the
KL-decrease tests."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor
from .errors import (ArgumentError, ConfigError, DataFormatError,
                     LabelError, SupportError)
from .spatial import AffineParams, transform

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    images: np.ndarray  # [N,C,H,W] float64 in [0,1]
    labels: np.ndarray  # int64 in [0, num_classes)
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    def validate(self):
        if self.images.ndim != 4:
            raise DataFormatError("images must be [N,C,H,W]")
        if len(self.images) != len(self.labels):
            raise DataFormatError(
                f"{len(self.images)} images vs {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataFormatError("pixel values must lie in [0,1]")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise LabelError("labels out of range")

    def __len__(self):
        return len(self.labels)

    def take(self, idx, split=None):
        return replace(self, images=self.images[idx], labels=self.labels[idx],
                       split=split or self.split)

    @property
    def image_shape(self):
        return self.images.shape[1:]


def _read_be32(buf, off):
    if off + 4 > len(buf):
        raise DataFormatError("truncated IDX header")
    return struct.unpack_from(">I", buf, off)[0]


def _read_maybe_gz(path):
    import gzip
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def load_idx(images_path, labels_path, num_classes=10, split="train") -> LabeledDataset:
    """Parse the IDX pair: big-endian magic 0x803 (images: count, rows,
    cols as u32, then u8 pixels) and 0x801 (labels: count, then u8).
    Accepts .gz files transparently."""
    raw = _read_maybe_gz(images_path)
    magic = _read_be32(raw, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"bad image magic 0x{magic:08x}")
    n, h, w = (_read_be32(raw, 4), _read_be32(raw, 8), _read_be32(raw, 12))
    if len(raw) - 16 < n * h * w:
        raise DataFormatError("truncated IDX image payload")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=16)
    raw_l = _read_maybe_gz(labels_path)
    magic_l = _read_be32(raw_l, 0)
    if magic_l != IDX_LABELS_MAGIC:
        raise DataFormatError(f"bad label magic 0x{magic_l:08x}")
    n_l = _read_be32(raw_l, 4)
    if len(raw_l) - 8 < n_l:
        raise DataFormatError("truncated IDX label payload")
    if n_l != n:
        raise DataFormatError(f"image count {n} != label count {n_l}")
    labels = np.frombuffer(raw_l, dtype=np.uint8, count=n_l, offset=8)
    images = (pixels.astype(np.float64) / 255.0).reshape(n, 1, h, w)
    return LabeledDataset(images, labels.astype(np.int64), num_classes, split)


def subsample(dataset: LabeledDataset, fraction, seed) -> LabeledDataset:
    """Class-balanced random subset: round(fraction * N / K) samples drawn
    uniformly per class, deterministic per seed."""
    k = dataset.num_classes
    per_class = int(round(fraction * len(dataset) / k))
    if per_class < 1:
        raise ArgumentError(f"fraction {fraction} leaves no samples per class")
    rng = np.random.default_rng(seed)
    picks = []
    for c in range(k):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < per_class:
            raise ArgumentError(f"class {c} has only {len(idx)} samples")
        picks.append(rng.choice(idx, size=per_class, replace=False))
    order = rng.permutation(np.concatenate(picks))
    return dataset.take(order)


@dataclass
class AugmentRanges:
    """Affine draw ranges shared by the augmentation pipeline and the
    perturbed test-set generator (so comparisons are range-matched).
    translate is a fraction of the canvas per axis."""
    rotation_deg: float = 20.0
    translate: float = 0.2
    scale: float = 0.2
    shear: float = 0.2

    def all_zero(self):
        return (self.rotation_deg == 0 and self.translate == 0
                and self.scale == 0 and self.shear == 0)


def random_affine(ranges: AugmentRanges, n, rng) -> np.ndarray:
    """Compose rotation * shear * scale plus translation, one 2x3 matrix per
    sample, each factor drawn uniformly from its range."""
    theta = np.deg2rad(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg, n))
    sc = rng.uniform(1.0 - ranges.scale, 1.0 + ranges.scale, n)
    sh = rng.uniform(-ranges.shear, ranges.shear, n)
    # translation range is a canvas fraction; normalized coords span 2 units
    tx = 2.0 * rng.uniform(-ranges.translate, ranges.translate, n)
    ty = 2.0 * rng.uniform(-ranges.translate, ranges.translate, n)
    mats = np.zeros((n, 2, 3))
    cos, sin = np.cos(theta), np.sin(theta)
    # R @ Shear @ Scale with shear on the x axis
    mats[:, 0, 0] = sc * cos
    mats[:, 0, 1] = sc * (cos * sh - sin)
    mats[:, 1, 0] = sc * sin
    mats[:, 1, 1] = sc * (sin * sh + cos)
    mats[:, 0, 2] = tx
    mats[:, 1, 2] = ty
    return mats


def standard_augment(batch, ranges: AugmentRanges, rng) -> np.ndarray:
    """One random affine per sample through the spatial transformer
    (non-learned parameters). All-zero ranges return the batch unchanged."""
    batch = np.asarray(batch, dtype=np.float64)
    if ranges.all_zero():
        return batch.copy()
    mats = random_affine(ranges, len(batch), rng)
    return transform(Tensor(batch), AffineParams(mats)).data


def center_crop(dataset: LabeledDataset, size) -> LabeledDataset:
    """Crop every image to the central size x size window."""
    h, w = dataset.images.shape[2], dataset.images.shape[3]
    if size > min(h, w):
        raise ArgumentError(f"crop {size} exceeds image size {h}x{w}")
    top, left = (h - size) // 2, (w - size) // 2
    return replace(dataset,
                   images=dataset.images[:, :, top:top + size, left:left + size],
                   labels=dataset.labels)


def embed_on_canvas(images, pad_to) -> np.ndarray:
    n, c, h, w = images.shape
    if pad_to < max(h, w):
        raise ArgumentError("pad_to must be >= the source size")
    out = np.zeros((n, c, pad_to, pad_to))
    top, left = (pad_to - h) // 2, (pad_to - w) // 2
    out[:, :, top:top + h, left:left + w] = images
    return out


def make_perturbed_testset(dataset: LabeledDataset, ranges: AugmentRanges,
                           pad_to, seed) -> LabeledDataset:
    """Each image gets one frozen random affine on an enlarged canvas;
    deterministic per seed, labels pass through."""
    rng = np.random.default_rng(seed)
    canvas = embed_on_canvas(dataset.images, pad_to)
    if not ranges.all_zero():
        mats = random_affine(ranges, len(canvas), rng)
        canvas = transform(Tensor(canvas), AffineParams(mats)).data
        canvas = np.clip(canvas, 0.0, 1.0)
    return LabeledDataset(canvas, dataset.labels.copy(), dataset.num_classes,
                          split=dataset.split + "-perturbed")


def split_dataset(dataset: LabeledDataset, val_fraction, seed):
    """Disjoint train/validation split, deterministic per seed."""
    n = len(dataset)
    n_val = max(1, int(round(val_fraction * n)))
    if n_val >= n:
        raise ArgumentError("validation fraction leaves no training data")
    order = np.random.default_rng(seed).permutation(n)
    return (dataset.take(order[n_val:], split="train"),
            dataset.take(order[:n_val], split="val"))


def make_toy2d(n_per_class, means=((1.0, 1.0), (-1.0, -1.0)), std=0.3,
               render="patch8x8", seed=0) -> LabeledDataset:
    """Gaussian blobs in the plane; raw mode packs the (rescaled) coordinates
    into 1x1x2 images, patch8x8 renders each point as a bump so the conv
    path is exercised."""
    if std <= 0:
        raise ArgumentError("std must be positive")
    rng = np.random.default_rng(seed)
    means = np.asarray(means, dtype=np.float64)
    k = len(means)
    pts = np.concatenate([rng.normal(m, std, size=(n_per_class, 2)) for m in means])
    labels = np.repeat(np.arange(k), n_per_class)
    order = rng.permutation(len(pts))
    pts, labels = pts[order], labels[order]
    # map coordinates to [0,1] with a fixed affine window around the means
    lo = means.min() - 4.0 * std
    hi = means.max() + 4.0 * std
    unit = np.clip((pts - lo) / (hi - lo), 0.0, 1.0)
    if render == "raw":
        images = unit.reshape(-1, 1, 1, 2)
    elif render == "patch8x8":
        size = 8
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        cx = unit[:, 0] * (size - 1)
        cy = unit[:, 1] * (size - 1)
        d2 = ((xx[None] - cx[:, None, None]) ** 2
              + (yy[None] - cy[:, None, None]) ** 2)
        images = np.exp(-d2 / (2.0 * 1.2 ** 2)).reshape(-1, 1, size, size)
    else:
        raise ArgumentError(f"unknown render mode {render!r}")
    return LabeledDataset(images, labels, k)


def _circle_means(k):
    if k == 2:
        return ((1.0, 1.0), (-1.0, -1.0))
    ang = 2.0 * np.pi * np.arange(k) / k
    r = np.sqrt(2.0)
    return tuple(zip(r * np.cos(ang), r * np.sin(ang)))


def dataset_from_spec(spec: str, default_seed=0, base: LabeledDataset | None = None,
                      ranges: AugmentRanges | None = None, pad_to=40) -> LabeledDataset:
    """Build a dataset from a spec string.

    Forms: toy2d:n=100,std=0.3,render=patch8x8[,classes=2][,seed=S]
           idx:images=PATH,labels=PATH[,classes=10]
           container:path=PATH
           perturbed:seed=S[,pad_to=P]   (frozen affine warp of ``base``)
    """
    kind, _, rest = spec.partition(":")
    kv = {}
    for item in rest.split(","):
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"bad dataset spec item {item!r} in {spec!r}")
        k, v = item.split("=", 1)
        kv[k.strip()] = v.strip()
    if kind == "toy2d":
        k = int(kv.get("classes", 2))
        return make_toy2d(int(kv.get("n", 100)), means=_circle_means(k),
                          std=float(kv.get("std", 0.3)),
                          render=kv.get("render", "patch8x8"),
                          seed=int(kv.get("seed", default_seed)))
    if kind == "idx":
        if "images" not in kv or "labels" not in kv:
            raise ConfigError("idx spec needs images= and labels= paths")
        return load_idx(kv["images"], kv["labels"],
                        num_classes=int(kv.get("classes", 10)))
    if kind == "container":
        from .container import load_dataset
        if "path" not in kv:
            raise ConfigError("container spec needs path=")
        return load_dataset(kv["path"])
    if kind == "perturbed":
        if base is None:
            raise ArgumentError("perturbed spec needs a base dataset")
        return make_perturbed_testset(
            base, ranges or AugmentRanges(),
            int(kv.get("pad_to", pad_to)), seed=int(kv.get("seed", default_seed)))
    raise ConfigError(f"unknown dataset spec kind {kind!r}")


@dataclass
class DataBundle:
    """Disjoint train/validation splits plus an optional test set."""
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset | None = None


# -- discrete introspective oracle ------------------------------------------

class DiscreteDistribution:
    """Probabilities over n bins; nonnegative and normalized within 1e-12."""

    def __init__(self, probs):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ArgumentError("distribution must be a nonempty vector")
        if (p < 0).any():
            raise ArgumentError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ArgumentError(f"probabilities sum to {p.sum()!r}, not 1")
        self.probs = p

    def __len__(self):
        return len(self.probs)

    @classmethod
    def random(cls, n, rng):
        p = rng.uniform(0.05, 1.0, size=n)
        return cls(p / p.sum())


def kl_divergence(p, q) -> float:
    """Sum p log(p/q) with 0 log 0 := 0; requires support(p) within
    support(q)."""
    pa = p.probs if isinstance(p, DiscreteDistribution) else np.asarray(p, dtype=np.float64)
    qa = q.probs if isinstance(q, DiscreteDistribution) else np.asarray(q, dtype=np.float64)
    if pa.shape != qa.shape:
        raise ArgumentError("distributions must share their bin count")
    if np.any((qa == 0) & (pa > 0)):
        raise SupportError("support(p) must be contained in support(q)")
    mask = pa > 0
    return float(np.sum(pa[mask] * np.log(pa[mask] / qa[mask])))


def discrete_introspective_update(p_pos, p_neg_t, classifier_quality) -> DiscreteDistribution:
    """One exact update of the negative model: multiply by the synthetic
    classifier's ratio q(+1|x)/q(-1|x) = (p_pos/p_neg)^(2*quality-1) and
    renormalize by the explicit partition sum. quality=0.5 is the uniform
    (no-op) limit, quality=1 the exact Bayes ratio."""
    if not (0.5 < classifier_quality <= 1.0):
        raise ArgumentError("classifier_quality must lie in (0.5, 1]")
    pp = p_pos.probs if isinstance(p_pos, DiscreteDistribution) else np.asarray(p_pos, dtype=np.float64)
    pn = p_neg_t.probs if isinstance(p_neg_t, DiscreteDistribution) else np.asarray(p_neg_t, dtype=np.float64)
    if np.any((pn == 0) & (pp > 0)):
        raise SupportError("negative model must cover the positive support")
    expo = 2.0 * classifier_quality - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pn > 0, (pp / np.where(pn > 0, pn, 1.0)) ** expo, 0.0)
    unnorm = ratio * pn
    z = unnorm.sum()
    if z <= 0:
        raise SupportError("update collapsed to an empty distribution")
    return DiscreteDistribution(unnorm / z)
