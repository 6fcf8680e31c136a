"""Flat key=value run configuration with dotted keys, file parsing, and
command-line overrides. Unknown keys are rejected; every key has a default;
the fully resolved mapping is echoed into each run directory."""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import AugmentRanges
from .errors import ConfigError
from .explorer import ExplorerConfig
from .sampler import SamplerConfig

DEFAULTS = {
    "mode": "binary",
    "seed": 0,
    "outer_iterations": 10,
    "disc_steps": 100,
    "batch_size": 32,
    "lr": 1e-4,
    "beta1": 0.0,
    "beta2": 0.9,
    "adam_eps": 1e-8,
    "lambda_gp": 10.0,
    "patience": 5,
    "val_fraction": 0.1,
    "timing": "wall",  # "fixed" writes 0.000 seconds for byte-stable CSVs
    "synth_per_iteration": 0,  # 0 = one sample per positive, per iteration
    "eval_batch": 256,
    "grid_samples": 8,
    "model.conv_channels": 64,
    "model.num_layers": 4,
    "model.fc_hidden": 128,
    "predictor.channels": 16,
    "explorer.steps": 3,
    "explorer.lr": 1e-3,
    "explorer.noise_scale": 0.05,
    "explorer.use_full_objective": False,
    "explorer.clip": 1.5,
    "sampler.step_size": 0.05,
    "sampler.anneal_factor": 0.98,
    "sampler.noise_std": 0.01,
    "sampler.max_steps": 200,
    "sampler.t_u": 1e-3,
    "sampler.pool_cap": 0,
    "augment.rotation_deg": 20.0,
    "augment.translate": 0.2,
    "augment.scale": 0.2,
    "augment.shear": 0.2,
    "data.train": "toy2d:n=100,std=0.3,render=patch8x8",
    "data.test": "",
    "data.pad_to": 40,
}


def _coerce(key, raw, default):
    if isinstance(raw, type(default)) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def resolve(pairs=None) -> dict:
    """Defaults overlaid with (key, value) pairs; unknown keys rejected."""
    cfg = dict(DEFAULTS)
    for key, raw in (pairs or []):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        cfg[key] = _coerce(key, raw, DEFAULTS[key])
    return cfg


def parse_file(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            key, val = line.split("=", 1)
            pairs.append((key.strip(), val.strip()))
    return pairs


def parse_overrides(args) -> list[tuple[str, str]]:
    """Interpret trailing '--dotted.key value' pairs."""
    pairs = []
    i = 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise ConfigError(f"expected --key, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"missing value for --{key}")
            i += 1
            val = args[i]
        pairs.append((key, val))
        i += 1
    return pairs


def resolved_text(cfg: dict) -> str:
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


@dataclass
class TrainConfig:
    """Typed view of the flat config used by the trainer."""
    mode: str = "binary"
    seed: int = 0
    outer_iterations: int = 10
    disc_steps: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    lambda_gp: float = 10.0
    patience: int = 5
    val_fraction: float = 0.1
    timing: str = "wall"
    synth_per_iteration: int = 0
    eval_batch: int = 256
    grid_samples: int = 8
    conv_channels: int = 64
    num_layers: int = 4
    fc_hidden: int = 128
    predictor_channels: int = 16
    explorer: ExplorerConfig = field(default_factory=ExplorerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    augment: AugmentRanges = field(default_factory=AugmentRanges)

    def __post_init__(self):
        for name in ("outer_iterations", "disc_steps", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch norm)")
        if self.mode not in ("binary", "multiclass"):
            raise ConfigError(f"mode must be binary or multiclass, got {self.mode!r}")
        if self.timing not in ("wall", "fixed"):
            raise ConfigError("timing must be wall or fixed")


def to_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        mode=cfg["mode"], seed=cfg["seed"],
        outer_iterations=cfg["outer_iterations"], disc_steps=cfg["disc_steps"],
        batch_size=cfg["batch_size"], lr=cfg["lr"], beta1=cfg["beta1"],
        beta2=cfg["beta2"], adam_eps=cfg["adam_eps"], lambda_gp=cfg["lambda_gp"],
        patience=cfg["patience"], val_fraction=cfg["val_fraction"],
        timing=cfg["timing"], synth_per_iteration=cfg["synth_per_iteration"],
        eval_batch=cfg["eval_batch"], grid_samples=cfg["grid_samples"],
        conv_channels=cfg["model.conv_channels"],
        num_layers=cfg["model.num_layers"], fc_hidden=cfg["model.fc_hidden"],
        predictor_channels=cfg["predictor.channels"],
        explorer=ExplorerConfig(
            steps_per_iteration=cfg["explorer.steps"], lr=cfg["explorer.lr"],
            noise_scale=cfg["explorer.noise_scale"],
            use_full_objective=cfg["explorer.use_full_objective"],
            clip=cfg["explorer.clip"], lambda_gp=cfg["lambda_gp"],
            beta1=cfg["beta1"], beta2=cfg["beta2"], eps=cfg["adam_eps"]),
        sampler=SamplerConfig(
            step_size=cfg["sampler.step_size"],
            anneal_factor=cfg["sampler.anneal_factor"],
            noise_std=cfg["sampler.noise_std"],
            max_steps=cfg["sampler.max_steps"], t_u=cfg["sampler.t_u"],
            pool_cap=cfg["sampler.pool_cap"]),
        augment=AugmentRanges(
            rotation_deg=cfg["augment.rotation_deg"],
            translate=cfg["augment.translate"], scale=cfg["augment.scale"],
            shear=cfg["augment.shear"]),
    )
