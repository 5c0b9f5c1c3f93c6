"""Run configuration: dotted keys with documented defaults, parsed from
`key = value` text files. Unknown keys are rejected; every resolved key is
echoed into the run's output directory for provenance."""

import os

from .backbone import BackboneConfig
from .diffusion import TrainConfig
from .model import ModelConfig

# One reference table for every key: (default, docstring). The README's
# configuration page is generated from this.
DEFAULTS = {
    "model.n_layers": (4, "backbone depth (even)"),
    "model.d_model": (64, "token width"),
    "model.n_heads": (4, "attention heads"),
    "model.patch": (2, "spatial patch edge"),
    "model.caption_vocab": (16, "caption id vocabulary size"),
    "model.mode": ("i2v", "t2v | i2v"),
    "model.context_depth": (2, "context encoder layers (1/2/4)"),
    "model.context_caption": (True, "context encoder sees caption ids"),
    "model.use_select": (True, "background-only token selection"),
    "model.adapter_rank": (4, "ID adapter LoRA rank"),
    "model.adapter_scale": (1.0, "ID adapter scale"),
    "model.spatial_factor": (2, "codec spatial downsample factor"),
    "train.lr": (1e-3, "learning rate (toy scale)"),
    "train.stage1_steps": (2000, "context encoder steps"),
    "train.stage2_steps": (200, "ID adapter steps"),
    "train.optimizer": ("sgd", "sgd | adamw"),
    "train.momentum": (0.9, "sgd momentum"),
    "train.schedule_steps": (100, "training noise schedule steps"),
    "train.augment": (True, "random mask dilation/erosion"),
    "sample.steps": (20, "sampler steps"),
    "sample.blend": (False, "latent blending of the known region"),
    "long.clip_len": (8, "window length in frames"),
    "long.overlap": (2, "window overlap in frames"),
    "long.resample": (True, "thread ID caches across clips"),
    "pipeline.frames": (8, "synthetic clip length"),
    "pipeline.size": (32, "synthetic frame edge"),
    "pipeline.fps": (10.0, "synthetic clip frame rate"),
    "pipeline.transition_threshold": (0.3, "scene-cut mean-abs-diff threshold"),
}


class ConfigError(ValueError):
    pass


def _coerce(raw, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_config_text(text):
    """Parse `key = value` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(raw, DEFAULTS[key][0])
    return out


def load_config(path=None, overrides=None):
    """Resolved key -> value mapping: defaults, then file, then overrides."""
    resolved = {k: v for k, (v, _) in DEFAULTS.items()}
    if path:
        with open(path, encoding="utf-8") as fh:
            resolved.update(parse_config_text(fh.read()))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = value
    return resolved


def echo_config(resolved, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            fh.write(f"{key} = {resolved[key]}\n")


def model_config(resolved, seed=0) -> ModelConfig:
    bb = BackboneConfig(
        n_layers=resolved["model.n_layers"],
        d_model=resolved["model.d_model"],
        n_heads=resolved["model.n_heads"],
        patch=resolved["model.patch"],
        caption_vocab=resolved["model.caption_vocab"],
        mode=resolved["model.mode"],
    )
    return ModelConfig(
        backbone=bb,
        context_depth=resolved["model.context_depth"],
        context_caption=resolved["model.context_caption"],
        use_select=resolved["model.use_select"],
        adapter_rank=resolved["model.adapter_rank"],
        adapter_scale=resolved["model.adapter_scale"],
        spatial_factor=resolved["model.spatial_factor"],
        seed=seed,
    )


def train_config(resolved, seed=0) -> TrainConfig:
    return TrainConfig(
        lr=resolved["train.lr"],
        stage1_steps=resolved["train.stage1_steps"],
        stage2_steps=resolved["train.stage2_steps"],
        optimizer=resolved["train.optimizer"],
        momentum=resolved["train.momentum"],
        schedule_steps=resolved["train.schedule_steps"],
        augment=resolved["train.augment"],
        seed=seed,
    )


def resolve_seed(cli_seed, default=0):
    """--seed wins; the VP_SEED environment variable is the fallback."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("VP_SEED")
    return int(env) if env else default


def reference_page():
    lines = ["key | default | description", "--- | --- | ---"]
    for key, (default, doc) in DEFAULTS.items():
        lines.append(f"{key} | {default} | {doc}")
    return "\n".join(lines)
