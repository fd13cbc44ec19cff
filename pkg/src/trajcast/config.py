"""Model and training configuration with flat key=value file parsing.

Every key has a default; a config file or CLI flags override them. The
seed can additionally be forced through the TRAJCAST_SEED environment
variable (highest precedence), so batch experiments can re-seed runs
without editing files.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

SEED_ENV_VAR = "TRAJCAST_SEED"


@dataclass
class ModelConfig:
    obs_frames: int = 8        # observed positions per window
    pred_frames: int = 12      # future positions to predict
    dt: float = 0.4
    units: str = "m"           # "m" or "px" (pixel datasets); tags reports only
    history_hidden: int = 32
    neighbor_hidden: int = 8
    future_hidden: int = 32
    decoder_hidden: int = 32
    attention_dim: int = 16
    head_hidden: int = 32
    classifier_hidden: int = 16
    latent_size: int = 25
    mogrifier_rounds: int = 6
    decoder_mogrifier_rounds: int = 6  # 0 recovers the plain GRU decoder
    encoder_layers: int = 2
    use_map: bool = True
    map_patch_cells: int = 8
    map_channels1: int = 4
    map_channels2: int = 8
    map_encoding_dim: int = 32
    perception_distance: float = 0.0  # 0 -> per-scene default by category

    @property
    def t_obs(self) -> int:
        return self.obs_frames - 1

    @property
    def t_future(self) -> int:
        return self.t_obs + self.pred_frames

    @property
    def horizon(self) -> int:
        return self.pred_frames


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    batch_size: int = 8
    epochs: int = 5
    n_proposals: int = 20
    gamma: float = 3.0         # meters; proposal labeling threshold
    alpha: float = 1.0
    beta_schedule: str = "sigmoid"  # "constant" or "sigmoid"
    beta_constant: float = 1.0
    beta_start: float = 0.0
    beta_end: float = 1.0
    beta_midpoint: int = 100
    beta_rate: float = 0.05
    clip_norm: float = 10.0
    seed: int = 0
    val_fraction: float = 0.2
    select_k: int = 1
    sample_mode: str = "latent_mode"  # proposal sampling during prediction

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.beta_schedule not in ("constant", "sigmoid"):
            raise ValueError(f"unknown beta schedule {self.beta_schedule!r}")


def _convert(raw: str, typ):
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return typ(raw)


def parse_config_file(path) -> dict:
    """Flat `key = value` text; '#' starts a comment; blank lines ignored."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {line.rstrip()!r}")
            key, raw = stripped.split("=", 1)
            out[key.strip()] = raw.strip()
    return out


def config_fields():
    """(name, type, default, owner) for every config key; CLI flags and
    config-file keys both mirror this list."""
    rows = []
    for cls, owner in ((ModelConfig, "model"), (TrainConfig, "train")):
        for f in dataclasses.fields(cls):
            rows.append((f.name, f.type, f.default, owner))
    return rows


def build_configs(file_values: dict | None = None, overrides: dict | None = None):
    """Merge defaults < config file < explicit overrides < TRAJCAST_SEED."""
    merged_model = {}
    merged_train = {}
    known = {}
    for name, typ, _default, owner in config_fields():
        typ = {"int": int, "float": float, "str": str, "bool": bool}.get(typ, typ)
        known[name] = (typ, owner)

    def apply(values, already_typed):
        for key, raw in values.items():
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            typ, owner = known[key]
            val = raw if already_typed else _convert(raw, typ)
            (merged_model if owner == "model" else merged_train)[key] = val

    if file_values:
        apply(file_values, already_typed=False)
    if overrides:
        apply({k: v for k, v in overrides.items() if v is not None}, already_typed=True)
    if os.environ.get(SEED_ENV_VAR):
        merged_train["seed"] = int(os.environ[SEED_ENV_VAR])
    return ModelConfig(**merged_model), TrainConfig(**merged_train)
