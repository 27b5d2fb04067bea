"""Pipeline configuration (YAML) shared by the command-line tools."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .gcn import LossWeights, TrainConfig, VcGcnConfig
from .registration import NicpConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # file inputs (optional; commands validate the ones they need)
    template: str | None = None
    basis: str | None = None
    landmark_ids: str | None = None
    gcn_params: str | None = None

    # stage parameters
    resolution: int = 128
    iso: float = 0.5
    image_size: int = 512
    noise_px: float = 0.0
    seed: int = 0
    outer_rounds: int = 3
    nicp: NicpConfig = field(default_factory=NicpConfig)
    gcn: VcGcnConfig = field(default_factory=VcGcnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def require(self, *names):
        """Check the named file fields are set and exist."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"config field '{name}' is required for this command")
            if not Path(value).exists():
                raise ConfigError(f"config field '{name}': no such file: {value}")
        return self


_SECTION_TYPES = {
    "nicp": NicpConfig,
    "gcn": VcGcnConfig,
    "train": TrainConfig,
    "loss_weights": LossWeights,
}


def load_config(path=None, overrides=None):
    """PipelineConfig from a YAML file plus per-invocation overrides."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
    cfg = PipelineConfig()
    valid = set(cfg.__dataclass_fields__)
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown config key '{key}'")
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"config section '{key}' must be a mapping")
            section_type = _SECTION_TYPES[key]
            known = set(section_type.__dataclass_fields__)
            bad = set(value) - known
            if bad:
                raise ConfigError(f"unknown key(s) in '{key}': {sorted(bad)}")
            if key == "nicp" and "alphas" in value:
                value = dict(value, alphas=tuple(value["alphas"]))
            try:
                value = section_type(**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid '{key}' section: {exc}") from exc
        setattr(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(asdict(cfg), fh, sort_keys=True)
