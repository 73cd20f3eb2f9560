"""Application configuration: the section models of every module plus dotted overrides."""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .data import AugmentConfig, DataConfig, SharpenConfig
from .errors import ConfigError
from .evaluation import EvaluationConfig
from .landmarks import LandmarkConfig
from .networks import NetworkConfig
from .perceptual import PerceptualConfig
from .pipeline import SmokeConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = Path("config.json")


class AppConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    runs_dir: Path = Path("runs")
    data: DataConfig = Field(default_factory=DataConfig)
    sharpen: SharpenConfig = Field(default_factory=SharpenConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    landmarks: LandmarkConfig = Field(default_factory=LandmarkConfig)
    perceptual: PerceptualConfig = Field(default_factory=PerceptualConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    smoke: SmokeConfig = Field(default_factory=SmokeConfig)

    def fingerprint(self) -> str:
        """Hash of the settings that change what a training run computes."""
        relevant = {
            "image_size": self.data.image_size,
            "augment": self.augment.model_dump(mode="json"),
            "dilation_px": self.landmarks.dilation_px,
            "perceptual": self.perceptual.model_dump(mode="json"),
            "network": self.network.model_dump(mode="json"),
            "training": self.training.model_dump(mode="json", exclude={"log_every", "device", "checkpoint_every"}),
        }
        relevant["training"]["ablation_flags"] = sorted(relevant["training"]["ablation_flags"])
        encoded = json.dumps(relevant, sort_keys=True).encode("utf-8")
        return hashlib.sha256(encoded).hexdigest()[:16]


def parse_override(text: str) -> tuple[list[str], Any]:
    """``section.key=value``; the value is read as JSON when it parses, else as a string."""
    if "=" not in text:
        raise ConfigError(f"Override must look like section.key=value, got '{text}'")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"Empty key in override '{text}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def _check_path(parts: Sequence[str]):
    model: type[BaseModel] = AppConfig
    for depth, part in enumerate(parts):
        if part not in model.model_fields:
            raise ConfigError(f"Unknown configuration key: {'.'.join(parts[: depth + 1])}")
        annotation = model.model_fields[part].annotation
        if depth < len(parts) - 1:
            if not (isinstance(annotation, type) and issubclass(annotation, BaseModel)):
                raise ConfigError(f"'{'.'.join(parts[: depth + 1])}' has no sub-keys")
            model = annotation


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Set dotted keys in a raw config mapping after checking them against the schema."""
    for text in overrides:
        parts, value = parse_override(text)
        _check_path(parts)
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Cannot set '{text}': '{part}' is not a section")
        node[parts[-1]] = value
    return data


def resolve_config_path(path: Optional[Path]) -> Optional[Path]:
    """Explicit path, else ``GAT_TRANSFER_CONFIG``, else ./config.json when present."""
    if path is not None:
        return path
    env_path = os.environ.get("GAT_TRANSFER_CONFIG")
    if env_path:
        return Path(env_path)
    return DEFAULT_CONFIG_FILE if DEFAULT_CONFIG_FILE.exists() else None


def load_config(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> AppConfig:
    """Read, override and validate the configuration; every failure is a ConfigError."""
    path = resolve_config_path(path)
    data: dict = {}
    if path is not None:
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a JSON object")
        logger.debug(f"Loaded configuration from {path}")

    apply_overrides(data, overrides)
    try:
        return AppConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration:\n{e}")
