"""Versioned checkpoint archives for the generator, discriminators and optimisers."""

import logging
from pathlib import Path
from typing import Any, Optional

import torch

from .errors import CheckpointError
from .networks import Generator, NetworkConfig

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "gat-transfer/checkpoint/v1"


def save_checkpoint(path: Path, payload: dict[str, Any]) -> Path:
    """Write ``payload`` with the schema tag; temp file then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save({"schema": CHECKPOINT_SCHEMA, **payload}, tmp)
    tmp.replace(path)
    logger.info(f"Checkpoint saved: {path}")
    return path


def load_checkpoint(path: Path, map_location: Optional[str | torch.device] = "cpu") -> dict[str, Any]:
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=map_location, weights_only=False)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    if not isinstance(payload, dict) or payload.get("schema") != CHECKPOINT_SCHEMA:
        schema = payload.get("schema") if isinstance(payload, dict) else None
        raise CheckpointError(f"Unsupported checkpoint schema in {path}: {schema}")
    return payload


def resolve_checkpoint(path: Path) -> Path:
    """A checkpoint file, or the final/latest checkpoint inside a run directory."""
    if path.is_file():
        return path
    if path.is_dir():
        final = path / "checkpoints" / "final.pt"
        if final.exists():
            return final
        candidates = sorted((path / "checkpoints").glob("epoch_*.pt"))
        if candidates:
            return candidates[-1]
    raise CheckpointError(f"No checkpoint found at {path}")


def load_generator(path: Path, device: str | torch.device = "cpu") -> Generator:
    """Rebuild the generator recorded in a checkpoint, in eval mode."""
    payload = load_checkpoint(resolve_checkpoint(path), map_location=device)
    network_cfg = NetworkConfig(**payload.get("network", {}))
    generator = Generator.from_config(network_cfg)
    try:
        generator.load_state_dict(payload["generator"])
    except (KeyError, RuntimeError) as e:
        raise CheckpointError(f"Checkpoint {path} does not match the generator architecture: {e}")
    return generator.to(device).eval()
