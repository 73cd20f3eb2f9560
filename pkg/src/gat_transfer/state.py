"""Run state tracking for resumable training."""

import json
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional


@dataclass
class RunState:
    """Progress of one training run."""
    completed_epochs: int  # epochs fully trained so far
    last_checkpoint: Optional[str]  # path relative to the run directory
    config_hash: str
    updated_at: str  # ISO timestamp


class StateManager:
    """Manage ``state.json`` inside a run directory."""

    def __init__(self, state_file: Path, config_hash: str = ""):
        self.state_file = state_file
        self.config_hash = config_hash
        self._load_state()

    def _load_state(self):
        """Load state from file or create a fresh one."""
        if self.state_file.exists():
            with open(self.state_file, 'r', encoding='utf-8') as f:
                self.state = RunState(**json.load(f))
        else:
            self.state = RunState(
                completed_epochs=0,
                last_checkpoint=None,
                config_hash=self.config_hash,
                updated_at=datetime.now().isoformat(timespec="seconds"),
            )

    def _save_state(self):
        self.state_file.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.state_file.with_suffix(".json.tmp")
        with open(tmp, 'w', encoding='utf-8') as f:
            json.dump(asdict(self.state), f, indent=2)
        tmp.replace(self.state_file)

    def can_resume(self) -> bool:
        """True if a checkpoint from the same configuration exists."""
        if self.state.last_checkpoint is None:
            return False
        if self.config_hash and self.state.config_hash and self.config_hash != self.state.config_hash:
            return False
        return (self.state_file.parent / self.state.last_checkpoint).exists()

    def checkpoint_path(self) -> Optional[Path]:
        if self.state.last_checkpoint is None:
            return None
        return self.state_file.parent / self.state.last_checkpoint

    def update_after_checkpoint(self, completed_epochs: int, checkpoint: Path):
        """Record a checkpoint written after ``completed_epochs`` epochs."""
        self.state.completed_epochs = completed_epochs
        self.state.last_checkpoint = str(checkpoint.relative_to(self.state_file.parent))
        self.state.config_hash = self.config_hash
        self.state.updated_at = datetime.now().isoformat(timespec="seconds")
        self._save_state()

    def reset_state(self):
        """Forget any earlier progress, e.g. when the configuration changed."""
        self.state = RunState(
            completed_epochs=0,
            last_checkpoint=None,
            config_hash=self.config_hash,
            updated_at=datetime.now().isoformat(timespec="seconds"),
        )
        self._save_state()
