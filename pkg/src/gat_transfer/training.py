"""Alternating D/G optimisation, learning-rate schedule, checkpoints and the ablation suite."""

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from itertools import chain
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import torch
from pydantic import BaseModel, ConfigDict, Field
from torch.utils.data import DataLoader

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest
from .dataset import UnpairedDataset
from .errors import CheckpointError, DatasetError, NonFiniteLossError
from .landmarks import LandmarkCache
from .losses import (
    GeneratorTerms,
    LossReport,
    LossWeights,
    adversarial_generator_loss,
    content_loss,
    cycle_loss,
    discriminator_loss,
    first_non_finite,
    generator_total,
    head_loss,
    land_loss,
    make_report,
    style_loss,
)
from .networks import Discriminator, Generator, NetworkConfig
from .perceptual import FeatureExtractor, PerceptualConfig, VGGFeatureExtractor
from .state import StateManager

if TYPE_CHECKING:
    from .config import AppConfig

logger = logging.getLogger(__name__)


class AblationFlag(str, Enum):
    DROP_LC = "drop_Lc"
    DROP_LS = "drop_Ls"
    DROP_LL = "drop_Ll"
    DROP_LH = "drop_Lh"


# Variant label → flags, in the column order of the ablation tables
ABLATION_VARIANTS: dict[str, frozenset[AblationFlag]] = {
    "wo_Lc": frozenset({AblationFlag.DROP_LC}),
    "wo_Ls": frozenset({AblationFlag.DROP_LS}),
    "wo_Ll": frozenset({AblationFlag.DROP_LL}),
    "wo_Lh": frozenset({AblationFlag.DROP_LH}),
    "L_Total": frozenset(),
}


class TrainConfig(BaseModel):
    """Optimisation schedule and loss configuration."""
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=200, ge=1)
    lr0: float = Field(default=1e-4, gt=0)
    decay_start_fraction: float = Field(default=0.5, ge=0, le=1)
    batch_size: int = Field(default=1, ge=1)
    seed: int = 0
    betas: tuple[float, float] = (0.5, 0.999)
    checkpoint_every: int = Field(default=10, ge=1)
    log_every: int = Field(default=50, ge=1)
    device: str = "auto"
    deterministic: bool = True
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    ablation_flags: set[AblationFlag] = Field(default_factory=set)


@dataclass
class EpochStats:
    epoch: int
    losses: LossReport
    seconds: float
    lr: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "seconds": self.seconds, "lr": self.lr, **self.losses.to_dict()}


@dataclass
class TrainingResult:
    run_dir: Path
    epochs: list[EpochStats] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    first_step_grad_norms: dict[str, float] = field(default_factory=dict)
    trainer: Optional["Trainer"] = None


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """lr0 until ``epochs·decay_start_fraction``, then linear down to 0 at ``epochs``."""
    if epoch < 0 or epoch > cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    decay_start = cfg.epochs * cfg.decay_start_fraction
    if epoch < decay_start:
        return cfg.lr0
    if epoch >= cfg.epochs:
        return 0.0
    return cfg.lr0 * (cfg.epochs - epoch) / (cfg.epochs - decay_start)


def resolve_device(name: str) -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


def _masks(side: dict, device: torch.device) -> dict[str, torch.Tensor]:
    return {name: side[name].to(device) for name in ("eye", "nose", "lip", "head")}


class Trainer:
    """Owns the networks and optimisers of one training run."""

    def __init__(
        self,
        cfg: TrainConfig,
        network_cfg: Optional[NetworkConfig] = None,
        perceptual_cfg: Optional[PerceptualConfig] = None,
        extractor: Optional[FeatureExtractor] = None,
        device: Optional[torch.device] = None,
    ):
        self.cfg = cfg
        self.network_cfg = network_cfg or NetworkConfig()
        self.perceptual_cfg = perceptual_cfg or PerceptualConfig()
        self.device = device or resolve_device(cfg.device)
        self.flags = set(cfg.ablation_flags)

        if cfg.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        torch.manual_seed(cfg.seed)
        self.generator = Generator.from_config(self.network_cfg).to(self.device)
        self.disc_x = Discriminator.from_config(self.network_cfg).to(self.device)
        self.disc_y = Discriminator.from_config(self.network_cfg).to(self.device)

        needs_features = not {AblationFlag.DROP_LS, AblationFlag.DROP_LC} <= self.flags
        if extractor is None and needs_features:
            extractor = VGGFeatureExtractor.from_config(self.perceptual_cfg).to(self.device)
        self.extractor = extractor

        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=cfg.lr0, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(
            chain(self.disc_x.parameters(), self.disc_y.parameters()), lr=cfg.lr0, betas=cfg.betas
        )
        self.completed_epochs = 0
        self.last_generator_grad_norms: dict[str, float] = {}

    def set_lr(self, epoch: int) -> float:
        lr = lr_schedule(epoch, self.cfg)
        for optimizer in (self.opt_g, self.opt_d):
            for group in optimizer.param_groups:
                group["lr"] = lr
        return lr

    def generator_terms(
        self,
        x: torch.Tensor,
        y: torch.Tensor,
        x_y: torch.Tensor,
        y_x: torch.Tensor,
        masks_x: dict[str, torch.Tensor],
        masks_y: dict[str, torch.Tensor],
    ) -> GeneratorTerms:
        recovered = self.generator(x_y, y_x)
        terms = GeneratorTerms(cycle=cycle_loss(x, y, recovered.x_y, recovered.y_x))

        if AblationFlag.DROP_LL not in self.flags:
            terms.land, terms.land_terms = land_loss(x_y, x, y_x, y, masks_x, masks_y)
        if AblationFlag.DROP_LH not in self.flags:
            # Gat band from the style image, hair band from the photo
            terms.head = head_loss(x_y, y, y_x, x, m_ht=masks_y["head"], m_hr=masks_x["head"])
        if AblationFlag.DROP_LS not in self.flags:
            terms.style = style_loss(x_y, y, y_x, x, self.extractor, self.perceptual_cfg.style_layers)
        if AblationFlag.DROP_LC not in self.flags:
            terms.content = content_loss(x_y, x, y_x, y, self.extractor, self.perceptual_cfg.content_layers)
        if self.cfg.loss_weights.lambda_adv > 0:
            terms.adversarial = adversarial_generator_loss(self.disc_x(x_y), self.disc_y(y_x))
        return terms

    def train_step(self, batch: dict) -> LossReport:
        """One discriminator update followed by one generator update."""
        self.generator.train()
        self.disc_x.train()
        self.disc_y.train()
        x = batch["x"]["image"].to(self.device)
        y = batch["y"]["image"].to(self.device)
        masks_x = _masks(batch["x"], self.device)
        masks_y = _masks(batch["y"], self.device)
        batch_ids = list(batch["x"]["id"]) + list(batch["y"]["id"])

        out = self.generator(x, y)

        d_total = discriminator_loss(
            self.disc_x(y), self.disc_x(out.x_y.detach()),
            self.disc_y(x), self.disc_y(out.y_x.detach()),
        )
        if not torch.isfinite(d_total):
            logger.error(f"Non-finite discriminator loss; batch ids: {batch_ids}")
            raise NonFiniteLossError("discriminator_total", batch_ids)
        self.opt_d.zero_grad(set_to_none=True)
        d_total.backward()
        self.opt_d.step()

        terms = self.generator_terms(x, y, out.x_y, out.y_x, masks_x, masks_y)
        g_total = generator_total(terms, self.cfg.loss_weights)
        report = make_report(terms, g_total, d_total)
        bad = first_non_finite(report)
        if bad is not None:
            logger.error(f"Non-finite {bad} loss; batch ids: {batch_ids}")
            raise NonFiniteLossError(bad, batch_ids)

        self.opt_g.zero_grad(set_to_none=True)
        g_total.backward()
        self.last_generator_grad_norms = {
            name: (float(p.grad.norm()) if p.grad is not None else 0.0)
            for name, p in self.generator.named_parameters()
        }
        self.opt_g.step()
        return report

    def state_payload(self) -> dict:
        return {
            "epoch": self.completed_epochs,
            "generator": self.generator.state_dict(),
            "disc_x": self.disc_x.state_dict(),
            "disc_y": self.disc_y.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "network": self.network_cfg.model_dump(),
            "train": self.cfg.model_dump(mode="json"),
            "rng": torch.get_rng_state(),
        }

    def save(self, path: Path) -> Path:
        return save_checkpoint(path, self.state_payload())

    def load(self, path: Path):
        payload = load_checkpoint(path, map_location=self.device)
        try:
            self.generator.load_state_dict(payload["generator"])
            self.disc_x.load_state_dict(payload["disc_x"])
            self.disc_y.load_state_dict(payload["disc_y"])
            self.opt_g.load_state_dict(payload["opt_g"])
            self.opt_d.load_state_dict(payload["opt_d"])
        except (KeyError, RuntimeError, ValueError) as e:
            raise CheckpointError(f"Checkpoint {path} does not match this configuration: {e}")
        self.completed_epochs = int(payload["epoch"])
        if "rng" in payload:
            torch.set_rng_state(payload["rng"].cpu())
        logger.info(f"Resumed from {path} after {self.completed_epochs} epochs")


class TrainingLog:
    """Line-delimited JSON log of step and epoch records."""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, kind: str, record: dict):
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps({"kind": kind, **record}) + "\n")

    def rotate(self) -> Optional[Path]:
        """Move an existing log aside as training_log.<n>.jsonl; returns the new name."""
        if not self.path.exists():
            return None
        n = 1
        while (target := self.path.with_name(f"{self.path.stem}.{n}{self.path.suffix}")).exists():
            n += 1
        self.path.rename(target)
        logger.info(f"Previous training log moved to {target}")
        return target


def train_loop(
    app: "AppConfig",
    manifest: DatasetManifest,
    cache: LandmarkCache,
    run_dir: Path,
    resume: bool = True,
    extractor: Optional[FeatureExtractor] = None,
) -> TrainingResult:
    """Train for ``app.training.epochs`` epochs, checkpointing into ``run_dir``."""
    cfg = app.training
    if not manifest.train_x or not manifest.train_y:
        raise DatasetError("Training split is empty; run preprocess on a populated dataset first")

    dataset = UnpairedDataset(
        manifest,
        cache,
        split="train",
        augment_cfg=app.augment,
        seed=cfg.seed,
        batch_size=cfg.batch_size,
        dilation_px=app.landmarks.dilation_px,
    )
    trainer = Trainer(cfg, app.network, app.perceptual, extractor=extractor)
    state = StateManager(run_dir / "state.json", config_hash=app.fingerprint())
    log = TrainingLog(run_dir / "training_log.jsonl")
    if resume and state.can_resume():
        trainer.load(state.checkpoint_path())
    else:
        # Starting over: earlier state and log belong to another run
        if state.state_file.exists():
            state.reset_state()
        log.rotate()
    result = TrainingResult(run_dir=run_dir, trainer=trainer)

    print("=" * 50)
    print(f"TRAINING {run_dir.name}")
    print("=" * 50)
    print(f"Pairs per epoch: {len(dataset)}  |  batch size: {cfg.batch_size}  |  device: {trainer.device}")
    if cfg.ablation_flags:
        print(f"Ablation: {', '.join(sorted(f.value for f in cfg.ablation_flags))}")

    steps_per_epoch = len(dataset) // cfg.batch_size
    step = trainer.completed_epochs * steps_per_epoch
    for epoch in range(trainer.completed_epochs, cfg.epochs):
        started = time.perf_counter()
        lr = trainer.set_lr(epoch)
        dataset.set_epoch(epoch)
        loader = DataLoader(
            dataset,
            batch_size=cfg.batch_size,
            shuffle=False,
            drop_last=True,
            num_workers=app.data.num_workers,
        )

        reports: list[LossReport] = []
        for batch in loader:
            report = trainer.train_step(batch)
            if not result.first_step_grad_norms:
                result.first_step_grad_norms = dict(trainer.last_generator_grad_norms)
            reports.append(report)
            log.write("step", {"epoch": epoch, "step": step, **report.to_dict()})
            step += 1
            if step % cfg.log_every == 0:
                logger.info(
                    f"epoch {epoch} step {step}: G={report.generator_total:.4f} D={report.discriminator_total:.4f}"
                )

        stats = EpochStats(epoch=epoch, losses=LossReport.mean(reports), seconds=time.perf_counter() - started, lr=lr)
        result.epochs.append(stats)
        log.write("epoch", stats.to_dict())
        trainer.completed_epochs = epoch + 1
        print(
            f"Epoch {epoch + 1}/{cfg.epochs}  lr={lr:.2e}  "
            f"G={stats.losses.generator_total:.4f}  D={stats.losses.discriminator_total:.4f}  "
            f"({stats.seconds:.1f}s)"
        )

        is_final = trainer.completed_epochs == cfg.epochs
        if is_final or trainer.completed_epochs % cfg.checkpoint_every == 0:
            name = "final.pt" if is_final else f"epoch_{trainer.completed_epochs:04d}.pt"
            path = trainer.save(run_dir / "checkpoints" / name)
            state.update_after_checkpoint(trainer.completed_epochs, path)
            result.checkpoints.append(path)
            print(f"✓ Checkpoint saved: {path}")

    return result


def variant_config(app: "AppConfig", flags: frozenset[AblationFlag]) -> "AppConfig":
    """Copy of ``app`` whose training flags are exactly ``flags``."""
    training = app.training.model_copy(update={"ablation_flags": set(flags)})
    return app.model_copy(update={"training": training})


def run_ablation_suite(
    app: "AppConfig",
    manifest: DatasetManifest,
    cache: LandmarkCache,
    out_dir: Path,
    extractor: Optional[FeatureExtractor] = None,
) -> dict[str, TrainingResult]:
    """Train every ablation variant with the same seed and data."""
    results: dict[str, TrainingResult] = {}
    for label, flags in ABLATION_VARIANTS.items():
        print()
        print(f"Ablation variant {label} ({', '.join(sorted(f.value for f in flags)) or 'all losses'})")
        results[label] = train_loop(variant_config(app, flags), manifest, cache, out_dir / label, extractor=extractor)
    return results


def epoch_stats_from_log(path: Path) -> list[dict]:
    """Epoch records of a training log."""
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8") as f:
        return [r for r in map(json.loads, f) if r.get("kind") == "epoch"]
