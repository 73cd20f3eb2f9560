"""Dataset preprocessing, single-pair inference and the end-to-end smoke run."""

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from .checkpoint import load_generator, resolve_checkpoint
from .data import (
    DatasetManifest,
    Domain,
    RawImage,
    image_key,
    list_split_images,
    load_and_crop,
    load_crop_boxes,
    load_image,
    normalize,
    resize_to_canvas,
    save_image,
    scan_dataset,
    sharpen_high_boost,
)
from .errors import BoundsError, DatasetError, GatTransferError, NoFaceDetected, SmokeStageError
from .evaluation import evaluate_testset, stylize
from .landmarks import CanvasTransform, LandmarkCache, create_detector, detect_landmarks
from .synthetic import SyntheticConfig, generate_synthetic_dataset
from .training import train_loop
from .visualize import save_figure, side_by_side

if TYPE_CHECKING:
    from .config import AppConfig

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
LANDMARKS_FILE = "landmarks.json"


class SmokeConfig(BaseModel):
    """Toy end-to-end run on the synthetic dataset."""
    model_config = ConfigDict(extra="forbid")

    workdir: Path = Path("runs/smoke")
    epochs: int = Field(default=30, ge=1)
    image_size: int = Field(default=64, ge=16)
    max_loss_ratio: float = Field(default=0.7, gt=0)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)


def prepare_canvas(
    raw: RawImage, crop_box: Optional[list[int]], size: int
) -> tuple[RawImage, CanvasTransform]:
    """Crop and resize to the square canvas; returns the canvas and the source→canvas transform."""
    canvas = resize_to_canvas(load_and_crop(raw, crop_box), size)
    transform = CanvasTransform.for_crop_and_resize(crop_box, (raw.width, raw.height), size)
    return canvas, transform


def _checked_canvas(
    raw: RawImage, key: str, crop_boxes: dict[str, list[int]], size: int
) -> tuple[RawImage, CanvasTransform]:
    image_id = key.rsplit("/", 1)[-1]
    try:
        return prepare_canvas(raw, crop_boxes.get(key, crop_boxes.get(image_id)), size)
    except BoundsError as e:
        raise DatasetError(f"Bad crop box for {key}: {e}")


def sweep_canvases(app: "AppConfig") -> list[tuple[str, RawImage]]:
    """Training canvases exactly as preprocessing hands them to the detector, before sharpening."""
    crop_boxes = load_crop_boxes(app.data.crop_boxes)
    canvases = []
    for domain in Domain:
        for path in list_split_images(app.data.root, domain, "train"):
            key = image_key(domain, "train", path.stem)
            canvas, _ = _checked_canvas(load_image(path, domain), key, crop_boxes, app.data.image_size)
            canvases.append((key, canvas))
    return canvases


def preprocess_dataset(app: "AppConfig") -> tuple[DatasetManifest, LandmarkCache]:
    """Crop, resize, sharpen and detect landmarks for every image; write manifest and cache.

    Output is staged in a sibling directory and swapped in once complete.
    """
    cfg = app.data
    manifest = scan_dataset(cfg.root)
    crop_boxes = load_crop_boxes(cfg.crop_boxes)
    detector = create_detector(app.landmarks)
    size = cfg.image_size

    final_dir = Path(cfg.processed_dir)
    staging = final_dir.with_name(final_dir.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)

    cache = LandmarkCache()
    for domain in Domain:
        for split in ("train", "test"):
            paths = {p.stem: p for p in list_split_images(cfg.root, domain, split)}
            for image_id in manifest.ids(split, domain):
                key = image_key(domain, split, image_id)
                raw = load_image(paths[image_id], domain)
                canvas, transform = _checked_canvas(raw, key, crop_boxes, size)
                save_image(canvas.pixels, staging / domain.value / split / f"{image_id}.png")

                sharpened = sharpen_high_boost(canvas, app.sharpen)
                try:
                    landmarks = detect_landmarks(normalize(canvas, key), sharpened, detector, transform)
                except NoFaceDetected:
                    logger.warning(f"No face detected in {key}; its masks will be empty")
                    landmarks = None
                cache.put(key, landmarks)

    manifest.image_size = size
    manifest.processed_dir = str(final_dir)
    manifest.detection_failures = cache.failures
    manifest.save(staging / MANIFEST_FILE)
    cache.save(staging / LANDMARKS_FILE)

    if final_dir.exists():
        shutil.rmtree(final_dir)
    staging.rename(final_dir)
    return manifest, cache


def load_prepared(app: "AppConfig") -> tuple[DatasetManifest, LandmarkCache]:
    processed = Path(app.data.processed_dir)
    return DatasetManifest.load(processed / MANIFEST_FILE), LandmarkCache.load(processed / LANDMARKS_FILE)


def infer_pair(
    checkpoint: Path,
    content_path: Path,
    style_path: Path,
    out_path: Path,
    image_size: int,
    device: str = "cpu",
    grid_path: Optional[Path] = None,
) -> Path:
    """Write x_y for one content/style pair, optionally with a content | style | result strip."""
    generator = load_generator(checkpoint, device)
    content, _ = prepare_canvas(load_image(content_path, Domain.X_PHOTO), None, image_size)
    style, _ = prepare_canvas(load_image(style_path, Domain.Y_PORTRAIT), None, image_size)
    result = stylize(generator, content.pixels, style.pixels, device)
    save_image(result, out_path)
    if grid_path is not None:
        save_figure(side_by_side(content.pixels, style.pixels, result, tile_size=image_size), grid_path)
    return out_path


@dataclass
class SmokeResult:
    first_epoch_loss: float
    final_epoch_loss: float
    checkpoint: Path
    output: Path
    evaluation_dir: Path
    stages: list[str] = field(default_factory=list)

    @property
    def loss_ratio(self) -> float:
        return self.final_epoch_loss / self.first_epoch_loss


class _Stage:
    """Context manager that turns any failure into a SmokeStageError naming the stage."""

    def __init__(self, name: str, stages: list[str]):
        self.name = name
        self.stages = stages

    def __enter__(self):
        print(f"\n[{self.name}]")
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            self.stages.append(self.name)
            print(f"✓ {self.name}")
            return False
        if isinstance(exc, SmokeStageError):
            return False
        exit_code = exc.exit_code if isinstance(exc, GatTransferError) else 1
        raise SmokeStageError(self.name, str(exc), exit_code=exit_code or 1) from exc


def run_smoke(app: "AppConfig") -> SmokeResult:
    """Synthetic data → preprocess → train → infer → evaluate, asserting the acceptance thresholds."""
    smoke = app.smoke
    workdir = Path(smoke.workdir)
    if workdir.exists():
        shutil.rmtree(workdir)
    stages: list[str] = []

    with _Stage("generate", stages):
        annotations = generate_synthetic_dataset(workdir / "data", smoke.synthetic)

    run_app = app.model_copy(
        update={
            "data": app.data.model_copy(
                update={"root": workdir / "data", "processed_dir": workdir / "processed", "image_size": smoke.image_size, "crop_boxes": None}
            ),
            "landmarks": app.landmarks.model_copy(update={"detector": "annotations", "annotations_path": annotations}),
            "training": app.training.model_copy(update={"epochs": smoke.epochs}),
        }
    )

    with _Stage("preprocess", stages):
        manifest, cache = preprocess_dataset(run_app)
        if manifest.detection_failures:
            raise SmokeStageError("preprocess", f"landmarks missing for {manifest.detection_failures}")

    with _Stage("train", stages):
        result = train_loop(run_app, manifest, cache, workdir / "run", resume=False)
        dead = [name for name, norm in result.first_step_grad_norms.items() if not norm > 0]
        if dead:
            raise SmokeStageError("train", f"no gradient at step 1 for {', '.join(dead[:5])}")
        first = result.epochs[0].losses.generator_total
        final = result.epochs[-1].losses.generator_total
        if not final <= smoke.max_loss_ratio * first:
            raise SmokeStageError(
                "train", f"generator loss {first:.4f} → {final:.4f} did not fall below {smoke.max_loss_ratio:.0%}"
            )
        checkpoint = resolve_checkpoint(workdir / "run")

    with _Stage("checkpoint", stages):
        restored = load_generator(checkpoint)
        live = result.trainer.generator.cpu().eval()
        inputs_rng = torch.Generator().manual_seed(run_app.training.seed)
        x = torch.rand(1, 3, smoke.image_size, smoke.image_size, generator=inputs_rng) * 2 - 1
        y = torch.rand(1, 3, smoke.image_size, smoke.image_size, generator=inputs_rng) * 2 - 1
        with torch.no_grad():
            if not torch.equal(live(x, y).x_y, restored(x, y).x_y):
                raise SmokeStageError("checkpoint", "restored generator output differs from the trained one")

    with _Stage("infer", stages):
        content = manifest.processed_path(Domain.X_PHOTO, "test", manifest.test_x[0])
        style = manifest.processed_path(Domain.Y_PORTRAIT, "test", manifest.test_y[0])
        output = infer_pair(checkpoint, content, style, workdir / "infer" / "x_y.png", smoke.image_size)
        pixels = load_image(output, Domain.X_PHOTO).pixels
        if pixels.shape != (smoke.image_size, smoke.image_size, 3):
            raise SmokeStageError("infer", f"unexpected output shape {pixels.shape}")

    with _Stage("evaluate", stages):
        report = evaluate_testset({"smoke": workdir / "run"}, manifest, workdir / "evaluation", app.evaluation)
        records = report.variants["smoke"].records
        if len(records) != len(manifest.test_pairs):
            raise SmokeStageError("evaluate", f"{len(records)} records for {len(manifest.test_pairs)} pairs")
        if not all(np.isfinite([r.p_content, r.p_style, r.s_content, r.s_style]).all() for r in records):
            raise SmokeStageError("evaluate", "non-finite metric values")

    return SmokeResult(
        first_epoch_loss=first,
        final_epoch_loss=final,
        checkpoint=checkpoint,
        output=output,
        evaluation_dir=workdir / "evaluation",
        stages=stages,
    )
