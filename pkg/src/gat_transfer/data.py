"""Image loading, cropping, resizing, sharpening, augmentation and dataset manifests."""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import BoundsError, DatasetError, ImageReadError, ShapeError

logger = logging.getLogger(__name__)

CANVAS_SIZE = 256
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLITS = ("train", "test")
MANIFEST_SCHEMA = "gat-transfer/manifest/v1"


class Domain(str, Enum):
    """Image domain: ID photos (X, content) or Korean portraits (Y, style)."""
    X_PHOTO = "x"
    Y_PORTRAIT = "y"


class Augmentation(str, Enum):
    NONE = "none"
    HFLIP = "hflip"
    BLUR = "blur"
    NOISE = "noise"


class SharpenConfig(BaseModel):
    """High-boost sharpening applied before landmark detection."""
    model_config = ConfigDict(extra="forbid")

    A: float = Field(default=1.5, gt=0, description="Boost coefficient")
    enabled: bool = True

    @property
    def alpha(self) -> float:
        """Center coefficient of the high-boost kernel."""
        return 9 * self.A - 1


class AugmentConfig(BaseModel):
    """Per-sample augmentation probabilities; at most one augmentation is applied."""
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    hflip: float = Field(default=0.5, ge=0, le=1)
    blur: float = Field(default=0.1, ge=0, le=1)
    noise: float = Field(default=0.1, ge=0, le=1)
    blur_sigma: float = Field(default=1.0, gt=0)
    noise_sigma: float = Field(default=0.05, ge=0)

    @model_validator(mode="after")
    def _probabilities_sum(self) -> "AugmentConfig":
        if self.hflip + self.blur + self.noise > 1.0 + 1e-9:
            raise ValueError("augment probabilities hflip + blur + noise must not exceed 1")
        return self


class DataConfig(BaseModel):
    """Dataset locations and canvas size."""
    model_config = ConfigDict(extra="forbid")

    root: Path = Path("data")
    processed_dir: Path = Path("processed")
    image_size: int = Field(default=CANVAS_SIZE, ge=16)
    crop_boxes: Optional[Path] = None
    num_workers: int = Field(default=0, ge=0)


@dataclass
class RawImage:
    """8-bit RGB image before normalization."""
    pixels: np.ndarray  # H×W×3 uint8
    source_path: str
    domain_tag: Domain

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"Expected H×W×3 image, got shape {self.pixels.shape}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ShapeError("Image must be at least 1×1")
        if self.pixels.dtype != np.uint8:
            self.pixels = np.clip(np.rint(self.pixels), 0, 255).astype(np.uint8)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class ImageSample:
    """Normalized square image with values in [-1, 1]."""
    pixels: np.ndarray  # S×S×3 float32
    id: str
    domain_tag: Domain
    augmentation_tag: Augmentation = Augmentation.NONE

    def __post_init__(self):
        shape = self.pixels.shape
        if len(shape) != 3 or shape[2] != 3 or shape[0] != shape[1]:
            raise ShapeError(f"ImageSample must be S×S×3, got {shape}")
        if self.pixels.size and (self.pixels.min() < -1.0 - 1e-6 or self.pixels.max() > 1.0 + 1e-6):
            raise ValueError("ImageSample values must lie in [-1, 1]")


def load_image(path: Path, domain: Domain) -> RawImage:
    """Read an image file as 8-bit RGB."""
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except FileNotFoundError:
        raise ImageReadError(path, "file not found")
    except (UnidentifiedImageError, OSError) as e:
        raise ImageReadError(path, str(e))
    return RawImage(pixels=pixels, source_path=str(path), domain_tag=domain)


def save_image(pixels: np.ndarray, path: Path) -> Path:
    """Write an 8-bit RGB array to disk (format from suffix)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
    return path


def load_and_crop(raw: RawImage, crop_box: Optional[Sequence[int]] = None) -> RawImage:
    """Crop ``raw`` to ``(x0, y0, x1, y1)`` (end-exclusive); no box means no crop."""
    if crop_box is None:
        return raw
    x0, y0, x1, y1 = (int(v) for v in crop_box)
    if x0 < 0 or y0 < 0 or x1 > raw.width or y1 > raw.height or x1 <= x0 or y1 <= y0:
        raise BoundsError(
            f"Crop box {(x0, y0, x1, y1)} outside {raw.width}×{raw.height} image {raw.source_path}"
        )
    return RawImage(
        pixels=raw.pixels[y0:y1, x0:x1].copy(),
        source_path=raw.source_path,
        domain_tag=raw.domain_tag,
    )


def resize_to_canvas(raw: RawImage, size: int = CANVAS_SIZE) -> RawImage:
    """Bilinear resample straight to ``size``×``size`` (aspect ratio not preserved)."""
    if raw.pixels.size == 0:
        raise ShapeError("Cannot resize an empty image")
    if raw.height == size and raw.width == size:
        pixels = raw.pixels.copy()
    else:
        pixels = cv2.resize(raw.pixels, (size, size), interpolation=cv2.INTER_LINEAR)
    return RawImage(pixels=pixels, source_path=raw.source_path, domain_tag=raw.domain_tag)


def high_boost_kernel(A: float) -> np.ndarray:
    """3×3 high-boost kernel (1/9)·[[-1,-1,-1],[-1,9A-1,-1],[-1,-1,-1]]; sums to A-1."""
    kernel = -np.ones((3, 3), dtype=np.float64)
    kernel[1, 1] = 9 * A - 1
    return kernel / 9.0


def high_boost_response(pixels: np.ndarray, A: float) -> np.ndarray:
    """Unclamped per-channel high-boost response with replicated borders."""
    return cv2.filter2D(
        np.asarray(pixels, dtype=np.float64),
        ddepth=-1,
        kernel=high_boost_kernel(A),
        borderType=cv2.BORDER_REPLICATE,
    )


def sharpen_high_boost(raw: RawImage, cfg: SharpenConfig) -> RawImage:
    """High-boost sharpen, clamped to [0, 255] in 8-bit space."""
    if not cfg.enabled:
        return raw
    response = high_boost_response(raw.pixels, cfg.A)
    pixels = np.clip(np.rint(response), 0, 255).astype(np.uint8)
    return RawImage(pixels=pixels, source_path=raw.source_path, domain_tag=raw.domain_tag)


def normalize(raw: RawImage, sample_id: str = "") -> ImageSample:
    """Map intensities [0, 255] affinely onto [-1, 1]."""
    pixels = raw.pixels.astype(np.float32) / 127.5 - 1.0
    return ImageSample(
        pixels=pixels,
        id=sample_id or Path(raw.source_path).stem,
        domain_tag=raw.domain_tag,
    )


def denormalize(sample: ImageSample) -> RawImage:
    """Inverse of :func:`normalize`, rounded to the nearest intensity."""
    return RawImage(
        pixels=to_uint8(sample.pixels),
        source_path=sample.id,
        domain_tag=sample.domain_tag,
    )


def to_uint8(values: np.ndarray) -> np.ndarray:
    """[-1, 1] floats to 8-bit intensities."""
    return np.clip(np.rint((np.asarray(values, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def augment(
    sample: ImageSample,
    kind: Augmentation,
    rng: Optional[np.random.Generator] = None,
    cfg: Optional[AugmentConfig] = None,
) -> ImageSample:
    """Apply one augmentation; shape is preserved and the tag recorded."""
    cfg = cfg or AugmentConfig()
    kind = Augmentation(kind)
    pixels = sample.pixels

    if kind == Augmentation.HFLIP:
        pixels = pixels[:, ::-1, :].copy()
    elif kind == Augmentation.BLUR:
        pixels = cv2.GaussianBlur(
            pixels.astype(np.float32), (5, 5), cfg.blur_sigma, borderType=cv2.BORDER_REPLICATE
        )
    elif kind == Augmentation.NOISE:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.normal(0.0, cfg.noise_sigma, size=pixels.shape)
        pixels = np.clip(pixels + noise, -1.0, 1.0).astype(np.float32)
    else:
        pixels = pixels.copy()

    return ImageSample(
        pixels=np.asarray(pixels, dtype=np.float32),
        id=sample.id,
        domain_tag=sample.domain_tag,
        augmentation_tag=kind,
    )


def choose_augmentation(rng: np.random.Generator, cfg: AugmentConfig) -> Augmentation:
    """Draw at most one augmentation according to the configured probabilities."""
    if not cfg.enabled:
        return Augmentation.NONE
    draw = rng.random()
    for kind, p in ((Augmentation.HFLIP, cfg.hflip), (Augmentation.BLUR, cfg.blur), (Augmentation.NOISE, cfg.noise)):
        if draw < p:
            return kind
        draw -= p
    return Augmentation.NONE


def image_key(domain: Domain | str, split: str, image_id: str) -> str:
    """Cache/manifest key such as ``x/train/0001``."""
    return f"{Domain(domain).value}/{split}/{image_id}"


@dataclass
class DatasetManifest:
    """Split bookkeeping for both domains."""
    train_x: list[str] = field(default_factory=list)
    train_y: list[str] = field(default_factory=list)
    test_x: list[str] = field(default_factory=list)
    test_y: list[str] = field(default_factory=list)
    image_size: int = CANVAS_SIZE
    processed_dir: str = ""
    detection_failures: list[str] = field(default_factory=list)

    def __post_init__(self):
        for domain in ("x", "y"):
            overlap = set(self.ids("train", domain)) & set(self.ids("test", domain))
            if overlap:
                raise DatasetError(
                    f"Train/test overlap in domain {domain}: {', '.join(sorted(overlap)[:5])}"
                )

    def ids(self, split: str, domain: Domain | str) -> list[str]:
        return getattr(self, f"{split}_{Domain(domain).value}")

    @property
    def counts(self) -> dict[str, int]:
        return {
            "train_x": len(self.train_x),
            "train_y": len(self.train_y),
            "test_x": len(self.test_x),
            "test_y": len(self.test_y),
        }

    @property
    def test_pairs(self) -> list[tuple[str, str]]:
        """Every (x, y) test combination."""
        return [(x, y) for x in self.test_x for y in self.test_y]

    def processed_path(self, domain: Domain | str, split: str, image_id: str) -> Path:
        return Path(self.processed_dir) / Domain(domain).value / split / f"{image_id}.png"

    def to_dict(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "image_size": self.image_size,
            "processed_dir": self.processed_dir,
            "counts": self.counts,
            "train_x": self.train_x,
            "train_y": self.train_y,
            "test_x": self.test_x,
            "test_y": self.test_y,
            "detection_failures": self.detection_failures,
        }

    def save(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        if not path.exists():
            raise DatasetError(f"Manifest not found: {path} (run preprocess first)")
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if data.get("schema") != MANIFEST_SCHEMA:
            raise DatasetError(f"Unsupported manifest schema in {path}: {data.get('schema')}")
        manifest = cls(
            train_x=data["train_x"],
            train_y=data["train_y"],
            test_x=data["test_x"],
            test_y=data["test_y"],
            image_size=data.get("image_size", CANVAS_SIZE),
            processed_dir=data.get("processed_dir", ""),
            detection_failures=data.get("detection_failures", []),
        )
        if manifest.counts != data.get("counts", manifest.counts):
            raise DatasetError(f"Manifest counts do not match id lists in {path}")
        return manifest


def list_split_images(root: Path, domain: Domain | str, split: str) -> list[Path]:
    """Image files of ``root/<domain>/<split>`` sorted by name."""
    directory = root / Domain(domain).value / split
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def scan_dataset(root: Path) -> DatasetManifest:
    """Build a manifest from the ``data/{x,y}/{train,test}`` layout."""
    if not root.is_dir():
        raise DatasetError(f"Dataset directory not found: {root}")

    splits: dict[str, list[str]] = {}
    for domain in Domain:
        for split in SPLITS:
            ids = [p.stem for p in list_split_images(root, domain, split)]
            if len(ids) != len(set(ids)):
                raise DatasetError(f"Duplicate image ids in {root / domain.value / split}")
            splits[f"{split}_{domain.value}"] = ids

    for domain in Domain:
        if not splits[f"train_{domain.value}"] and not splits[f"test_{domain.value}"]:
            raise DatasetError(f"No images found for domain '{domain.value}' under {root}")

    return DatasetManifest(**splits)


def load_crop_boxes(path: Optional[Path]) -> dict[str, list[int]]:
    """Crop boxes keyed by ``image_key`` (or bare id); missing file means none."""
    if path is None:
        return {}
    if not path.exists():
        raise DatasetError(f"Crop box file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return {k: list(v) for k, v in json.load(f).items()}
