"""68-point facial landmarks and the binary masks used by land and head losses."""

import json
import logging
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Literal, Optional, Protocol, Sequence

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .data import CANVAS_SIZE, ImageSample, RawImage, SharpenConfig, sharpen_high_boost
from .errors import DatasetError, NoFaceDetected, ShapeError

logger = logging.getLogger(__name__)

NUM_LANDMARKS = 68

# Index ranges of the 68-point layout
JAW = slice(0, 17)
EYEBROWS = slice(17, 27)
NOSE = slice(27, 36)
LEFT_EYE = slice(36, 42)
RIGHT_EYE = slice(42, 48)
EYES = slice(36, 48)
LIPS = slice(48, 68)

COMPONENTS = ("eye", "nose", "lip")


class LandmarkConfig(BaseModel):
    """Landmark detection and mask construction settings."""
    model_config = ConfigDict(extra="forbid")

    detector: Literal["dlib", "annotations"] = "dlib"
    predictor_path: Optional[Path] = None
    annotations_path: Optional[Path] = None
    dilation_px: int = Field(default=3, ge=0)
    sweep_values: list[float] = Field(default_factory=lambda: [1.2, 1.5, 2.0])

    def resolved_predictor_path(self) -> Optional[Path]:
        if self.predictor_path is not None:
            return self.predictor_path
        env_path = os.environ.get("DLIB_PREDICTOR_PATH")
        return Path(env_path) if env_path else None


class MaskSource(str, Enum):
    CONTENT_X = "content_X"
    STYLE_Y = "style_Y"


@dataclass
class LandmarkSet:
    """68 (x, y) points in canvas pixel coordinates."""
    points: np.ndarray  # 68×2 float64
    image_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (NUM_LANDMARKS, 2):
            raise ShapeError(f"LandmarkSet needs {NUM_LANDMARKS}×2 points, got {self.points.shape}")

    @property
    def jaw(self) -> np.ndarray:
        return self.points[JAW]

    @property
    def eyebrows(self) -> np.ndarray:
        return self.points[EYEBROWS]

    @property
    def nose(self) -> np.ndarray:
        return self.points[NOSE]

    @property
    def eyes(self) -> np.ndarray:
        return self.points[EYES]

    @property
    def lips(self) -> np.ndarray:
        return self.points[LIPS]

    def clamped(self, width: int, height: int) -> "LandmarkSet":
        points = self.points.copy()
        points[:, 0] = np.clip(points[:, 0], 0, width - 1)
        points[:, 1] = np.clip(points[:, 1], 0, height - 1)
        return LandmarkSet(points=points, image_id=self.image_id)

    def translated(self, dx: float, dy: float) -> "LandmarkSet":
        return LandmarkSet(points=self.points + np.array([dx, dy]), image_id=self.image_id)

    def mirrored(self, width: int) -> "LandmarkSet":
        """Horizontal mirror of the point coordinates (indices keep their order)."""
        points = self.points.copy()
        points[:, 0] = (width - 1) - points[:, 0]
        return LandmarkSet(points=points, image_id=self.image_id)

    def to_list(self) -> list[list[float]]:
        return [[float(x), float(y)] for x, y in self.points]


@dataclass
class MaskBundle:
    """{0,1} masks for one image: eye/nose/lip components and the head band."""
    eye_mask: np.ndarray
    nose_mask: np.ndarray
    lip_mask: np.ndarray
    head_mask: np.ndarray
    source: MaskSource

    def __post_init__(self):
        shapes = {m.shape for m in (self.eye_mask, self.nose_mask, self.lip_mask, self.head_mask)}
        if len(shapes) != 1:
            raise ShapeError(f"Mask shapes differ: {shapes}")

    @classmethod
    def empty(cls, size: int, source: MaskSource) -> "MaskBundle":
        zeros = np.zeros((size, size), dtype=np.uint8)
        return cls(zeros, zeros.copy(), zeros.copy(), zeros.copy(), source)

    def stacked(self) -> np.ndarray:
        """4×H×W float32 array in the order eye, nose, lip, head."""
        return np.stack(
            [self.eye_mask, self.nose_mask, self.lip_mask, self.head_mask]
        ).astype(np.float32)

    def mirrored(self) -> "MaskBundle":
        return MaskBundle(
            eye_mask=self.eye_mask[:, ::-1].copy(),
            nose_mask=self.nose_mask[:, ::-1].copy(),
            lip_mask=self.lip_mask[:, ::-1].copy(),
            head_mask=self.head_mask[:, ::-1].copy(),
            source=self.source,
        )


def fill_convex_hull(points: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Filled convex hull of ``points`` rasterized on pixel centres.

    Collinear or coincident points fall back to a 1-px polyline.
    """
    height, width = shape
    mask = np.zeros((height, width), dtype=np.uint8)
    points = np.asarray(points, dtype=np.float64)

    try:
        hull = ConvexHull(points)
        vertices = points[hull.vertices]
        triangulation = Delaunay(vertices)
    except (QhullError, ValueError):
        polyline = np.rint(points).astype(np.int32).reshape(-1, 1, 2)
        cv2.polylines(mask, [polyline], isClosed=False, color=1, thickness=1)
        return mask

    x0 = max(int(np.floor(vertices[:, 0].min())), 0)
    x1 = min(int(np.ceil(vertices[:, 0].max())), width - 1)
    y0 = max(int(np.floor(vertices[:, 1].min())), 0)
    y1 = min(int(np.ceil(vertices[:, 1].max())), height - 1)
    if x1 < x0 or y1 < y0:
        return mask

    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    grid = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    inside = triangulation.find_simplex(grid) >= 0
    mask[y0:y1 + 1, x0:x1 + 1] = inside.reshape(ys.shape).astype(np.uint8)
    return mask


def dilate(mask: np.ndarray, dilation_px: int) -> np.ndarray:
    if dilation_px <= 0:
        return mask
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * dilation_px + 1, 2 * dilation_px + 1))
    return cv2.dilate(mask, kernel)


def build_component_masks(
    lm: LandmarkSet,
    dilation_px: int = 3,
    size: int = CANVAS_SIZE,
) -> dict[str, np.ndarray]:
    """Eye (both eyes unioned), nose and lip masks from filled, dilated hulls."""
    shape = (size, size)
    eye = np.maximum(
        fill_convex_hull(lm.points[LEFT_EYE], shape),
        fill_convex_hull(lm.points[RIGHT_EYE], shape),
    )
    masks = {
        "eye": eye,
        "nose": fill_convex_hull(lm.nose, shape),
        "lip": fill_convex_hull(lm.lips, shape),
    }
    return {name: dilate(mask, dilation_px) for name, mask in masks.items()}


def build_head_mask(lm: LandmarkSet, dims: tuple[int, int] = (CANVAS_SIZE, CANVAS_SIZE)) -> np.ndarray:
    """Full-width band of rows strictly above the highest eyebrow point."""
    height, width = dims
    mask = np.zeros((height, width), dtype=np.uint8)
    y_top = float(lm.eyebrows[:, 1].min())
    if y_top <= 0:
        logger.warning(f"Eyebrows touch the top border in {lm.image_id or 'image'}; head mask is empty")
        return mask
    rows = min(int(np.ceil(y_top)), height)
    mask[:rows, :] = 1
    return mask


def build_mask_bundle(
    lm: Optional[LandmarkSet],
    source: MaskSource,
    dilation_px: int = 3,
    size: int = CANVAS_SIZE,
) -> MaskBundle:
    """All masks for one image; missing landmarks give empty masks."""
    if lm is None:
        return MaskBundle.empty(size, source)
    components = build_component_masks(lm, dilation_px=dilation_px, size=size)
    return MaskBundle(
        eye_mask=components["eye"],
        nose_mask=components["nose"],
        lip_mask=components["lip"],
        head_mask=build_head_mask(lm, (size, size)),
        source=source,
    )


@dataclass
class CanvasTransform:
    """Maps source-image coordinates into the resized canvas frame."""
    offset_x: float = 0.0
    offset_y: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0

    @classmethod
    def for_crop_and_resize(
        cls, crop_box: Optional[Sequence[int]], source_size: tuple[int, int], canvas: int
    ) -> "CanvasTransform":
        width, height = source_size
        x0, y0 = 0, 0
        if crop_box is not None:
            x0, y0, x1, y1 = crop_box
            width, height = x1 - x0, y1 - y0
        return cls(offset_x=x0, offset_y=y0, scale_x=canvas / width, scale_y=canvas / height)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).copy()
        points[:, 0] = (points[:, 0] - self.offset_x) * self.scale_x
        points[:, 1] = (points[:, 1] - self.offset_y) * self.scale_y
        return points


class LandmarkDetector(Protocol):
    def detect(
        self, image: RawImage, image_id: str, transform: Optional[CanvasTransform] = None
    ) -> LandmarkSet:
        ...


class DlibLandmarkDetector:
    """dlib frontal face detector + 68-point shape predictor, loaded once."""

    def __init__(self, predictor_path: Path):
        try:
            import dlib
        except ImportError:
            raise ImportError(
                "dlib is required for landmark detection. "
                "Install with: uv sync --extra landmarks"
            )
        if not Path(predictor_path).exists():
            raise DatasetError(f"Shape predictor model not found: {predictor_path}")

        self._face_detector = dlib.get_frontal_face_detector()
        self._predictor = dlib.shape_predictor(str(predictor_path))
        logger.info(f"Loaded 68-point shape predictor from {predictor_path}")

    def detect(
        self, image: RawImage, image_id: str, transform: Optional[CanvasTransform] = None
    ) -> LandmarkSet:
        pixels = np.ascontiguousarray(image.pixels)
        faces = self._face_detector(pixels, 1)
        if len(faces) == 0:
            raise NoFaceDetected(image_id)

        face = max(faces, key=lambda r: r.width() * r.height())
        shape = self._predictor(pixels, face)
        points = np.array([[shape.part(i).x, shape.part(i).y] for i in range(NUM_LANDMARKS)], dtype=np.float64)
        return LandmarkSet(points=points, image_id=image_id).clamped(image.width, image.height)


class AnnotationLandmarkDetector:
    """Serves precomputed landmark annotations keyed by image key."""

    def __init__(self, annotations: dict[str, Optional[list]]):
        self.annotations = annotations

    @classmethod
    def from_file(cls, path: Path) -> "AnnotationLandmarkDetector":
        if not path.exists():
            raise DatasetError(f"Landmark annotation file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f))

    def detect(
        self, image: RawImage, image_id: str, transform: Optional[CanvasTransform] = None
    ) -> LandmarkSet:
        points = self.annotations.get(image_id)
        if points is None:
            raise NoFaceDetected(image_id)
        points = np.asarray(points, dtype=np.float64)
        if transform is not None:
            points = transform.apply(points)
        return LandmarkSet(points=points, image_id=image_id).clamped(image.width, image.height)


def create_detector(cfg: LandmarkConfig) -> LandmarkDetector:
    if cfg.detector == "annotations":
        if cfg.annotations_path is None:
            raise DatasetError("landmarks.annotations_path is required for the annotations detector")
        return AnnotationLandmarkDetector.from_file(cfg.annotations_path)

    predictor_path = cfg.resolved_predictor_path()
    if predictor_path is None:
        raise DatasetError("landmarks.predictor_path (or DLIB_PREDICTOR_PATH) is not set")
    return DlibLandmarkDetector(predictor_path)


def detect_landmarks(
    sample: ImageSample,
    sharpened: RawImage,
    detector: LandmarkDetector,
    transform: Optional[CanvasTransform] = None,
) -> LandmarkSet:
    """Detect landmarks on the sharpened 8-bit version of ``sample``."""
    size = sample.pixels.shape[0]
    if sharpened.pixels.shape[:2] != (size, size):
        raise ShapeError(
            f"Sharpened image {sharpened.pixels.shape[:2]} does not match sample canvas {size}×{size}"
        )
    return detector.detect(sharpened, sample.id, transform)


class LandmarkCache:
    """JSON store of landmarks per image key; ``None`` marks a failed detection."""

    def __init__(self, entries: Optional[dict[str, Optional[LandmarkSet]]] = None):
        self.entries: dict[str, Optional[LandmarkSet]] = dict(entries or {})

    def get(self, key: str) -> Optional[LandmarkSet]:
        return self.entries.get(key)

    def put(self, key: str, landmarks: Optional[LandmarkSet]):
        self.entries[key] = landmarks

    @property
    def failures(self) -> list[str]:
        return sorted(k for k, v in self.entries.items() if v is None)

    def save(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        data = {k: (v.to_list() if v is not None else None) for k, v in sorted(self.entries.items())}
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=1)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: Path) -> "LandmarkCache":
        if not path.exists():
            raise DatasetError(f"Landmark cache not found: {path} (run preprocess first)")
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls({k: (LandmarkSet(points=v, image_id=k) if v is not None else None) for k, v in data.items()})


def sweep_sharpening(
    images: Iterable[tuple[str, RawImage]],
    detector: LandmarkDetector,
    values: Sequence[float] = (1.2, 1.5, 2.0),
) -> tuple[float, dict[float, int]]:
    """Count successful detections per boost coefficient; returns (best A, counts)."""
    images = list(images)
    counts: dict[float, int] = {}
    for A in values:
        cfg = SharpenConfig(A=A)
        hits = 0
        for image_id, raw in images:
            try:
                detector.detect(sharpen_high_boost(raw, cfg), image_id)
                hits += 1
            except NoFaceDetected:
                pass
        counts[A] = hits
        logger.info(f"Sharpening A={A}: {hits}/{len(images)} faces detected")

    # Ties resolve to the earliest value in the sweep order
    best = max(values, key=lambda a: counts[a])
    return best, counts
