"""Procedurally drawn face-like dataset with known 68-point landmarks.

ID photos (X) get a plain backdrop, a hair band and a shirt collar; portraits
(Y) get parchment texture, a black Gat (brim plus crown) and a painted robe.
Both are drawn from the same landmark template, jittered per image, so the
annotation file is exact by construction.
"""

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter
from pydantic import BaseModel, ConfigDict, Field

from .data import Domain, image_key
from .landmarks import EYEBROWS, JAW, LEFT_EYE, LIPS, NOSE, NUM_LANDMARKS, RIGHT_EYE

logger = logging.getLogger(__name__)


class SyntheticConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_x: int = Field(default=8, ge=1)
    train_y: int = Field(default=8, ge=1)
    test_x: int = Field(default=2, ge=1)
    test_y: int = Field(default=2, ge=1)
    raw_size: int = Field(default=96, ge=32)
    seed: int = 0


def _ellipse_points(cx: float, cy: float, rx: float, ry: float, angles: np.ndarray) -> np.ndarray:
    return np.column_stack([cx + rx * np.cos(angles), cy + ry * np.sin(angles)])


def landmark_template() -> np.ndarray:
    """68 points in unit coordinates (x right, y down) following the iBUG layout."""
    points = np.zeros((NUM_LANDMARKS, 2), dtype=np.float64)

    # Jaw: left temple, around the chin, right temple
    theta = np.linspace(np.pi, 0.0, 17)
    points[JAW] = np.column_stack([0.5 + 0.22 * np.cos(theta), 0.50 + 0.28 * np.sin(theta)])

    brow = np.linspace(0.0, 1.0, 5)
    arch = 0.02 * np.sin(np.pi * brow)
    points[17:22] = np.column_stack([0.30 + 0.14 * brow, 0.40 - arch])
    points[22:27] = np.column_stack([0.56 + 0.14 * brow, 0.40 - arch])

    points[27:31] = np.column_stack([np.full(4, 0.5), np.linspace(0.45, 0.57, 4)])
    points[31:36] = np.column_stack([np.linspace(0.45, 0.55, 5), [0.61, 0.62, 0.63, 0.62, 0.61]])

    eye_angles = np.deg2rad([180, 240, 300, 0, 60, 120])
    points[LEFT_EYE] = _ellipse_points(0.38, 0.47, 0.055, 0.022, eye_angles)
    points[RIGHT_EYE] = _ellipse_points(0.62, 0.47, 0.055, 0.022, eye_angles)

    outer = np.deg2rad(np.linspace(180, 180 + 360, 12, endpoint=False))
    inner = np.deg2rad(np.linspace(180, 180 + 360, 8, endpoint=False))
    points[48:60] = _ellipse_points(0.5, 0.70, 0.09, 0.035, outer)
    points[60:68] = _ellipse_points(0.5, 0.70, 0.06, 0.014, inner)
    return points


def jittered_landmarks(rng: np.random.Generator, raw_size: int) -> np.ndarray:
    """Template scaled and shifted by a small random similarity, in pixels."""
    scale = rng.uniform(0.9, 1.05)
    shift = rng.uniform(-0.03, 0.03, size=2)
    points = (landmark_template() - 0.5) * scale + 0.5 + shift
    return points * raw_size


def _poly(points: np.ndarray) -> list[tuple[float, float]]:
    return [(float(x), float(y)) for x, y in points]


def _draw_face(draw: ImageDraw.ImageDraw, lm: np.ndarray, skin: tuple, portrait: bool):
    jaw = lm[JAW]
    brows = lm[EYEBROWS]
    top = brows[:, 1].min() - (jaw[8, 1] - brows[:, 1].min()) * 0.35
    draw.ellipse((jaw[:, 0].min(), top, jaw[:, 0].max(), jaw[8, 1]), fill=skin)

    brow_color = (40, 30, 25) if not portrait else (20, 20, 20)
    width = 1 if portrait else 2
    draw.line(_poly(lm[17:22]), fill=brow_color, width=width)
    draw.line(_poly(lm[22:27]), fill=brow_color, width=width)

    eye_color = (35, 25, 20) if not portrait else (15, 15, 15)
    draw.polygon(_poly(lm[LEFT_EYE]), fill=eye_color)
    draw.polygon(_poly(lm[RIGHT_EYE]), fill=eye_color)

    nose_shade = tuple(max(c - 45, 0) for c in skin)
    draw.line(_poly(lm[27:31]), fill=nose_shade, width=1)
    draw.polygon(_poly(lm[31:36]) + [(float(lm[30, 0]), float(lm[30, 1]))], fill=nose_shade)

    lip_color = (170, 60, 70) if not portrait else (150, 80, 70)
    draw.polygon(_poly(lm[48:60]), fill=lip_color)
    draw.line(_poly(lm[60:68]) + [_poly(lm[60:61])[0]], fill=(90, 30, 35), width=1)


def draw_photo(lm: np.ndarray, raw_size: int, rng: np.random.Generator) -> Image.Image:
    """ID-photo-like image: flat backdrop, hair above the brows, shirt at the bottom."""
    backdrop = tuple(int(v) for v in rng.integers(170, 235, size=3))
    img = Image.new("RGB", (raw_size, raw_size), backdrop)
    draw = ImageDraw.Draw(img)

    jaw = lm[JAW]
    brow_top = lm[EYEBROWS][:, 1].min()
    draw.rectangle((0, jaw[8, 1] - 2, raw_size, raw_size), fill=(40, 60, 110))

    skin = tuple(int(v) for v in rng.integers([200, 160, 130], [235, 200, 170]))
    _draw_face(draw, lm, skin, portrait=False)

    hair = tuple(int(v) for v in rng.integers(20, 70, size=3))
    draw.ellipse(
        (jaw[:, 0].min() - 2, brow_top - 0.24 * raw_size, jaw[:, 0].max() + 2, brow_top - 0.03 * raw_size),
        fill=hair,
    )
    return img


def draw_portrait(lm: np.ndarray, raw_size: int, rng: np.random.Generator) -> Image.Image:
    """Portrait-like image: parchment texture, Gat over the forehead, coloured robe."""
    parchment = np.array([225, 205, 165]) + rng.integers(-15, 15, size=3)
    grain = rng.normal(0, 8, size=(raw_size, raw_size, 1))
    background = np.clip(parchment[None, None, :] + grain, 0, 255).astype(np.uint8)
    img = Image.fromarray(background)
    draw = ImageDraw.Draw(img)

    jaw = lm[JAW]
    brow_top = lm[EYEBROWS][:, 1].min()
    robe = tuple(int(v) for v in rng.integers([60, 90, 120], [120, 150, 200]))
    draw.polygon(
        [(jaw[0, 0] - 0.1 * raw_size, raw_size), (jaw[8, 0], jaw[8, 1] - 2), (jaw[16, 0] + 0.1 * raw_size, raw_size)],
        fill=robe,
    )

    skin = tuple(int(v) for v in rng.integers([190, 150, 110], [220, 180, 140]))
    _draw_face(draw, lm, skin, portrait=True)

    # Gat: wide brim just above the brows, crown above it
    brim_y = brow_top - 0.06 * raw_size
    face_w = jaw[:, 0].max() - jaw[:, 0].min()
    cx = jaw[8, 0]
    draw.ellipse((cx - face_w, brim_y - 0.03 * raw_size, cx + face_w, brim_y + 0.03 * raw_size), fill=(25, 25, 25))
    draw.rectangle((cx - 0.3 * face_w, brim_y - 0.2 * raw_size, cx + 0.3 * face_w, brim_y), fill=(15, 15, 15))
    return img.filter(ImageFilter.SMOOTH)


def generate_synthetic_dataset(root: Path, cfg: SyntheticConfig = SyntheticConfig()) -> Path:
    """Write ``root/{x,y}/{train,test}/*.png`` and ``root/annotations.json``; returns the annotation path."""
    counts = {
        (Domain.X_PHOTO, "train"): cfg.train_x,
        (Domain.Y_PORTRAIT, "train"): cfg.train_y,
        (Domain.X_PHOTO, "test"): cfg.test_x,
        (Domain.Y_PORTRAIT, "test"): cfg.test_y,
    }
    annotations: dict[str, list[list[float]]] = {}
    for (domain, split), count in counts.items():
        directory = root / domain.value / split
        directory.mkdir(parents=True, exist_ok=True)
        for index in range(count):
            image_id = f"{split}_{index:04d}"
            rng = np.random.default_rng([cfg.seed, 0 if domain == Domain.X_PHOTO else 1, 0 if split == "train" else 1, index])
            lm = jittered_landmarks(rng, cfg.raw_size)
            draw = draw_photo if domain == Domain.X_PHOTO else draw_portrait
            draw(lm, cfg.raw_size, rng).save(directory / f"{image_id}.png")
            annotations[image_key(domain, split, image_id)] = lm.round(3).tolist()

    path = root / "annotations.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(annotations, f, indent=1)
    logger.info(f"Synthetic dataset written to {root} ({len(annotations)} images)")
    return path
