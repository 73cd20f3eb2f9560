"""Mask overlays and labelled comparison grids rendered with Pillow."""

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .landmarks import LandmarkSet, MaskBundle

MASK_COLORS = {
    "eye": (230, 50, 50),
    "nose": (50, 200, 80),
    "lip": (60, 90, 230),
    "head": (240, 200, 40),
}


class GridRenderer:
    """Lays out square tiles with a caption strip above each column."""

    def __init__(self, tile_size: int = 256, padding: int = 4, caption_height: int = 18):
        self.tile_size = tile_size
        self.padding = padding
        self.caption_height = caption_height
        self.bg_color = (245, 245, 245)  # light gray
        self.text_color = (0, 0, 0)
        self.font = ImageFont.load_default()

    def _tile(self, pixels: np.ndarray | Image.Image) -> Image.Image:
        img = pixels if isinstance(pixels, Image.Image) else Image.fromarray(np.asarray(pixels, dtype=np.uint8))
        if img.size != (self.tile_size, self.tile_size):
            img = img.resize((self.tile_size, self.tile_size), Image.Resampling.BILINEAR)
        return img.convert("RGB")

    def _draw_centered_text(self, draw: ImageDraw.ImageDraw, text: str, x0: int, y: int, width: int):
        bbox = draw.textbbox((0, 0), text, font=self.font)
        text_width = bbox[2] - bbox[0]
        draw.text((x0 + (width - text_width) // 2, y), text, font=self.font, fill=self.text_color)

    def render(
        self,
        rows: Sequence[Sequence[np.ndarray | Image.Image]],
        column_labels: Optional[Sequence[str]] = None,
    ) -> Image.Image:
        """Grid of ``rows``; short rows leave their trailing cells empty."""
        if not rows or not any(rows):
            raise ValueError("Nothing to render")
        columns = max(len(r) for r in rows)

        header = self.caption_height if column_labels else 0
        step = self.tile_size + self.padding
        width = self.padding + columns * step
        height = header + self.padding + len(rows) * step
        canvas = Image.new("RGB", (width, height), self.bg_color)
        draw = ImageDraw.Draw(canvas)

        if column_labels:
            for c, label in enumerate(column_labels):
                self._draw_centered_text(draw, label, self.padding + c * step, 3, self.tile_size)

        for r, row in enumerate(rows):
            for c, pixels in enumerate(row):
                canvas.paste(self._tile(pixels), (self.padding + c * step, header + self.padding + r * step))
        return canvas


def mask_overlay(
    pixels: np.ndarray,
    masks: MaskBundle,
    landmarks: Optional[LandmarkSet] = None,
    alpha: float = 0.45,
) -> Image.Image:
    """Blend each mask in its colour over the image, optionally marking the 68 points."""
    out = pixels.astype(np.float32).copy()
    for name, mask in (
        ("head", masks.head_mask),
        ("eye", masks.eye_mask),
        ("nose", masks.nose_mask),
        ("lip", masks.lip_mask),
    ):
        selected = mask.astype(bool)
        out[selected] = (1 - alpha) * out[selected] + alpha * np.array(MASK_COLORS[name], dtype=np.float32)
    img = Image.fromarray(np.clip(out, 0, 255).astype(np.uint8))

    if landmarks is not None:
        draw = ImageDraw.Draw(img)
        for x, y in landmarks.points:
            draw.point((float(x), float(y)), fill=(255, 255, 255))
    return img


def side_by_side(content: np.ndarray, style: np.ndarray, result: np.ndarray, tile_size: int = 256) -> Image.Image:
    return GridRenderer(tile_size=tile_size).render([[content, style, result]], ["content", "style", "result"])


def save_figure(img: Image.Image, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}")
    img.save(tmp, format="PNG")
    tmp.replace(path)
    return path
