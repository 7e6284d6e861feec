"""Overlay of color-coded dots on a downscaled slide, one dot per retained prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .core import CANCEROUS, PATTERNS, HistologicPattern, PatchPrediction, WsiPatternsError, parse_pattern

LEGEND_HEIGHT = 22

# colorblind-safe defaults
DEFAULT_COLORS = {
    HistologicPattern.LEPIDIC: (0, 158, 115, 255),
    HistologicPattern.ACINAR: (0, 114, 178, 255),
    HistologicPattern.PAPILLARY: (230, 159, 0, 255),
    HistologicPattern.MICROPAPILLARY: (213, 94, 0, 255),
    HistologicPattern.SOLID: (204, 121, 167, 255),
    HistologicPattern.BENIGN: (128, 128, 128, 255),
}


class OutOfBounds(WsiPatternsError, ValueError):
    pass


class BadScale(WsiPatternsError, ValueError):
    pass


@dataclass(frozen=True)
class Palette:
    color: Mapping = field(default_factory=lambda: dict(DEFAULT_COLORS))
    dot_radius_fraction: float = 0.3
    draw_benign: bool = False

    def __post_init__(self):
        colors = {}
        for k, v in dict(self.color).items():
            rgba = tuple(int(c) for c in v)
            if len(rgba) == 3:
                rgba += (255,)
            colors[parse_pattern(k)] = rgba
        missing = [p.key for p in PATTERNS if p not in colors]
        if missing:
            raise ValueError(f"palette has no color for {', '.join(missing)}")
        cancer = [colors[p][:3] for p in CANCEROUS]
        if len(set(cancer)) != len(cancer):
            raise ValueError("cancerous pattern colors must be pairwise distinct")
        if self.dot_radius_fraction <= 0:
            raise ValueError("dot_radius_fraction must be positive")
        object.__setattr__(self, "color", colors)

    @classmethod
    def from_json(cls, data: dict) -> "Palette":
        kwargs = {}
        if "colors" in data:
            merged = dict(DEFAULT_COLORS)
            merged.update({parse_pattern(k): tuple(v) for k, v in data["colors"].items()})
            kwargs["color"] = merged
        for key in ("dot_radius_fraction", "draw_benign"):
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)


def _to_pil(slide) -> Image.Image:
    if isinstance(slide, Image.Image):
        return slide.convert("RGB")
    arr = np.asarray(slide)
    if arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    return Image.fromarray(np.ascontiguousarray(arr[..., :3]))


def dot_specs(retained: Sequence[PatchPrediction], width: int, height: int, palette: Palette, scale: float) -> list:
    """(center_x, center_y, radius, pattern) for every dot to draw, in input order."""
    dots = []
    for pred in retained:
        g = pred.geometry
        if not g.fits_within(width, height):
            raise OutOfBounds(f"patch ({g.x}, {g.y}, {g.side}) lies outside the {width}x{height} slide")
        if pred.top_class is HistologicPattern.BENIGN and not palette.draw_benign:
            continue
        cx, cy = g.center
        dots.append((cx * scale, cy * scale, palette.dot_radius_fraction * g.side * scale, pred.top_class))
    return dots


def _paint_dot(canvas: np.ndarray, cx: float, cy: float, radius: float, rgba) -> None:
    # coverage ramps linearly over one pixel at the rim; centers use pixel-index coordinates
    h, w = canvas.shape[:2]
    x0, x1 = max(0, int(np.floor(cx - radius - 1))), min(w, int(np.ceil(cx + radius + 2)))
    y0, y1 = max(0, int(np.floor(cy - radius - 1))), min(h, int(np.ceil(cy + radius + 2)))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dist = np.hypot(xs - cx, ys - cy)
    cover = np.clip(radius + 0.5 - dist, 0.0, 1.0) * (rgba[3] / 255.0)
    region = canvas[y0:y1, x0:x1]
    color = np.asarray(rgba[:3], dtype=np.float64)
    region[:] = region * (1.0 - cover[..., None]) + color * cover[..., None]


def _legend(width: int, palette: Palette) -> Image.Image:
    strip = Image.new("RGB", (max(width, 1), LEGEND_HEIGHT), (255, 255, 255))
    draw = ImageDraw.Draw(strip)
    font = ImageFont.load_default()
    shown = list(CANCEROUS) + ([HistologicPattern.BENIGN] if palette.draw_benign else [])
    x = 4
    for p in shown:
        draw.rectangle([x, 5, x + 11, 16], fill=palette.color[p][:3])
        x += 15
        draw.text((x, 5), p.key, fill=(0, 0, 0), font=font)
        x += int(draw.textlength(p.key, font=font)) + 10
    return strip


def render_overlay(slide, retained: Sequence[PatchPrediction], palette: Palette = Palette(), scale: float = 1.0) -> Image.Image:
    """Downscaled slide with a filled dot at each retained patch center and a legend strip below.

    Benign predictions are skipped unless ``palette.draw_benign``. Output is
    a pure function of the inputs.
    """
    if not (0.0 < scale <= 1.0):
        raise BadScale(f"scale {scale} outside (0, 1]")
    img = _to_pil(slide)
    width, height = img.size
    dots = dot_specs(retained, width, height, palette, scale)
    out_w, out_h = max(1, round(width * scale)), max(1, round(height * scale))
    if (out_w, out_h) != (width, height):
        img = img.resize((out_w, out_h), Image.Resampling.BOX)
    canvas = np.asarray(img, dtype=np.float64).copy()
    for cx, cy, radius, pattern in dots:
        _paint_dot(canvas, cx, cy, radius, palette.color[pattern])
    body = Image.fromarray(np.rint(canvas).astype(np.uint8))
    out = Image.new("RGB", (out_w, out_h + LEGEND_HEIGHT), (255, 255, 255))
    out.paste(body, (0, 0))
    out.paste(_legend(out_w, palette), (0, out_h))
    return out


def dot_sidecar(retained: Sequence[PatchPrediction], width: int, height: int, palette: Palette = Palette(), scale: float = 1.0) -> list:
    """JSON-ready list of drawn dots: output-pixel center and class."""
    return [
        {"x": cx, "y": cy, "class": pattern.key}
        for cx, cy, _, pattern in dot_specs(retained, width, height, palette, scale)
    ]
