"""Synthetic slides with known pattern layout, for end-to-end checks.

A slide is a benign background overpainted by rectangles of flat class
colors (the same colors the oracle classifier reads) plus +-2 levels of
seeded pixel noise. The ground truth of a patch is the class covering most of
its pixels, ties going to the lower canonical index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .core import N_CLASSES, HistologicPattern, PatchGeometry, SlideLabel, WsiPatternsError, parse_pattern
from .gateway import DEFAULT_CLASS_COLORS
from .inference import DEFAULT_AGGREGATION, AggregationConfig, ClassCounts, aggregate
from .tiler import TilerConfig, tile_region


class RegionOutOfBounds(WsiPatternsError, ValueError):
    pass


class Region(NamedTuple):
    x: int
    y: int
    width: int
    height: int
    label: HistologicPattern


@dataclass(frozen=True)
class SyntheticSpec:
    width: int
    height: int
    regions: tuple = ()
    seed: int = 0
    noise: int = 2

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise RegionOutOfBounds(f"slide size {self.width}x{self.height} must be positive")
        regions = []
        for r in self.regions:
            if isinstance(r, Mapping):
                r = Region(int(r["x"]), int(r["y"]), int(r["width"]), int(r["height"]), parse_pattern(r["label"]))
            else:
                r = Region(int(r[0]), int(r[1]), int(r[2]), int(r[3]), parse_pattern(r[4]))
            if r.width <= 0 or r.height <= 0:
                raise RegionOutOfBounds(f"region {r} has non-positive size")
            if r.x < 0 or r.y < 0 or r.x + r.width > self.width or r.y + r.height > self.height:
                raise RegionOutOfBounds(f"region {tuple(r)} leaves the {self.width}x{self.height} slide")
            regions.append(r)
        object.__setattr__(self, "regions", tuple(regions))

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "noise": self.noise,
            "regions": [
                {"x": r.x, "y": r.y, "width": r.width, "height": r.height, "label": r.label.key}
                for r in self.regions
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SyntheticSpec":
        try:
            return cls(
                int(data["width"]),
                int(data["height"]),
                tuple(data.get("regions", ())),
                int(data.get("seed", 0)),
                int(data.get("noise", 2)),
            )
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, RegionOutOfBounds):
                raise
            raise RegionOutOfBounds(f"invalid synthetic spec: {err}") from None


def label_map(spec: SyntheticSpec) -> np.ndarray:
    """HxW array of canonical class indices; later regions paint over earlier ones."""
    out = np.full((spec.height, spec.width), int(HistologicPattern.BENIGN), dtype=np.uint8)
    for r in spec.regions:
        out[r.y:r.y + r.height, r.x:r.x + r.width] = int(r.label)
    return out


class GroundTruth:
    """Maps a patch geometry to its majority class."""

    def __init__(self, labels: np.ndarray):
        self.labels = labels

    def __call__(self, geometry: PatchGeometry) -> HistologicPattern:
        g = geometry
        window = self.labels[g.y:g.y + g.side, g.x:g.x + g.side]
        if window.shape != (g.side, g.side):
            raise RegionOutOfBounds(f"patch {g} leaves the slide")
        counts = np.bincount(window.ravel(), minlength=N_CLASSES)
        return HistologicPattern(int(np.argmax(counts)))


class SyntheticSlide(NamedTuple):
    image: np.ndarray
    ground_truth: GroundTruth


def generate_slide(spec: SyntheticSpec, colors: Mapping = DEFAULT_CLASS_COLORS) -> SyntheticSlide:
    labels = label_map(spec)
    palette = np.array([colors[HistologicPattern(k)] for k in range(N_CLASSES)], dtype=np.int16)
    image = palette[labels]
    if spec.noise:
        rng = np.random.default_rng(spec.seed)
        image = image + rng.integers(-spec.noise, spec.noise + 1, size=image.shape, dtype=np.int16)
    image = np.clip(image, 0, 255).astype(np.uint8)
    return SyntheticSlide(image, GroundTruth(labels))


def ground_truth_counts(spec: SyntheticSpec, tiler: TilerConfig = TilerConfig()) -> ClassCounts:
    truth = GroundTruth(label_map(spec))
    counts = [0] * N_CLASSES
    for g in tile_region(spec.width, spec.height, tiler):
        counts[truth(g)] += 1
    return ClassCounts(tuple(counts))


def expected_slide_label(
    spec: SyntheticSpec,
    tiler: TilerConfig = TilerConfig(),
    config: AggregationConfig = DEFAULT_AGGREGATION,
) -> SlideLabel:
    """The label a noise-free classifier with zero thresholds must produce."""
    return aggregate(ground_truth_counts(spec, tiler), config)


def striped_spec(width: int, height: int, shares: Mapping, seed: int = 0) -> SyntheticSpec:
    """Full-height vertical stripes, left to right, with widths proportional to ``shares``.

    Shares need not sum to 1; any remainder on the right stays benign.
    """
    regions = []
    x = 0
    for label, share in shares.items():
        w = int(round(width * float(share)))
        w = min(w, width - x)
        if w > 0:
            regions.append(Region(x, 0, w, height, parse_pattern(label)))
            x += w
    return SyntheticSpec(width, height, tuple(regions), seed)
