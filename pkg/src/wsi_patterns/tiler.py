"""Sliding-window patch coordinates for crops and whole slides."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import PatchGeometry, WsiPatternsError

log = logging.getLogger(__name__)


class RegionTooSmall(WsiPatternsError, ValueError):
    pass


class NoTilableCrops(WsiPatternsError, ValueError):
    pass


def stride_for_overlap(window: int, overlap_fraction) -> int:
    """Stride that leaves ``overlap_fraction`` of the window shared between neighbours.

    Rounds half up, so (224, 1/5) gives 179.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    frac = Fraction(overlap_fraction).limit_denominator(10**9)
    if not (0 <= frac < 1):
        raise ValueError(f"overlap fraction {overlap_fraction} outside [0, 1)")
    exact = window * (1 - frac)
    return max(1, int(exact + Fraction(1, 2)))


@dataclass(frozen=True)
class TilerConfig:
    window: int = 224
    overlap_fraction: Fraction = Fraction(1, 5)
    stride_override: Optional[int] = None
    clamp_final: bool = True
    # speed-only skip of near-white windows; None disables it
    max_mean_luminance: Optional[float] = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        object.__setattr__(self, "overlap_fraction", Fraction(self.overlap_fraction).limit_denominator(10**9))
        if self.stride_override is not None and not (1 <= self.stride_override <= self.window):
            raise ValueError(f"stride {self.stride_override} outside [1, {self.window}]")
        stride_for_overlap(self.window, self.overlap_fraction)

    @property
    def stride(self) -> int:
        if self.stride_override is not None:
            return self.stride_override
        return stride_for_overlap(self.window, self.overlap_fraction)

    @classmethod
    def with_stride(cls, window: int, stride: int, clamp_final: bool = True) -> "TilerConfig":
        return cls(window=window, stride_override=stride, clamp_final=clamp_final)

    def to_json(self) -> dict:
        return {
            "window": self.window,
            "overlap_fraction": str(self.overlap_fraction),
            "stride": self.stride_override,
            "clamp_final": self.clamp_final,
            "max_mean_luminance": self.max_mean_luminance,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TilerConfig":
        return cls(
            window=int(data.get("window", 224)),
            overlap_fraction=Fraction(str(data.get("overlap_fraction", "1/5"))),
            stride_override=data.get("stride"),
            clamp_final=bool(data.get("clamp_final", True)),
            max_mean_luminance=data.get("max_mean_luminance"),
        )


def axis_positions(extent: int, window: int, stride: int, clamp_final: bool = True) -> list:
    if extent < window:
        raise RegionTooSmall(f"extent {extent} is smaller than the {window} px window")
    positions = list(range(0, extent - window + 1, stride))
    if clamp_final and positions[-1] + window < extent:
        positions.append(extent - window)
    return positions


def _axis_count(extent: int, window: int, stride: int, clamp_final: bool) -> int:
    if extent < window:
        raise RegionTooSmall(f"extent {extent} is smaller than the {window} px window")
    slack = extent - window
    n = slack // stride + 1
    if clamp_final and slack % stride:
        n += 1
    return n


def tile_region(width: int, height: int, config: TilerConfig = TilerConfig()) -> list:
    """Row-major list of windows covering a ``width`` x ``height`` region."""
    w = config.window
    if width < w or height < w:
        raise RegionTooSmall(f"region {width}x{height} is smaller than the {w} px window")
    xs = axis_positions(width, w, config.stride, config.clamp_final)
    ys = axis_positions(height, w, config.stride, config.clamp_final)
    return [PatchGeometry(x, y, w) for y in ys for x in xs]


def expected_patch_count(width: int, height: int, config: TilerConfig = TilerConfig()) -> int:
    w, s, clamp = config.window, config.stride, config.clamp_final
    if width < w or height < w:
        raise RegionTooSmall(f"region {width}x{height} is smaller than the {w} px window")
    return _axis_count(width, w, s, clamp) * _axis_count(height, w, s, clamp)


def _total_count(dims, window, stride, clamp_final) -> int:
    total = 0
    for width, height in dims:
        total += _axis_count(width, window, stride, clamp_final) * _axis_count(height, window, stride, clamp_final)
    return total


def balanced_stride(crop_dims: Sequence, window: int, target_count: int, clamp_final: bool = False) -> int:
    """Largest stride whose tiling of all crops yields at least ``target_count`` patches.

    Crops smaller than the window are skipped. Returns 1 when even stride 1
    falls short. Patch count is non-increasing in stride, so the first stride
    meeting the target while scanning down from ``window`` is the answer.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    usable = [(int(w), int(h)) for w, h in crop_dims if w >= window and h >= window]
    skipped = len(crop_dims) - len(usable)
    if not usable:
        raise NoTilableCrops(f"all {len(crop_dims)} crops are smaller than the {window} px window")
    if skipped:
        log.warning("skipping %d crops smaller than the %d px window", skipped, window)
    lo, hi = 1, window
    if _total_count(usable, window, hi, clamp_final) >= target_count:
        return hi
    if _total_count(usable, window, lo, clamp_final) < target_count:
        return 1
    # invariant: count(lo) >= target > count(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _total_count(usable, window, mid, clamp_final) >= target_count:
            lo = mid
        else:
            hi = mid
    return lo


def is_background(patch: np.ndarray, max_mean_luminance: float) -> bool:
    """True for near-white windows (glass). ``patch`` is uint8 or float in [0, 1]."""
    arr = np.asarray(patch, dtype=np.float64)
    if np.asarray(patch).dtype == np.uint8:
        arr = arr / 255.0
    luminance = arr[..., :3] @ np.array([0.299, 0.587, 0.114])
    return float(luminance.mean()) > max_mean_luminance


def tile_image(image: np.ndarray, config: TilerConfig = TilerConfig()) -> list:
    """Tile an HxWxC image, honouring the optional luminance skip."""
    height, width = image.shape[:2]
    geoms = tile_region(width, height, config)
    if config.max_mean_luminance is None:
        return geoms
    return [
        g for g in geoms
        if not is_background(image[g.y:g.y + g.side, g.x:g.x + g.side], config.max_mean_luminance)
    ]


def crop_patch(image: np.ndarray, geometry: PatchGeometry) -> np.ndarray:
    g = geometry
    return image[g.y:g.y + g.side, g.x:g.x + g.side]


def patch_count_summary(counts: Iterable[int]) -> dict:
    counts = np.asarray(list(counts), dtype=np.float64)
    if counts.size == 0:
        return {"slides": 0, "mean": 0.0, "median": 0.0, "std": 0.0}
    return {
        "slides": int(counts.size),
        "mean": float(counts.mean()),
        "median": float(np.median(counts)),
        "std": float(counts.std()),
    }
