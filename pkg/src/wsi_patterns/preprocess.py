"""Channel statistics, per-patch normalization and training augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .core import HistologicPattern, WsiPatternsError, parse_pattern
from .tiler import NoTilableCrops, TilerConfig, balanced_stride, tile_region

log = logging.getLogger(__name__)

EPS = 1e-6


class EmptyDataset(WsiPatternsError, ValueError):
    pass


def as_float_image(patch) -> np.ndarray:
    """uint8 images are scaled to [0, 1]; float images pass through."""
    arr = np.asarray(patch)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64, copy=False)


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple
    std: tuple
    dataset_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("channel stats need three means and three stds")
        if any(s < 0 for s in self.std):
            raise ValueError("standard deviations must be non-negative")

    def to_json(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "dataset_id": self.dataset_id}

    @classmethod
    def from_json(cls, data) -> "ChannelStats":
        return cls(tuple(data["mean"]), tuple(data["std"]), str(data.get("dataset_id", "")))


class ChannelAccumulator:
    """Streaming per-channel mean/variance; ``merge`` combines partial results (Chan et al.)."""

    def __init__(self, channels: int = 3):
        self.n = 0
        self.mean = np.zeros(channels)
        self.m2 = np.zeros(channels)

    def update(self, patch) -> "ChannelAccumulator":
        px = as_float_image(patch).reshape(-1, self.mean.size)
        k = px.shape[0]
        if k == 0:
            return self
        # moments about the first pixel keep constant input exact (std 0, mean unchanged)
        shift = px[0]
        dev = px - shift
        dev_mean = dev.mean(axis=0)
        batch_mean = shift + dev_mean
        batch_m2 = ((dev - dev_mean) ** 2).sum(axis=0)
        self._combine(k, batch_mean, batch_m2)
        return self

    def merge(self, other: "ChannelAccumulator") -> "ChannelAccumulator":
        out = ChannelAccumulator(self.mean.size)
        out.n, out.mean, out.m2 = self.n, self.mean.copy(), self.m2.copy()
        out._combine(other.n, other.mean, other.m2)
        return out

    def _combine(self, k, mean_b, m2_b):
        if k == 0:
            return
        n = self.n + k
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (k / n)
        self.m2 = self.m2 + m2_b + delta ** 2 * (self.n * k / n)
        self.n = n

    def result(self, dataset_id: str = "") -> ChannelStats:
        if self.n == 0:
            raise EmptyDataset("no pixels accumulated")
        std = np.sqrt(np.maximum(self.m2 / self.n, 0.0))
        return ChannelStats(tuple(self.mean), tuple(std), dataset_id)


def dataset_channel_stats(patch_stream: Iterable, dataset_id: str = "") -> ChannelStats:
    """Population mean and std per RGB channel over every pixel of every patch."""
    acc = ChannelAccumulator()
    for patch in patch_stream:
        acc.update(patch)
    if acc.n == 0:
        raise EmptyDataset("patch stream is empty")
    return acc.result(dataset_id)


def normalize(patch, stats: ChannelStats) -> np.ndarray:
    arr = as_float_image(patch)
    mean = np.asarray(stats.mean)
    std = np.maximum(np.asarray(stats.std), EPS)
    return (arr - mean) / std


def denormalize(normed, stats: ChannelStats) -> np.ndarray:
    std = np.maximum(np.asarray(stats.std), EPS)
    return np.asarray(normed) * std + np.asarray(stats.mean)


@dataclass(frozen=True)
class AugmentSpec:
    brightness_delta: float = 0.2
    contrast_delta: float = 0.2
    saturation_delta: float = 0.2
    hue_delta: float = 0.05
    rotations: tuple = (0, 90, 180, 270)
    flip_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("brightness_delta", "contrast_delta", "saturation_delta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not 0.0 <= self.hue_delta <= 0.5:
            raise ValueError(f"hue_delta={self.hue_delta} outside [0, 0.5]")
        rotations = tuple(sorted({int(r) % 360 for r in self.rotations}))
        if not rotations or any(r % 90 for r in rotations):
            raise ValueError(f"rotations must be a non-empty subset of 0/90/180/270, got {self.rotations}")
        object.__setattr__(self, "rotations", rotations)
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability outside [0, 1]")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentSpec":
        return cls(0.0, 0.0, 0.0, 0.0, (0,), 0.0, seed)


_LUMA = np.array([0.299, 0.587, 0.114])


def _grayscale(img: np.ndarray) -> np.ndarray:
    return (img @ _LUMA)[..., None]


def augment(patch, spec: AugmentSpec, draw_index: int) -> np.ndarray:
    """Color jitter, one rotation and random flips, fully determined by (seed, draw_index).

    Jitter order is brightness, contrast, saturation, hue; each factor is drawn
    uniformly within +-delta. Rotation angles are clockwise. The output has the
    input's dtype (uint8 in, uint8 out).
    """
    src = np.asarray(patch)
    if src.ndim != 3 or src.shape[0] != src.shape[1]:
        raise ValueError(f"augment expects a square HxWxC patch, got shape {src.shape}")
    rng = np.random.default_rng([int(spec.seed) & (2**64 - 1), int(draw_index)])
    # every draw is taken unconditionally so the stream layout never depends on the augment settings
    b = rng.uniform(-1.0, 1.0) * spec.brightness_delta
    c = rng.uniform(-1.0, 1.0) * spec.contrast_delta
    s = rng.uniform(-1.0, 1.0) * spec.saturation_delta
    h = rng.uniform(-1.0, 1.0) * spec.hue_delta
    rotation = spec.rotations[rng.integers(len(spec.rotations))]
    hflip = rng.random() < spec.flip_probability
    vflip = rng.random() < spec.flip_probability

    img = as_float_image(src)
    rgb, extra = img[..., :3], img[..., 3:]
    if b:
        rgb = np.clip(rgb * (1.0 + b), 0.0, 1.0)
    if c:
        mean_gray = float(_grayscale(rgb).mean())
        rgb = np.clip((rgb - mean_gray) * (1.0 + c) + mean_gray, 0.0, 1.0)
    if s:
        gray = _grayscale(rgb)
        rgb = np.clip(gray + (rgb - gray) * (1.0 + s), 0.0, 1.0)
    if h:
        hsv = rgb_to_hsv(rgb)
        hsv[..., 0] = (hsv[..., 0] + h) % 1.0
        rgb = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    img = np.concatenate([rgb, extra], axis=-1) if extra.size else rgb

    if rotation:
        img = np.rot90(img, k=-(rotation // 90))
    if hflip:
        img = img[:, ::-1]
    if vflip:
        img = img[::-1]
    img = np.ascontiguousarray(img)

    if src.dtype == np.uint8:
        return np.rint(img * 255.0).astype(np.uint8)
    return img.astype(src.dtype, copy=False)


class ManifestEntry(NamedTuple):
    label: HistologicPattern
    crop_id: str
    x: int
    y: int
    side: int
    draw_index: int


def build_balanced_training_set(
    crops_by_class: Mapping,
    window: int,
    target_per_class: int,
    spec: AugmentSpec = AugmentSpec(),
) -> list:
    """Manifest of exactly ``target_per_class`` patches per class.

    Each class gets its own stride (the largest that reaches the target), so
    rare classes are tiled with more overlap. Classes still short after stride
    1 are topped up with augmented repeats: the k-th repeat of a raw patch
    carries ``draw_index`` k. Surplus raw patches are subsampled with a seeded
    draw. Geometry is in slide coordinates.
    """
    manifest = []
    for label in sorted((parse_pattern(k) for k in crops_by_class), key=int):
        crops = [c for c in crops_by_class.get(label, crops_by_class.get(label.key, ()))]
        dims = [(c.width, c.height) for c in crops]
        try:
            stride = balanced_stride(dims, window, target_per_class, clamp_final=False)
        except NoTilableCrops as err:
            raise NoTilableCrops(f"class {label.key}: {err}") from None
        cfg = TilerConfig.with_stride(window, stride, clamp_final=False)
        raw = []
        for crop in crops:
            if crop.width < window or crop.height < window:
                continue
            ox, oy = crop.rect[0], crop.rect[1]
            for g in tile_region(crop.width, crop.height, cfg):
                raw.append((crop.crop_id, ox + g.x, oy + g.y))
        if len(raw) > target_per_class:
            rng = np.random.default_rng([int(spec.seed) & (2**64 - 1), int(label)])
            keep = np.sort(rng.choice(len(raw), size=target_per_class, replace=False))
            raw = [raw[i] for i in keep]
        entries = [ManifestEntry(label, cid, x, y, window, 0) for cid, x, y in raw]
        i = 0
        while len(entries) < target_per_class:
            cid, x, y = raw[i % len(raw)]
            entries.append(ManifestEntry(label, cid, x, y, window, 1 + i // len(raw)))
            i += 1
        log.info("class %s: stride %d, %d raw, %d augmented", label.key, stride, len(raw), len(entries) - len(raw))
        manifest.extend(entries)
    return manifest
