"""Whole-slide inference from patch predictions.

Pipeline per slide: classify every window, discard predictions whose
confidence is below their class threshold, then turn the surviving class
counts into a label:

1. drop benign and every class with fewer than ``minor_floor`` (5%) of the
   retained predictions,
2. the most frequent survivor is predominant (ties: lower canonical index),
3. every other survivor is a minor pattern.

If nothing survives the slide is Indeterminate.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    CANCEROUS,
    INDETERMINATE,
    N_CLASSES,
    PATTERN_KEYS,
    HistologicPattern,
    PatchPrediction,
    SlideLabel,
    WsiPatternsError,
)
from .gateway import classify_batch
from .tiler import TilerConfig, crop_patch, tile_image

BENIGN = int(HistologicPattern.BENIGN)


class InvalidThresholds(WsiPatternsError, ValueError):
    pass


class EmptyPredictions(WsiPatternsError, ValueError):
    pass


@dataclass(frozen=True)
class ThresholdVector:
    tau: tuple = (0.0,) * N_CLASSES

    def __post_init__(self):
        tau = tuple(float(t) for t in self.tau)
        if len(tau) != N_CLASSES:
            raise InvalidThresholds(f"expected {N_CLASSES} thresholds, got {len(tau)}")
        for t in tau:
            if not 0.0 <= t <= 1.0:
                raise InvalidThresholds(f"threshold {t} outside [0, 1]")
        object.__setattr__(self, "tau", tau)

    def __getitem__(self, pattern) -> float:
        return self.tau[int(pattern)]

    def replace(self, pattern, value: float) -> "ThresholdVector":
        tau = list(self.tau)
        tau[int(pattern)] = value
        return ThresholdVector(tuple(tau))

    @classmethod
    def uniform(cls, value: float) -> "ThresholdVector":
        return cls((value,) * N_CLASSES)

    def to_json(self) -> dict:
        return {k: t for k, t in zip(PATTERN_KEYS, self.tau)}

    @classmethod
    def from_json(cls, data: dict) -> "ThresholdVector":
        missing = [k for k in PATTERN_KEYS if k not in data]
        if missing:
            raise InvalidThresholds(f"thresholds missing class key(s): {', '.join(missing)}")
        extra = sorted(set(data) - set(PATTERN_KEYS))
        if extra:
            raise InvalidThresholds(f"unknown class key(s) in thresholds: {', '.join(extra)}")
        try:
            return cls(tuple(float(data[k]) for k in PATTERN_KEYS))
        except (TypeError, ValueError) as err:
            raise InvalidThresholds(str(err)) from None


ZERO_THRESHOLDS = ThresholdVector()


@dataclass(frozen=True)
class ClassCounts:
    counts: tuple = (0,) * N_CLASSES

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != N_CLASSES or any(c < 0 for c in counts):
            raise ValueError(f"counts must be {N_CLASSES} non-negative integers, got {self.counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def retained_total(self) -> int:
        return sum(self.counts)

    def __getitem__(self, pattern) -> int:
        return self.counts[int(pattern)]

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(tuple(a + b for a, b in zip(self.counts, other.counts)))

    def to_json(self) -> dict:
        return {k: c for k, c in zip(PATTERN_KEYS, self.counts)}


@dataclass(frozen=True)
class AggregationConfig:
    minor_floor: Fraction = Fraction(1, 20)
    drop_benign: bool = True
    # whether benign predictions count toward the minor-floor denominator
    benign_in_total: bool = True
    _num: int = field(init=False, repr=False, compare=False)
    _den: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        floor = Fraction(self.minor_floor).limit_denominator(10**9)
        if not 0 <= floor < 1:
            raise ValueError(f"minor_floor {self.minor_floor} outside [0, 1)")
        object.__setattr__(self, "minor_floor", floor)
        object.__setattr__(self, "_num", floor.numerator)
        object.__setattr__(self, "_den", floor.denominator)

    def to_json(self) -> dict:
        return {
            "minor_floor": str(self.minor_floor),
            "drop_benign": self.drop_benign,
            "benign_in_total": self.benign_in_total,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AggregationConfig":
        return cls(
            minor_floor=Fraction(str(data.get("minor_floor", "1/20"))),
            drop_benign=bool(data.get("drop_benign", True)),
            benign_in_total=bool(data.get("benign_in_total", True)),
        )


DEFAULT_AGGREGATION = AggregationConfig()

# every possible label, indexed by predominant class and a bitmask of minors
_LABELS = [
    [
        None if mask & (1 << p) else SlideLabel(HistologicPattern(p), frozenset(HistologicPattern(k) for k in range(5) if mask >> k & 1))
        for mask in range(32)
    ]
    for p in range(5)
]


def aggregate(counts, config: AggregationConfig = DEFAULT_AGGREGATION) -> SlideLabel:
    """Slide label from retained per-class counts (a :class:`ClassCounts` or six ints).

    The minor floor is compared in exact integer arithmetic:
    ``count * den < num * total`` drops the class.
    """
    c = counts.counts if isinstance(counts, ClassCounts) else counts
    num, den = config._num, config._den
    total = c[0] + c[1] + c[2] + c[3] + c[4]
    if config.benign_in_total:
        total += c[5]
    limit = num * total
    best = -1
    best_n = 0
    mask = 0
    for k in range(5):
        n = c[k]
        if n and n * den >= limit:
            mask |= 1 << k
            if n > best_n:
                best = k
                best_n = n
    if best < 0:
        return INDETERMINATE
    if not config.drop_benign:
        b = c[BENIGN]
        if b and b * den >= limit and b > best_n:
            return INDETERMINATE
    return _LABELS[best][mask & ~(1 << best)]


def prediction_arrays(preds: Sequence[PatchPrediction]):
    """(top_class, confidence) arrays for vectorized filtering."""
    top = np.fromiter((int(p.top_class) for p in preds), dtype=np.int64, count=len(preds))
    conf = np.fromiter((p.confidence for p in preds), dtype=np.float64, count=len(preds))
    return top, conf


def count_retained(top: np.ndarray, conf: np.ndarray, tau) -> ClassCounts:
    tau = np.asarray(tau.tau if isinstance(tau, ThresholdVector) else tau, dtype=np.float64)
    keep = conf >= tau[top]
    return ClassCounts(tuple(np.bincount(top[keep], minlength=N_CLASSES).tolist()))


def filter_predictions(preds: Sequence[PatchPrediction], tau: ThresholdVector = ZERO_THRESHOLDS):
    """Keep predictions whose confidence is at least their top class's threshold."""
    t = tau.tau
    counts = [0] * N_CLASSES
    retained = []
    for p in preds:
        k = p.top_class
        if p.confidence >= t[k]:
            retained.append(p)
            counts[k] += 1
    return retained, ClassCounts(tuple(counts))


class SlideInference(NamedTuple):
    label: SlideLabel
    retained: list
    predictions: list
    counts: ClassCounts


def slide_draw_base(slide_id: str) -> int:
    """Per-slide offset for oracle draw indices, so slides get independent noise."""
    return zlib.crc32(slide_id.encode("utf-8")) << 32


def predict_patches(image, geometries, classifier, batch_size: int = 256, parallelism: int = 1, slide_id: str = "") -> list:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    base = slide_draw_base(slide_id)
    chunks = [list(range(i, min(i + batch_size, len(geometries)))) for i in range(0, len(geometries), batch_size)]

    def run(idx):
        patches = [crop_patch(image, geometries[i]) for i in idx]
        return classify_batch(classifier, patches, [base + i for i in idx])

    if parallelism > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            vectors = [v for chunk in pool.map(run, chunks) for v in chunk]
    else:
        vectors = [v for idx in chunks for v in run(idx)]
    return [PatchPrediction(g, v) for g, v in zip(geometries, vectors)]


def infer_slide(
    image: np.ndarray,
    classifier,
    tau: ThresholdVector = ZERO_THRESHOLDS,
    config: AggregationConfig = DEFAULT_AGGREGATION,
    tiler: TilerConfig = TilerConfig(),
    batch_size: int = 256,
    parallelism: int = 1,
    slide_id: str = "",
) -> SlideInference:
    """Tile, classify, filter and aggregate one slide.

    Errors from the tiler or classifier are re-raised with ``slide_id``
    attached. The result does not depend on ``batch_size`` or ``parallelism``.
    """
    try:
        geometries = tile_image(np.asarray(image), tiler)
        preds = predict_patches(image, geometries, classifier, batch_size, parallelism, slide_id)
    except WsiPatternsError as err:
        err.slide_id = slide_id
        if slide_id and err.args and not str(err.args[0]).startswith(f"slide {slide_id}"):
            err.args = (f"slide {slide_id}: {err.args[0]}",) + err.args[1:]
        raise
    retained, counts = filter_predictions(preds, tau)
    return SlideInference(aggregate(counts, config), retained, preds, counts)


def label_from_predictions(preds, tau=ZERO_THRESHOLDS, config=DEFAULT_AGGREGATION) -> SlideLabel:
    return aggregate(filter_predictions(preds, tau)[1], config)


def mean_probabilities(preds: Sequence[PatchPrediction]) -> tuple:
    # fsum keeps the mean independent of patch order
    n = len(preds)
    return tuple(math.fsum(p.probs.p[k] for p in preds) / n for k in range(N_CLASSES))


def baseline_aggregate(preds: Sequence[PatchPrediction], tau: ThresholdVector = ZERO_THRESHOLDS) -> SlideLabel:
    """Multi-label extension of probability averaging over all patches.

    Predominant is the cancerous class with the highest mean probability;
    minors are the other cancerous classes whose mean is positive and reaches
    their threshold. Indeterminate when benign has the highest mean and no
    cancerous mean qualifies that way.
    """
    if not preds:
        raise EmptyPredictions("baseline aggregation needs at least one prediction")
    mean = mean_probabilities(preds)
    cancer = [int(c) for c in CANCEROUS]
    best = max(cancer, key=lambda k: mean[k])
    qualifies = {k for k in cancer if mean[k] > 0.0 and mean[k] >= tau[k]}
    if all(mean[BENIGN] > mean[k] for k in cancer) and not qualifies:
        return INDETERMINATE
    minors = frozenset(HistologicPattern(k) for k in qualifies if k != best)
    return SlideLabel(HistologicPattern(best), minors)
