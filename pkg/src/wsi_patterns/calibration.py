"""Per-class confidence thresholds by coordinate-wise grid search on a dev set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import N_CLASSES, PATTERNS, LengthMismatch, SlideLabel, WsiPatternsError, parse_pattern
from .inference import (
    DEFAULT_AGGREGATION,
    AggregationConfig,
    ThresholdVector,
    aggregate,
    filter_predictions,
    prediction_arrays,
)

# scores within this distance of the best count as tied
TIE_TOLERANCE = 1e-12


class EmptyDevSet(WsiPatternsError, ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    values: tuple = tuple(i / 20 for i in range(20))
    passes: int = 2
    class_order: tuple = PATTERNS

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError("grid needs at least one value")
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("grid values must lie in [0, 1]")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("grid values must be strictly increasing")
        order = tuple(parse_pattern(c) for c in self.class_order)
        if sorted(order) != list(PATTERNS):
            raise ValueError("class_order must be a permutation of the six classes")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "class_order", order)


@dataclass(frozen=True)
class DevSlide:
    slide_id: str
    predictions: tuple
    reference: SlideLabel

    def __post_init__(self):
        object.__setattr__(self, "predictions", tuple(self.predictions))
        if not self.predictions:
            raise ValueError(f"dev slide {self.slide_id} has no predictions")


class TraceEntry(NamedTuple):
    pass_index: int
    pattern: object
    value: float
    objective: float


class CalibrationResult(NamedTuple):
    thresholds: ThresholdVector
    trace: list
    objective: float


def slide_correspondence(model: SlideLabel, reference: SlideLabel) -> float:
    """Half predominant match, half Jaccard index of the full label sets."""
    match = 1.0 if model.predominant == reference.predominant else 0.0
    a, b = model.label_set, reference.label_set
    union = a | b
    jaccard = 1.0 if not union else len(a & b) / len(union)
    return 0.5 * match + 0.5 * jaccard


def calibration_objective(model_labels: Sequence[SlideLabel], references: Sequence[SlideLabel]) -> float:
    if len(model_labels) != len(references):
        raise LengthMismatch(f"{len(model_labels)} model labels vs {len(references)} references")
    if not model_labels:
        raise LengthMismatch("no slides to compare")
    return sum(slide_correspondence(m, r) for m, r in zip(model_labels, references)) / len(references)


class _SlideConfidences:
    """Sorted confidences of each class's predictions, for counting survivors of any threshold."""

    def __init__(self, slide: DevSlide):
        top, conf = prediction_arrays(slide.predictions)
        self.by_class = [np.sort(conf[top == k]) for k in range(N_CLASSES)]

    def count(self, k: int, thresholds) -> np.ndarray:
        arr = self.by_class[k]
        return arr.size - np.searchsorted(arr, thresholds, side="left")


def grid_search_thresholds(
    dev: Sequence[DevSlide],
    grid: GridSpec = GridSpec(),
    config: AggregationConfig = DEFAULT_AGGREGATION,
) -> CalibrationResult:
    """Coordinate ascent over per-class thresholds, starting from all zeros.

    Each sweep visits the classes in ``grid.class_order``; for a class, every
    grid value is scored with the other thresholds fixed and the best value
    (smallest on ties) is kept. Patch predictions are classified once; only
    the counting and aggregation are repeated.
    """
    if not dev:
        raise EmptyDevSet("development set is empty")
    slides = [_SlideConfidences(s) for s in dev]
    refs = [s.reference for s in dev]
    values = np.asarray(grid.values)
    tau = [0.0] * N_CLASSES
    trace = []
    objective = None
    for pass_index in range(grid.passes):
        for pattern in grid.class_order:
            k = int(pattern)
            fixed = [
                [s.count(j, tau[j]) if j != k else 0 for j in range(N_CLASSES)]
                for s in slides
            ]
            varying = [s.count(k, values) for s in slides]
            scores = []
            for vi, v in enumerate(values):
                total = 0.0
                for base, var, ref in zip(fixed, varying, refs):
                    counts = list(base)
                    counts[k] = int(var[vi])
                    total += slide_correspondence(aggregate(counts, config), ref)
                score = total / len(slides)
                scores.append(score)
                trace.append(TraceEntry(pass_index, pattern, float(v), score))
            top = max(scores)
            best = next(i for i, sc in enumerate(scores) if sc >= top - TIE_TOLERANCE)
            tau[k] = float(values[best])
            objective = scores[best]
    return CalibrationResult(ThresholdVector(tuple(tau)), trace, objective)


def evaluate_thresholds(dev: Sequence[DevSlide], tau: ThresholdVector, config: AggregationConfig = DEFAULT_AGGREGATION) -> float:
    """Objective of ``tau`` recomputed from scratch through filter + aggregate."""
    labels = [aggregate(filter_predictions(s.predictions, tau)[1], config) for s in dev]
    return calibration_objective(labels, [s.reference for s in dev])
