"""Shared value types for the slide-classification pipeline.

Everything here is immutable. The six patch classes have one canonical
order (lepidic, acinar, papillary, micropapillary, solid, benign) which every
CSV column, probability vector and tie-break in the package follows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional, Sequence

N_CLASSES = 6
SUM_TOLERANCE = 1e-6


class WsiPatternsError(Exception):
    """Base class for all errors raised by this package."""


class UnknownPattern(WsiPatternsError, ValueError):
    pass


class InvalidLabel(WsiPatternsError, ValueError):
    pass


class InvalidProbabilities(WsiPatternsError, ValueError):
    pass


class LengthMismatch(WsiPatternsError, ValueError):
    pass


class HistologicPattern(IntEnum):
    LEPIDIC = 0
    ACINAR = 1
    PAPILLARY = 2
    MICROPAPILLARY = 3
    SOLID = 4
    BENIGN = 5

    @property
    def is_cancerous(self) -> bool:
        return self is not HistologicPattern.BENIGN

    @property
    def key(self) -> str:
        """Lowercase name used in every file format."""
        return self.name.lower()

    def __str__(self) -> str:
        return self.key


PATTERNS = tuple(HistologicPattern)
CANCEROUS = tuple(p for p in PATTERNS if p.is_cancerous)
PATTERN_KEYS = tuple(p.key for p in PATTERNS)


def parse_pattern(name: str) -> HistologicPattern:
    """Case-insensitive lookup of a class by its canonical name."""
    if isinstance(name, HistologicPattern):
        return name
    try:
        return HistologicPattern[str(name).strip().upper()]
    except KeyError:
        raise UnknownPattern(f"unknown histologic pattern {name!r}") from None


@dataclass(frozen=True)
class ProbabilityVector:
    """Six class probabilities in canonical order."""

    p: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.p)
        if len(values) != N_CLASSES:
            raise InvalidProbabilities(f"expected {N_CLASSES} probabilities, got {len(values)}")
        for v in values:
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise InvalidProbabilities(f"probability {v!r} outside [0, 1]")
        total = math.fsum(values)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvalidProbabilities(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "p", values)

    @classmethod
    def renormalized(cls, values: Sequence[float]) -> "ProbabilityVector":
        """Validate, then divide out a sum deviation of at most 1e-6."""
        values = [float(v) for v in values]
        if len(values) != N_CLASSES:
            raise InvalidProbabilities(f"expected {N_CLASSES} probabilities, got {len(values)}")
        if any(math.isnan(v) or v < 0.0 for v in values):
            raise InvalidProbabilities(f"negative or NaN probability in {values!r}")
        total = math.fsum(values)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvalidProbabilities(f"probabilities sum to {total!r}, not 1")
        return cls(tuple(min(v / total, 1.0) for v in values))

    @classmethod
    def one_hot(cls, pattern: HistologicPattern) -> "ProbabilityVector":
        return cls(tuple(1.0 if i == pattern else 0.0 for i in range(N_CLASSES)))

    def __getitem__(self, pattern) -> float:
        return self.p[int(pattern)]

    def __iter__(self):
        return iter(self.p)

    def __len__(self) -> int:
        return N_CLASSES

    def argmax(self) -> HistologicPattern:
        # max() returns the first maximal element, i.e. the lowest canonical index
        best = max(range(N_CLASSES), key=self.p.__getitem__)
        return HistologicPattern(best)

    def to_json(self) -> list:
        return list(self.p)

    @classmethod
    def from_json(cls, data) -> "ProbabilityVector":
        return cls(tuple(data))


@dataclass(frozen=True)
class PatchGeometry:
    x: int
    y: int
    side: int = 224

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"patch origin ({self.x}, {self.y}) is negative")
        if self.side <= 0:
            raise ValueError(f"patch side must be positive, got {self.side}")

    @property
    def center(self) -> tuple:
        return (self.x + self.side / 2, self.y + self.side / 2)

    def fits_within(self, width: int, height: int) -> bool:
        return self.x + self.side <= width and self.y + self.side <= height

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "side": self.side}

    @classmethod
    def from_json(cls, data) -> "PatchGeometry":
        return cls(int(data["x"]), int(data["y"]), int(data["side"]))


@dataclass(frozen=True)
class PatchPrediction:
    """Classifier output for one patch; top class and confidence are derived."""

    geometry: PatchGeometry
    probs: ProbabilityVector
    top_class: HistologicPattern = field(init=False)
    confidence: float = field(init=False)

    def __post_init__(self):
        top = self.probs.argmax()
        object.__setattr__(self, "top_class", top)
        object.__setattr__(self, "confidence", self.probs[top])

    def to_json(self) -> dict:
        return {"geometry": self.geometry.to_json(), "probs": self.probs.to_json()}

    @classmethod
    def from_json(cls, data) -> "PatchPrediction":
        return cls(PatchGeometry.from_json(data["geometry"]), ProbabilityVector.from_json(data["probs"]))


def _sorted_patterns(patterns: Iterable[HistologicPattern]) -> list:
    return sorted(patterns, key=int)


@dataclass(frozen=True)
class SlideLabel:
    """Predominant plus minor cancerous patterns; ``predominant=None`` is Indeterminate."""

    predominant: Optional[HistologicPattern]
    minors: frozenset = frozenset()

    def __post_init__(self):
        minors = frozenset(HistologicPattern(m) for m in self.minors)
        object.__setattr__(self, "minors", minors)
        if self.predominant is None:
            if minors:
                raise InvalidLabel("an indeterminate label cannot carry minor patterns")
            return
        predominant = HistologicPattern(self.predominant)
        object.__setattr__(self, "predominant", predominant)
        if not predominant.is_cancerous:
            raise InvalidLabel("benign cannot be a predominant pattern")
        if HistologicPattern.BENIGN in minors:
            raise InvalidLabel("benign cannot be a minor pattern")
        if predominant in minors:
            raise InvalidLabel(f"{predominant.key} is both predominant and minor")

    @property
    def is_indeterminate(self) -> bool:
        return self.predominant is None

    @property
    def label_set(self) -> frozenset:
        """All patterns present on the slide (empty when indeterminate)."""
        if self.predominant is None:
            return frozenset()
        return self.minors | {self.predominant}

    def has(self, pattern: HistologicPattern) -> bool:
        return pattern == self.predominant or pattern in self.minors

    def to_json(self) -> dict:
        return {
            "predominant": None if self.predominant is None else self.predominant.key,
            "minors": [m.key for m in _sorted_patterns(self.minors)],
        }

    @classmethod
    def from_json(cls, data) -> "SlideLabel":
        pred = data.get("predominant")
        minors = data.get("minors") or []
        return cls(None if pred is None else parse_pattern(pred), frozenset(parse_pattern(m) for m in minors))

    def __str__(self) -> str:
        if self.predominant is None:
            return "indeterminate"
        if not self.minors:
            return self.predominant.key
        return f"{self.predominant.key} [{', '.join(m.key for m in _sorted_patterns(self.minors))}]"


INDETERMINATE = SlideLabel(None)


def normalize_slide_label(predominant, minors=()) -> SlideLabel:
    """Build a valid label, dropping benign and the predominant pattern from ``minors``."""
    minors = {parse_pattern(m) for m in minors}
    if predominant is None:
        minors.discard(HistologicPattern.BENIGN)
        if minors:
            raise InvalidLabel("minor patterns given without a predominant pattern")
        return INDETERMINATE
    predominant = parse_pattern(predominant)
    if not predominant.is_cancerous:
        raise InvalidLabel("benign cannot be a predominant pattern")
    minors.discard(predominant)
    minors.discard(HistologicPattern.BENIGN)
    return SlideLabel(predominant, frozenset(minors))


@dataclass(frozen=True)
class AnnotationCrop:
    """A pathologist-annotated rectangle; ``rect`` is (x, y, width, height) in slide pixels."""

    slide_id: str
    rect: tuple
    label: HistologicPattern

    def __post_init__(self):
        x, y, w, h = (int(v) for v in self.rect)
        if w <= 0 or h <= 0:
            raise ValueError(f"crop {self.slide_id} has non-positive size {w}x{h}")
        if x < 0 or y < 0:
            raise ValueError(f"crop {self.slide_id} has negative origin ({x}, {y})")
        object.__setattr__(self, "rect", (x, y, w, h))
        object.__setattr__(self, "label", parse_pattern(self.label))

    @property
    def crop_id(self) -> str:
        x, y, w, h = self.rect
        return f"{self.slide_id}:{x},{y},{w}x{h}"

    @property
    def width(self) -> int:
        return self.rect[2]

    @property
    def height(self) -> int:
        return self.rect[3]

    def to_json(self) -> dict:
        x, y, w, h = self.rect
        return {"slide_id": self.slide_id, "x": x, "y": y, "width": w, "height": h, "label": self.label.key}

    @classmethod
    def from_json(cls, data) -> "AnnotationCrop":
        rect = (data["x"], data["y"], data["width"], data["height"])
        return cls(str(data["slide_id"]), rect, parse_pattern(data["label"]))
