"""Readers and writers for the package's CSV/JSON file formats.

All writers go through a temp file plus rename so a crash never leaves a
half-written output. Floats are written with ``repr`` so files round-trip
exactly and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .core import (
    PATTERN_KEYS,
    AnnotationCrop,
    PatchGeometry,
    PatchPrediction,
    ProbabilityVector,
    SlideLabel,
    WsiPatternsError,
    parse_pattern,
)
from .preprocess import ManifestEntry

PREDICTION_COLUMNS = ("slide_id", "x", "y") + tuple(f"p_{k}" for k in PATTERN_KEYS)


class MalformedInput(WsiPatternsError, ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, data) -> Path:
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_png(path, image) -> Path:
    """Image (PIL or uint8 array) as PNG; PIL writes no timestamps, so output is byte-stable."""
    if not isinstance(image, Image.Image):
        image = Image.fromarray(np.asarray(image, dtype=np.uint8))
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return atomic_write_bytes(path, buf.getvalue())


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise MalformedInput(f"{path}: invalid JSON ({err})") from None


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write_text(path, _csv_text(header, rows))


def read_csv_rows(path, required: Sequence[str]) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in required if c not in fields]
        if missing:
            raise MalformedInput(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


# manifests and annotations


def read_manifest(path) -> list:
    """``slide_id,path`` rows; relative paths resolve against the manifest's folder."""
    rows = read_csv_rows(path, ("slide_id", "path"))
    base = Path(path).parent
    out = []
    seen = set()
    for i, row in enumerate(rows, start=2):
        sid, p = (row.get("slide_id") or "").strip(), (row.get("path") or "").strip()
        if not sid or not p:
            raise MalformedInput(f"{path}:{i}: empty slide_id or path")
        if sid in seen:
            raise MalformedInput(f"{path}:{i}: duplicate slide_id {sid}")
        seen.add(sid)
        target = Path(p)
        out.append((sid, target if target.is_absolute() else base / target))
    return out


def read_annotations(path) -> list:
    rows = read_csv_rows(path, ("slide_id", "x", "y", "width", "height", "label"))
    out = []
    for i, row in enumerate(rows, start=2):
        try:
            out.append(AnnotationCrop.from_json(row | {k: int(row[k]) for k in ("x", "y", "width", "height")}))
        except (ValueError, KeyError) as err:
            raise MalformedInput(f"{path}:{i}: {err}") from None
    return out


# patch coordinates and predictions


def write_coordinates(path, slide_id: str, geometries: Iterable[PatchGeometry]) -> Path:
    return write_csv(path, ("slide_id", "x", "y", "side"), ((slide_id, g.x, g.y, g.side) for g in geometries))


def read_coordinates(path) -> list:
    rows = read_csv_rows(path, ("slide_id", "x", "y", "side"))
    return [(r["slide_id"], PatchGeometry(int(r["x"]), int(r["y"]), int(r["side"]))) for r in rows]


def write_predictions(path, slide_id: str, preds: Iterable[PatchPrediction]) -> Path:
    rows = ((slide_id, p.geometry.x, p.geometry.y) + tuple(p.probs.p) for p in preds)
    return write_csv(path, PREDICTION_COLUMNS, rows)


def read_predictions(path, side: int = 224) -> dict:
    """Predictions CSV as ``{slide_id: [PatchPrediction, ...]}``; the CSV carries no side, so it is passed in."""
    rows = read_csv_rows(path, PREDICTION_COLUMNS)
    out = {}
    for i, row in enumerate(rows, start=2):
        try:
            geom = PatchGeometry(int(row["x"]), int(row["y"]), side)
            probs = ProbabilityVector(tuple(float(row[c]) for c in PREDICTION_COLUMNS[3:]))
        except (ValueError, TypeError) as err:
            raise MalformedInput(f"{path}:{i}: {err}") from None
        out.setdefault(row["slide_id"], []).append(PatchPrediction(geom, probs))
    return out


# labels


def labels_to_json(labels: Mapping) -> dict:
    return {sid: label.to_json() for sid, label in labels.items()}


def write_labels(path, labels: Mapping) -> Path:
    return write_json(path, labels_to_json(labels))


def read_labels(path) -> dict:
    """Slide labels JSON: ``{slide_id: {"predominant": ..., "minors": [...]}}``."""
    data = read_json(path)
    if not isinstance(data, dict):
        raise MalformedInput(f"{path}: expected an object keyed by slide id")
    out = {}
    for sid, entry in data.items():
        try:
            out[sid] = SlideLabel.from_json(entry)
        except (WsiPatternsError, AttributeError, TypeError) as err:
            raise MalformedInput(f"{path}: slide {sid}: {err}") from None
    return out


# calibration and training outputs


def write_trace(path, trace) -> Path:
    return write_csv(path, ("pass", "class", "value", "objective"),
                     ((t.pass_index, t.pattern.key, t.value, t.objective) for t in trace))


def write_training_manifest(path, entries) -> Path:
    return write_csv(path, ("class", "crop_id", "x", "y", "side", "draw_index"),
                     ((e.label.key, e.crop_id, e.x, e.y, e.side, e.draw_index) for e in entries))


def read_training_manifest(path) -> list:
    rows = read_csv_rows(path, ("class", "crop_id", "x", "y", "side", "draw_index"))
    return [
        ManifestEntry(parse_pattern(r["class"]), r["crop_id"], int(r["x"]), int(r["y"]), int(r["side"]), int(r["draw_index"]))
        for r in rows
    ]


def write_roc(path, roc) -> Path:
    return write_csv(path, ("threshold", "fpr", "tpr"),
                     ((float(t), float(f), float(p)) for t, f, p in zip(roc.thresholds, roc.fpr, roc.tpr)))


def write_ground_truth(path, rows) -> Path:
    """``x,y,side,label`` rows from (PatchGeometry, pattern) pairs."""
    return write_csv(path, ("x", "y", "side", "label"), ((g.x, g.y, g.side, p.key) for g, p in rows))
