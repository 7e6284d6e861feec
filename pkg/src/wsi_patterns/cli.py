"""Command-line entry point: ``wsi-patterns <command> ...``.

Exit codes: 0 success, 2 unreadable input, 3 malformed or inconsistent
input, 4 classifier/worker failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import io as fio
from .calibration import DevSlide, GridSpec, grid_search_thresholds
from .core import PATTERNS, UnknownPattern
from .gateway import ProtocolViolation, WorkerFailed, handle_from_config
from .inference import (
    AggregationConfig,
    InvalidThresholds,
    ThresholdVector,
    baseline_aggregate,
    filter_predictions,
    infer_slide,
)
from .metrics import LabeledSeries, agreement_report
from .preprocess import AugmentSpec, ChannelAccumulator, build_balanced_training_set
from .synth import RegionOutOfBounds, SyntheticSpec, expected_slide_label, generate_slide
from .tiler import NoTilableCrops, RegionTooSmall, TilerConfig, patch_count_summary, tile_image, tile_region
from .visualizer import BadScale, OutOfBounds, Palette, dot_sidecar, render_overlay

log = logging.getLogger("wsi_patterns")

EXIT_UNREADABLE = 2
EXIT_MALFORMED = 3
EXIT_WORKER = 4

# whole-slide rasters routinely exceed PIL's decompression-bomb guard
Image.MAX_IMAGE_PIXELS = None


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class RunConfig:
    """Everything a command needs, from ``--config`` JSON plus command-line overrides."""

    def __init__(self, data: dict, args):
        self.data = data
        self.output = Path(args.output)
        self.parallelism = int(args.parallelism or data.get("parallelism", 1))
        self.seed = int(args.seed if args.seed is not None else data.get("seed", 0))
        if self.parallelism < 1:
            raise CliError(EXIT_MALFORMED, "parallelism must be >= 1")
        try:
            self.tiler = TilerConfig.from_json(data.get("tiler", {}))
            self.aggregation = AggregationConfig.from_json(data.get("aggregation", {}))
            grid = data.get("grid", {})
            self.grid = GridSpec(
                values=tuple(grid.get("values", GridSpec().values)),
                passes=int(grid.get("passes", 2)),
                class_order=tuple(grid.get("class_order", PATTERNS)),
            )
            self.palette = Palette.from_json(data.get("palette", {}))
            aug = dict(data.get("augment", {}))
            aug.setdefault("seed", self.seed)
            self.augment = AugmentSpec(**aug)
        except (ValueError, TypeError, KeyError) as err:
            raise CliError(EXIT_MALFORMED, f"invalid config: {err}") from None
        self.batch_size = int(data.get("batch_size", 256))
        self.classifier_config = dict(data.get("classifier", {"kind": "oracle"}))
        if self.classifier_config.get("kind", "oracle") == "oracle":
            self.classifier_config.setdefault("seed", self.seed)

    def classifier(self):
        try:
            return handle_from_config(self.classifier_config)
        except (ValueError, TypeError) as err:
            raise CliError(EXIT_MALFORMED, f"invalid classifier config: {err}") from None


def _require_files(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise CliError(EXIT_UNREADABLE, f"cannot read {p}: no such file")


def _load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (OSError, UnidentifiedImageError) as err:
        raise CliError(EXIT_UNREADABLE, f"cannot read image {path}: {err}") from None


def _image_size(path) -> tuple:
    try:
        with Image.open(path) as img:
            return img.size
    except (OSError, UnidentifiedImageError) as err:
        raise CliError(EXIT_UNREADABLE, f"cannot read image {path}: {err}") from None


def _read_manifest(path) -> list:
    _require_files(path)
    try:
        rows = fio.read_manifest(path)
    except fio.MalformedInput as err:
        raise CliError(EXIT_MALFORMED, str(err)) from None
    for _, p in rows:
        _require_files(p)
    return rows


def _read_thresholds(path) -> ThresholdVector:
    if path is None:
        return ThresholdVector()
    _require_files(path)
    try:
        return ThresholdVector.from_json(fio.read_json(path))
    except (InvalidThresholds, fio.MalformedInput) as err:
        raise CliError(EXIT_MALFORMED, f"{path}: {err}") from None


def _read_labels(path) -> dict:
    _require_files(path)
    try:
        return fio.read_labels(path)
    except fio.MalformedInput as err:
        raise CliError(EXIT_MALFORMED, str(err)) from None


class _Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self):
        self.paths = []

    def add(self, path):
        self.paths.append(Path(path))
        return path

    def remove_all(self):
        for p in self.paths:
            if p.exists():
                p.unlink()


# --------------------------------------------------------------------------
# commands


def cmd_tile(args, cfg: RunConfig) -> int:
    rows = _read_manifest(args.manifest)
    outputs = _Outputs()
    counts = []
    try:
        for slide_id, path in rows:
            if cfg.tiler.max_mean_luminance is None:
                width, height = _image_size(path)
                geoms = tile_region(width, height, cfg.tiler)
            else:
                geoms = tile_image(_load_image(path), cfg.tiler)
            outputs.add(fio.write_coordinates(cfg.output / f"{slide_id}.patches.csv", slide_id, geoms))
            counts.append(len(geoms))
            log.info("%s: %d patches", slide_id, len(geoms))
    except RegionTooSmall as err:
        outputs.remove_all()
        raise CliError(EXIT_MALFORMED, f"slide {slide_id}: {err}") from None
    except BaseException:
        outputs.remove_all()
        raise
    s = patch_count_summary(counts)
    print(f"tiled {s['slides']} slides: patches per slide mean={s['mean']:.1f} median={s['median']:.1f} std={s['std']:.1f}")
    return 0


def cmd_stats(args, cfg: RunConfig) -> int:
    rows = dict(_read_manifest(args.manifest))
    _require_files(args.annotations)
    try:
        crops = fio.read_annotations(args.annotations)
    except fio.MalformedInput as err:
        raise CliError(EXIT_MALFORMED, str(err)) from None
    if not crops:
        raise CliError(EXIT_MALFORMED, f"{args.annotations}: no crops annotated")
    acc = ChannelAccumulator()
    for slide_id in sorted({c.slide_id for c in crops}):
        if slide_id not in rows:
            raise CliError(EXIT_MALFORMED, f"annotated slide {slide_id} is not in the manifest")
        image = _load_image(rows[slide_id])
        h, w = image.shape[:2]
        for crop in (c for c in crops if c.slide_id == slide_id):
            x, y, cw, ch = crop.rect
            if x + cw > w or y + ch > h:
                raise CliError(EXIT_MALFORMED, f"crop {crop.crop_id} leaves the {w}x{h} slide")
            acc.update(image[y:y + ch, x:x + cw])
    stats = acc.result(Path(args.annotations).name)
    outputs = _Outputs()
    outputs.add(fio.write_json(cfg.output / "channel_stats.json", stats.to_json()))
    if args.balance_target:
        by_class = {}
        for crop in crops:
            by_class.setdefault(crop.label, []).append(crop)
        try:
            manifest = build_balanced_training_set(by_class, cfg.tiler.window, args.balance_target, cfg.augment)
        except NoTilableCrops as err:
            outputs.remove_all()
            raise CliError(EXIT_MALFORMED, str(err)) from None
        outputs.add(fio.write_training_manifest(cfg.output / "training_manifest.csv", manifest))
    print(f"mean={list(stats.mean)} std={list(stats.std)}")
    return 0


def _classify_dev_slide(slide_id, path, cfg, classifier, tau=None):
    if str(path).lower().endswith(".csv"):
        try:
            preds = fio.read_predictions(path, cfg.tiler.window)
        except fio.MalformedInput as err:
            raise CliError(EXIT_MALFORMED, str(err)) from None
        return preds.get(slide_id, [])
    image = _load_image(path)
    return infer_slide(image, classifier, tiler=cfg.tiler, batch_size=cfg.batch_size, slide_id=slide_id).predictions


def cmd_calibrate(args, cfg: RunConfig) -> int:
    rows = _read_manifest(args.dev_manifest)
    refs = _read_labels(args.references)
    if not rows:
        raise CliError(EXIT_MALFORMED, f"{args.dev_manifest}: development set is empty")
    missing = [sid for sid, _ in rows if sid not in refs]
    if missing:
        raise CliError(EXIT_MALFORMED, f"no reference label for slide(s): {', '.join(missing)}")
    dev = []
    with cfg.classifier() as classifier:
        for slide_id, path in rows:
            try:
                preds = _classify_dev_slide(slide_id, path, cfg, classifier)
            except (WorkerFailed, ProtocolViolation) as err:
                raise CliError(EXIT_WORKER, f"slide {slide_id}: {err}") from None
            except RegionTooSmall as err:
                raise CliError(EXIT_MALFORMED, str(err)) from None
            if not preds:
                raise CliError(EXIT_MALFORMED, f"slide {slide_id} has no patch predictions")
            dev.append(DevSlide(slide_id, preds, refs[slide_id]))
    result = grid_search_thresholds(dev, cfg.grid, cfg.aggregation)
    outputs = _Outputs()
    try:
        outputs.add(fio.write_json(cfg.output / "thresholds.json", result.thresholds.to_json()))
        outputs.add(fio.write_trace(cfg.output / "calibration_trace.csv", result.trace))
    except BaseException:
        outputs.remove_all()
        raise
    print(f"calibrated on {len(dev)} slides: objective={result.objective:.4f} thresholds={result.thresholds.to_json()}")
    return 0


def cmd_infer(args, cfg: RunConfig) -> int:
    rows = _read_manifest(args.manifest)
    tau = _read_thresholds(args.thresholds)
    baseline_tau = _read_thresholds(args.baseline_thresholds) if args.baseline_thresholds else None
    labels, baseline_labels = {}, {}
    failures = []

    def run(item):
        slide_id, path = item
        image = _load_image(path)
        start = time.perf_counter()
        result = infer_slide(image, classifier, tau, cfg.aggregation, cfg.tiler, cfg.batch_size, 1, slide_id)
        fio.write_predictions(cfg.output / f"{slide_id}.predictions.csv", slide_id, result.predictions)
        log.info("%s: %s from %d/%d retained patches in %.2fs", slide_id, result.label,
                 len(result.retained), len(result.predictions), time.perf_counter() - start)
        base = baseline_aggregate(result.predictions, baseline_tau) if baseline_tau is not None else None
        return slide_id, result.label, base

    with cfg.classifier() as classifier:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            futures = [pool.submit(run, item) for item in rows]
            for (slide_id, _), fut in zip(rows, futures):
                try:
                    sid, label, base = fut.result()
                except (WorkerFailed, ProtocolViolation) as err:
                    failures.append((EXIT_WORKER, f"slide {slide_id}: worker failed: {err}"))
                    continue
                except RegionTooSmall as err:
                    failures.append((EXIT_MALFORMED, str(err)))
                    continue
                labels[sid] = label
                if base is not None:
                    baseline_labels[sid] = base
    fio.write_labels(cfg.output / "slide_labels.json", labels)
    if baseline_tau is not None:
        fio.write_labels(cfg.output / "baseline_labels.json", baseline_labels)
    if failures:
        code = max(c for c, _ in failures)
        raise CliError(code, "; ".join(m for _, m in failures))
    print(f"inferred {len(labels)} slides")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    files = list(args.labels)
    if len(files) < 2:
        raise CliError(EXIT_MALFORMED, "evaluate needs at least two label files")
    series_data = [(Path(f).stem, _read_labels(f)) for f in files]
    baseline_data = (Path(args.baseline).stem, _read_labels(args.baseline)) if args.baseline else None
    ids = [name for name, _ in series_data]
    if len(set(ids)) != len(ids):
        raise CliError(EXIT_MALFORMED, f"label files must have distinct names, got {ids}")
    reference = set(series_data[0][1])
    for name, data in series_data[1:] + ([baseline_data] if baseline_data else []):
        if set(data) != reference:
            diff = sorted(reference ^ set(data))
            raise CliError(EXIT_MALFORMED, f"slide ids differ between {series_data[0][0]} and {name}: {', '.join(diff)}")
    if not reference:
        raise CliError(EXIT_MALFORMED, "label files contain no slides")
    slides = sorted(reference)
    series = [LabeledSeries(name, [data[s] for s in slides]) for name, data in series_data]
    baseline = LabeledSeries(baseline_data[0], [baseline_data[1][s] for s in slides]) if baseline_data else None
    try:
        report = agreement_report(series, baseline, args.model)
    except (KeyError, ValueError) as err:
        raise CliError(EXIT_MALFORMED, str(err)) from None
    table = report.table_text()
    outputs = _Outputs()
    try:
        outputs.add(fio.write_json(cfg.output / "agreement_report.json", report.to_json()))
        outputs.add(fio.atomic_write_text(cfg.output / "agreement_table.txt", table))
        outputs.add(fio.write_csv(cfg.output / "per_class_kappa.csv",
                                  ("annotator_a", "annotator_b") + tuple(p.key for p in PATTERNS[:5]),
                                  report.per_class_rows()))
    except BaseException:
        outputs.remove_all()
        raise
    print(table, end="")
    return 0


def cmd_visualize(args, cfg: RunConfig) -> int:
    _require_files(args.slide, args.predictions)
    tau = _read_thresholds(args.thresholds)
    image = _load_image(args.slide)
    try:
        by_slide = fio.read_predictions(args.predictions, cfg.tiler.window)
    except fio.MalformedInput as err:
        raise CliError(EXIT_MALFORMED, str(err)) from None
    slide_id = args.slide_id or Path(args.slide).stem
    if by_slide and slide_id not in by_slide:
        if args.slide_id is None and len(by_slide) == 1:
            slide_id = next(iter(by_slide))
        else:
            raise CliError(EXIT_MALFORMED, f"{args.predictions} has no rows for slide {slide_id}")

    retained, _ = filter_predictions(by_slide.get(slide_id, []), tau)
    try:
        overlay = render_overlay(image, retained, cfg.palette, args.scale)
        dots = dot_sidecar(retained, image.shape[1], image.shape[0], cfg.palette, args.scale)
    except (OutOfBounds, BadScale) as err:
        raise CliError(EXIT_MALFORMED, str(err)) from None
    outputs = _Outputs()
    try:
        outputs.add(fio.write_png(cfg.output / f"{slide_id}.overlay.png", overlay))
        outputs.add(fio.write_json(cfg.output / f"{slide_id}.dots.json", dots))
    except BaseException:
        outputs.remove_all()
        raise
    print(f"{slide_id}: drew {len(dots)} dots")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    _require_files(args.spec)
    try:
        data = fio.read_json(args.spec)
        spec = SyntheticSpec.from_json(data)
    except (fio.MalformedInput, RegionOutOfBounds, UnknownPattern) as err:
        raise CliError(EXIT_MALFORMED, f"{args.spec}: {err}") from None
    slide_id = str(data.get("slide_id") or Path(args.spec).stem)
    slide = generate_slide(spec)
    try:
        label = expected_slide_label(spec, cfg.tiler, cfg.aggregation)
        truth = [(g, slide.ground_truth(g)) for g in tile_region(spec.width, spec.height, cfg.tiler)]
    except RegionTooSmall as err:
        raise CliError(EXIT_MALFORMED, str(err)) from None
    outputs = _Outputs()
    try:
        outputs.add(fio.write_png(cfg.output / f"{slide_id}.png", slide.image))
        outputs.add(fio.write_ground_truth(cfg.output / f"{slide_id}.ground_truth.csv", truth))
        outputs.add(fio.write_labels(cfg.output / f"{slide_id}.expected.json", {slide_id: label}))
    except BaseException:
        outputs.remove_all()
        raise
    print(f"{slide_id}: {label}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--output", default=".", help="output directory (default: current)")
    common.add_argument("--parallelism", type=int, default=None, help="slides processed concurrently")
    common.add_argument("--seed", type=int, default=None, help="seed for oracle noise and augmentation")

    parser = argparse.ArgumentParser(prog="wsi-patterns", description="Histologic pattern classification of whole slides.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", parents=[common], help="write patch coordinates for each slide")
    p.add_argument("manifest", help="CSV with slide_id,path")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("stats", parents=[common], help="channel mean/std over annotated training crops")
    p.add_argument("annotations", help="CSV with slide_id,x,y,width,height,label")
    p.add_argument("manifest", help="CSV with slide_id,path")
    p.add_argument("--balance-target", type=int, default=0,
                   help="also write a class-balanced training manifest with this many patches per class")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("calibrate", parents=[common], help="grid-search per-class confidence thresholds")
    p.add_argument("dev_manifest", help="CSV with slide_id,path (slide image or predictions CSV)")
    p.add_argument("references", help="reference slide labels JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("infer", parents=[common], help="classify slides into predominant/minor patterns")
    p.add_argument("manifest", help="CSV with slide_id,path")
    p.add_argument("--thresholds", help="thresholds JSON (default: all zero)")
    p.add_argument("--baseline-thresholds", help="also write probability-averaging baseline labels")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common], help="agreement report across annotators and model")
    p.add_argument("labels", nargs="+", help="slide label JSON files; the last one is the model unless --model is given")
    p.add_argument("--baseline", help="baseline model labels, compared against the readers only")
    p.add_argument("--model", help="annotator id (file stem) of the model")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", parents=[common], help="overlay predicted patterns on a slide")
    p.add_argument("slide", help="slide image")
    p.add_argument("predictions", help="predictions CSV")
    p.add_argument("--thresholds", help="thresholds JSON (default: all zero)")
    p.add_argument("--scale", type=float, default=1.0, help="output scale in (0, 1]")
    p.add_argument("--slide-id", help="slide id in the predictions CSV (default: image file stem)")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic slide with ground truth")
    p.add_argument("spec", help="synthetic slide spec JSON")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("WSI_PATTERNS_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        data = {}
        if args.config:
            _require_files(args.config)
            data = fio.read_json(args.config)
        cfg = RunConfig(data, args)
        return args.func(args, cfg)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except fio.MalformedInput as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_MALFORMED
    except (WorkerFailed, ProtocolViolation) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_WORKER


if __name__ == "__main__":
    sys.exit(main())
