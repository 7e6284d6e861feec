"""Slide-level histologic pattern classification from patch predictions."""

from .core import (
    CANCEROUS,
    INDETERMINATE,
    N_CLASSES,
    PATTERNS,
    AnnotationCrop,
    HistologicPattern,
    PatchGeometry,
    PatchPrediction,
    ProbabilityVector,
    SlideLabel,
    WsiPatternsError,
    parse_pattern,
)
from .tiler import TilerConfig, balanced_stride, expected_patch_count, tile_image, tile_region
from .preprocess import AugmentSpec, ChannelStats, augment, dataset_channel_stats, normalize
from .gateway import ExternalWorker, OracleConfig, SyntheticOracle, classify_batch, handle_from_config
from .inference import (
    AggregationConfig,
    ClassCounts,
    ThresholdVector,
    aggregate,
    baseline_aggregate,
    filter_predictions,
    infer_slide,
)
from .calibration import DevSlide, GridSpec, grid_search_thresholds
from .metrics import LabeledSeries, agreement_report, cohen_kappa, kappa_predom, welch_t_test
from .visualizer import Palette, render_overlay
from .synth import SyntheticSpec, expected_slide_label, generate_slide

__version__ = "0.1.0"

__all__ = [
    "CANCEROUS",
    "INDETERMINATE",
    "N_CLASSES",
    "PATTERNS",
    "AnnotationCrop",
    "HistologicPattern",
    "PatchGeometry",
    "PatchPrediction",
    "ProbabilityVector",
    "SlideLabel",
    "WsiPatternsError",
    "parse_pattern",
    "TilerConfig",
    "balanced_stride",
    "expected_patch_count",
    "tile_image",
    "tile_region",
    "AugmentSpec",
    "ChannelStats",
    "augment",
    "dataset_channel_stats",
    "normalize",
    "ExternalWorker",
    "OracleConfig",
    "SyntheticOracle",
    "classify_batch",
    "handle_from_config",
    "AggregationConfig",
    "ClassCounts",
    "ThresholdVector",
    "aggregate",
    "baseline_aggregate",
    "filter_predictions",
    "infer_slide",
    "DevSlide",
    "GridSpec",
    "grid_search_thresholds",
    "LabeledSeries",
    "agreement_report",
    "cohen_kappa",
    "kappa_predom",
    "welch_t_test",
    "Palette",
    "render_overlay",
    "SyntheticSpec",
    "expected_slide_label",
    "generate_slide",
]
