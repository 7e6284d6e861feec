import numpy as np
import pytest

from conftest import prediction
from devsets import NOISE_CEILING, noisy_dev_set
from wsi_patterns.calibration import (
    DevSlide,
    EmptyDevSet,
    GridSpec,
    calibration_objective,
    evaluate_thresholds,
    grid_search_thresholds,
    slide_correspondence,
)
from wsi_patterns.core import INDETERMINATE, HistologicPattern, LengthMismatch, PatchGeometry, PatchPrediction, SlideLabel
from wsi_patterns.gateway import DEFAULT_CLASS_COLORS, OracleConfig, oracle_classify
from wsi_patterns.inference import ThresholdVector, aggregate

L, A, P, M, S, B = HistologicPattern


def label(pred, *minors):
    return SlideLabel(pred, frozenset(minors))


def test_objective_examples():
    labs = [label(A, L), label(S), INDETERMINATE]
    assert calibration_objective(labs, labs) == 1.0
    assert slide_correspondence(label(A, L), label(A)) == pytest.approx(0.75)
    assert slide_correspondence(INDETERMINATE, label(S)) == 0.0
    assert slide_correspondence(INDETERMINATE, INDETERMINATE) == 1.0
    with pytest.raises(LengthMismatch):
        calibration_objective([label(A)], [])


def _clean_dev():
    dev = []
    for i, (pred, minor) in enumerate(((A, S), (L, None), (S, P))):
        preds = [prediction(pred, 0.9)] * 60 + ([prediction(minor, 0.9)] * 20 if minor is not None else [])
        dev.append(DevSlide(f"d{i}", preds, label(pred, *([minor] if minor is not None else []))))
    return dev


def test_noise_free_returns_zeros():
    res = grid_search_thresholds(_clean_dev())
    assert res.thresholds == ThresholdVector()
    assert res.objective == 1.0


def test_single_grid_value_forced():
    dev = [DevSlide("d", [prediction(A, 0.9)] * 10, label(A))]
    res = grid_search_thresholds(dev, GridSpec(values=(0.5,)))
    assert res.thresholds == ThresholdVector.uniform(0.5)


def test_empty_dev():
    with pytest.raises(EmptyDevSet):
        grid_search_thresholds([])


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(values=(0.1, 0.1))
    with pytest.raises(ValueError):
        GridSpec(class_order=(L, A))
    with pytest.raises(ValueError):
        GridSpec(passes=0)


def test_noisy_dev_recovers_noise_free_objective():
    noisy, clean = noisy_dev_set()
    assert evaluate_thresholds(noisy, ThresholdVector()) < 1.0
    res = grid_search_thresholds(noisy)
    free = evaluate_thresholds(clean, ThresholdVector())
    assert res.objective == free == 1.0
    assert all(NOISE_CEILING < t <= 0.9 for t in res.thresholds.tau)


def test_trace_and_monotonicity():
    noisy, _ = noisy_dev_set()
    grid = GridSpec()
    res = grid_search_thresholds(noisy, grid)
    assert len(res.trace) == grid.passes * 6 * len(grid.values)
    accepted = []
    per_step = len(grid.values)
    for i in range(0, len(res.trace), per_step):
        step = res.trace[i:i + per_step]
        best = max(e.objective for e in step)
        accepted.append(best)
        assert len({(e.pass_index, e.pattern) for e in step}) == 1
    assert all(b >= a for a, b in zip(accepted, accepted[1:]))
    assert res.objective == evaluate_thresholds(noisy, res.thresholds)


def test_deterministic():
    noisy, _ = noisy_dev_set()
    assert grid_search_thresholds(noisy) == grid_search_thresholds(noisy)


def test_class_order_is_respected():
    noisy, _ = noisy_dev_set()
    order = (B, S, M, P, A, L)
    res = grid_search_thresholds(noisy, GridSpec(class_order=order, passes=1))
    seen = []
    for e in res.trace:
        if not seen or seen[-1] != e.pattern:
            seen.append(e.pattern)
    assert tuple(seen) == order


def test_ties_pick_smallest_value():
    # a single clean slide: every threshold up to 0.9 scores 1.0
    dev = [DevSlide("d", [prediction(A, 0.9)] * 10, label(A))]
    res = grid_search_thresholds(dev, GridSpec(values=tuple(np.linspace(0.1, 0.9, 9))))
    assert res.thresholds == ThresholdVector.uniform(0.1)


def test_continuous_oracle_noise():
    # heavy noise so each wrong class gets about 10% of a slide's patches
    cfg = OracleConfig(noise_rate=0.5, low_conf_max=0.3, seed=21)
    patch = {k: np.tile(np.array(DEFAULT_CLASS_COLORS[k], np.uint8), (4, 4, 1)) for k in HistologicPattern}
    dev = []
    draw = 0
    for i, (pred, minor) in enumerate(((A, S), (L, None), (S, P), (P, M), (M, A), (A, None))):
        truth = [pred] * 400 + ([minor] * 100 if minor is not None else [])
        preds = []
        for k in truth:
            preds.append(PatchPrediction(PatchGeometry(draw, 0, 4), oracle_classify(patch[k], cfg, draw)))
            draw += 1
        counts = [truth.count(k) for k in HistologicPattern]
        dev.append(DevSlide(f"c{i}", preds, aggregate(counts)))
    res = grid_search_thresholds(dev)
    assert res.objective == 1.0
    assert all(0.30 <= res.thresholds[k] <= 0.90 for k in (L, A, P, M, S))
