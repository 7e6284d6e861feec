import json
import sys
from pathlib import Path

import numpy as np
import pytest

from wsi_patterns.core import N_CLASSES, HistologicPattern, ProbabilityVector
from wsi_patterns.gateway import (
    DEFAULT_CLASS_COLORS,
    ExternalWorker,
    OracleConfig,
    ProtocolViolation,
    SyntheticOracle,
    WorkerFailed,
    classify_batch,
    decode_png,
    dominant_classes,
    encode_png,
    handle_from_config,
    oracle_classify,
)

FAKE = str(Path(__file__).with_name("fake_worker.py"))


def flat(pattern, side=16):
    return np.tile(np.array(DEFAULT_CLASS_COLORS[pattern], dtype=np.uint8), (side, side, 1))


def test_oracle_pure_class_vector():
    cfg = OracleConfig(noise_rate=0.0, confidence=0.9)
    for k in HistologicPattern:
        v = oracle_classify(flat(k), cfg, 0)
        assert v.p[k] == pytest.approx(0.9)
        assert all(v.p[j] == pytest.approx(0.02) for j in range(N_CLASSES) if j != k)
        assert sum(v.p) == pytest.approx(1.0, abs=1e-12)


def test_classify_batch_empty():
    assert classify_batch(SyntheticOracle(), []) == []


def test_noise_zero_always_correct(rng):
    cfg = OracleConfig(noise_rate=0.0, seed=9)
    for d in range(200):
        k = HistologicPattern(int(rng.integers(6)))
        assert oracle_classify(flat(k, 4), cfg, d).argmax() is k


def test_noise_one_always_wrong_low_confidence():
    cfg = OracleConfig(noise_rate=1.0, low_conf_max=0.3, seed=2)
    for d in range(2000):
        k = HistologicPattern(d % 6)
        v = oracle_classify(flat(k, 4), cfg, d)
        top = v.argmax()
        assert top is not k
        assert 1 / 6 < v.p[top] <= 0.3


def test_noise_rate_monte_carlo():
    cfg = OracleConfig(noise_rate=0.1, seed=11)
    patch = flat(HistologicPattern.SOLID, 4)
    wrong = sum(oracle_classify(patch, cfg, d).argmax() is not HistologicPattern.SOLID for d in range(10000))
    assert abs(wrong / 10000 - 0.1) <= 0.02


def test_oracle_deterministic():
    cfg = OracleConfig(noise_rate=0.5, seed=4)
    patch = flat(HistologicPattern.ACINAR)
    assert [oracle_classify(patch, cfg, d) for d in range(50)] == [oracle_classify(patch, cfg, d) for d in range(50)]


def test_dominant_class_is_pixel_majority():
    patch = flat(HistologicPattern.BENIGN, 10)
    patch[:6] = DEFAULT_CLASS_COLORS[HistologicPattern.MICROPAPILLARY]
    assert dominant_classes([patch], OracleConfig())[0] == HistologicPattern.MICROPAPILLARY
    # exact tie goes to the lower index
    tie = flat(HistologicPattern.SOLID, 10)
    tie[:5] = DEFAULT_CLASS_COLORS[HistologicPattern.ACINAR]
    assert dominant_classes([tie], OracleConfig())[0] == HistologicPattern.ACINAR
    mixed = [flat(HistologicPattern.LEPIDIC, 6), flat(HistologicPattern.SOLID, 8)]
    assert list(dominant_classes(mixed, OracleConfig())) == [0, 4]


def test_nearest_color_tolerates_noise(rng):
    patch = flat(HistologicPattern.PAPILLARY, 12).astype(np.int16)
    patch = np.clip(patch + rng.integers(-20, 21, patch.shape), 0, 255).astype(np.uint8)
    assert dominant_classes([patch], OracleConfig())[0] == HistologicPattern.PAPILLARY


def test_oracle_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(noise_rate=1.5)
    with pytest.raises(ValueError):
        OracleConfig(confidence=1 / 6)
    cfg = OracleConfig(noise_rate=0.25, seed=3)
    assert OracleConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg


def test_batch_requires_square_equal_patches():
    with pytest.raises(ValueError):
        classify_batch(SyntheticOracle(), [np.zeros((4, 5, 3), np.uint8)])
    with pytest.raises(ValueError):
        classify_batch(SyntheticOracle(), [np.zeros((4, 4, 3), np.uint8), np.zeros((5, 5, 3), np.uint8)])


def test_png_round_trip(rng):
    patch = rng.integers(0, 256, (9, 9, 3), dtype=np.uint8)
    assert np.array_equal(decode_png(encode_png(patch)), patch)


def worker(mode, **kw):
    return ExternalWorker([sys.executable, FAKE, mode], **kw)


def patches(n=3):
    return [flat(HistologicPattern(k % 6), 8) for k in range(n)]


def test_worker_round_trip_reorders_by_id():
    with worker("reverse", batch_size=2) as w:
        out = classify_batch(w, patches(4))
    assert len(out) == 4 and all(isinstance(v, ProbabilityVector) for v in out)


def test_worker_short_vector():
    with worker("short") as w, pytest.raises(ProtocolViolation):
        classify_batch(w, patches(1))


def test_worker_bad_sum():
    with worker("badsum") as w, pytest.raises(ProtocolViolation):
        classify_batch(w, patches(1))


def test_worker_small_sum_error_renormalized():
    with worker("nearsum") as w:
        (v,) = classify_batch(w, patches(1))
    assert sum(v.p) == pytest.approx(1.0, abs=1e-12)


def test_worker_unknown_id():
    with worker("wrongid") as w, pytest.raises(ProtocolViolation):
        classify_batch(w, patches(1))


def test_worker_crash():
    with worker("crash") as w, pytest.raises(WorkerFailed, match="code 3"):
        classify_batch(w, patches(1))


def test_worker_garbage_line():
    with worker("garbage") as w, pytest.raises(WorkerFailed, match="malformed"):
        classify_batch(w, patches(1))


def test_worker_timeout():
    with worker("sleep", timeout=0.5) as w, pytest.raises(WorkerFailed, match="timed out"):
        classify_batch(w, patches(1))


def test_worker_missing_binary():
    with ExternalWorker(["/nonexistent/worker"]) as w, pytest.raises(WorkerFailed):
        classify_batch(w, patches(1))


def test_worker_stderr_logged(caplog):
    with caplog.at_level("WARNING"), worker("stderr") as w:
        classify_batch(w, patches(2))
    assert "note for 1" in caplog.text


def test_reference_worker_matches_oracle():
    cfg = {"kind": "worker", "command": [sys.executable, "-m", "wsi_patterns.oracle_worker"], "batch_size": 2}
    with handle_from_config(cfg) as w:
        out = classify_batch(w, patches(5))
    assert [v.argmax() for v in out] == [HistologicPattern(k % 6) for k in range(5)]
    assert all(v.p[v.argmax()] == pytest.approx(0.9) for v in out)


def test_handle_from_config_oracle():
    h = handle_from_config({"kind": "oracle", "noise_rate": 0.0})
    assert isinstance(h, SyntheticOracle)
    with pytest.raises(ValueError):
        handle_from_config({"kind": "gpu"})
