import numpy as np
import pytest

from wsi_patterns.core import N_CLASSES, HistologicPattern, PatchGeometry, PatchPrediction, ProbabilityVector


def vector(top, conf):
    """Probability vector with ``conf`` on ``top`` and the rest spread evenly."""
    rest = (1.0 - conf) / (N_CLASSES - 1)
    return ProbabilityVector(tuple(conf if k == int(top) else rest for k in range(N_CLASSES)))


def prediction(top, conf=0.9, x=0, y=0, side=224):
    return PatchPrediction(PatchGeometry(x, y, side), vector(top, conf))


def predictions_from_counts(counts, conf=0.9, side=32):
    out = []
    i = 0
    for k, n in enumerate(counts):
        for _ in range(n):
            out.append(prediction(HistologicPattern(k), conf, x=side * i, y=0, side=side))
            i += 1
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from criteria import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
