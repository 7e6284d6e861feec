import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wsi_patterns.core import (
    CANCEROUS,
    INDETERMINATE,
    PATTERNS,
    AnnotationCrop,
    HistologicPattern,
    InvalidLabel,
    InvalidProbabilities,
    PatchGeometry,
    PatchPrediction,
    ProbabilityVector,
    SlideLabel,
    UnknownPattern,
    normalize_slide_label,
    parse_pattern,
)

def test_canonical_order():
    assert [p.key for p in PATTERNS] == ["lepidic", "acinar", "papillary", "micropapillary", "solid", "benign"]
    assert [int(p) for p in PATTERNS] == list(range(6))
    assert [p.is_cancerous for p in PATTERNS] == [True] * 5 + [False]


def test_parse_pattern():
    assert parse_pattern("acinar") is HistologicPattern.ACINAR
    assert parse_pattern("MICROPAPILLARY") is HistologicPattern.MICROPAPILLARY
    with pytest.raises(UnknownPattern):
        parse_pattern("squamous")


def test_parse_round_trip():
    for p in PATTERNS:
        assert parse_pattern(p.key) is p
        assert parse_pattern(json.loads(json.dumps(p.key))) is p


def test_normalize_slide_label():
    lab = normalize_slide_label(HistologicPattern.ACINAR, {HistologicPattern.ACINAR, HistologicPattern.LEPIDIC})
    assert lab.predominant is HistologicPattern.ACINAR and lab.minors == {HistologicPattern.LEPIDIC}
    lab = normalize_slide_label(HistologicPattern.SOLID, set())
    assert lab.predominant is HistologicPattern.SOLID and lab.minors == frozenset()
    with pytest.raises(InvalidLabel):
        normalize_slide_label(HistologicPattern.BENIGN, set())


def test_normalize_drops_benign_minor():
    lab = normalize_slide_label("solid", ["benign", "lepidic"])
    assert lab.minors == {HistologicPattern.LEPIDIC}


def test_slide_label_invariants():
    with pytest.raises(InvalidLabel):
        SlideLabel(HistologicPattern.ACINAR, frozenset({HistologicPattern.ACINAR}))
    with pytest.raises(InvalidLabel):
        SlideLabel(HistologicPattern.ACINAR, frozenset({HistologicPattern.BENIGN}))
    with pytest.raises(InvalidLabel):
        SlideLabel(None, frozenset({HistologicPattern.SOLID}))
    assert INDETERMINATE.label_set == frozenset()


def test_slide_label_json_shape():
    lab = SlideLabel(HistologicPattern.ACINAR, frozenset({HistologicPattern.SOLID, HistologicPattern.LEPIDIC}))
    assert lab.to_json() == {"predominant": "acinar", "minors": ["lepidic", "solid"]}
    assert INDETERMINATE.to_json() == {"predominant": None, "minors": []}


def test_probability_vector_sum_tolerance():
    ProbabilityVector((0.5, 0.5 + 9e-7, 0, 0, 0, 0))
    with pytest.raises(InvalidProbabilities):
        ProbabilityVector((0.5, 0.5 + 2e-6, 0, 0, 0, 0))
    with pytest.raises(InvalidProbabilities):
        ProbabilityVector((1.0, 0, 0, 0, 0))
    with pytest.raises(InvalidProbabilities):
        ProbabilityVector((1.1, -0.1, 0, 0, 0, 0))


def test_argmax_tie_goes_to_lower_index():
    v = ProbabilityVector((0.1, 0.3, 0.3, 0.1, 0.1, 0.1))
    assert v.argmax() is HistologicPattern.ACINAR
    pred = PatchPrediction(PatchGeometry(0, 0), ProbabilityVector((0.5, 0, 0, 0, 0, 0.5)))
    assert pred.top_class is HistologicPattern.LEPIDIC
    assert pred.confidence == 0.5


def test_geometry_defaults_and_bounds():
    g = PatchGeometry(10, 20)
    assert g.side == 224
    assert g.center == (122, 132)
    assert g.fits_within(234, 244) and not g.fits_within(233, 244)
    with pytest.raises(ValueError):
        PatchGeometry(-1, 0)
    with pytest.raises(ValueError):
        PatchGeometry(0, 0, 0)


def test_annotation_crop():
    c = AnnotationCrop("s1", (1, 2, 30, 40), "solid")
    assert c.label is HistologicPattern.SOLID and (c.width, c.height) == (30, 40)
    with pytest.raises(ValueError):
        AnnotationCrop("s1", (0, 0, 0, 5), "solid")


probs = st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6).filter(lambda v: sum(v) > 0.01).map(
    lambda v: tuple(x / sum(v) for x in v)
)
def _label_or_none(pred, minors):
    if pred is None:
        return INDETERMINATE
    return normalize_slide_label(pred, minors)


@given(st.one_of(st.none(), st.sampled_from(CANCEROUS)), st.sets(st.sampled_from(CANCEROUS)))
def test_slide_label_round_trip(pred, minors):
    lab = _label_or_none(pred, minors)
    assert SlideLabel.from_json(json.loads(json.dumps(lab.to_json()))) == lab


@given(probs)
def test_probability_vector_round_trip(p):
    v = ProbabilityVector.renormalized(p)
    assert ProbabilityVector.from_json(json.loads(json.dumps(v.to_json()))) == v


@given(st.integers(0, 5000), st.integers(0, 5000), st.integers(1, 1000), probs)
def test_prediction_round_trip(x, y, side, p):
    pred = PatchPrediction(PatchGeometry(x, y, side), ProbabilityVector.renormalized(p))
    back = PatchPrediction.from_json(json.loads(json.dumps(pred.to_json())))
    assert back == pred and back.top_class == pred.top_class


@given(st.text(min_size=1, max_size=8), st.integers(0, 100), st.integers(0, 100), st.integers(1, 100),
       st.integers(1, 100), st.sampled_from(PATTERNS))
def test_crop_round_trip(sid, x, y, w, h, label):
    c = AnnotationCrop(sid, (x, y, w, h), label)
    assert AnnotationCrop.from_json(json.loads(json.dumps(c.to_json()))) == c
