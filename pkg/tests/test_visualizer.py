import io

import numpy as np
import pytest
from scipy import ndimage

from conftest import prediction
from wsi_patterns.core import HistologicPattern
from wsi_patterns.visualizer import (
    DEFAULT_COLORS,
    LEGEND_HEIGHT,
    BadScale,
    OutOfBounds,
    Palette,
    dot_sidecar,
    render_overlay,
)

L, A, P, M, S, B = HistologicPattern
WHITE = np.full((448, 672, 3), 255, dtype=np.uint8)


def body(img):
    return np.asarray(img)[:-LEGEND_HEIGHT]


def count_dots(img, pattern):
    mask = np.all(body(img) == DEFAULT_COLORS[pattern][:3], axis=-1)
    return ndimage.label(mask)[1]


def png_bytes(img):
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def test_empty_list_gives_slide_and_legend():
    img = render_overlay(WHITE, [])
    assert img.size == (672, 448 + LEGEND_HEIGHT)
    assert np.all(body(img) == 255)
    legend = np.asarray(img)[-LEGEND_HEIGHT:]
    for p in (L, A, P, M, S):
        assert np.any(np.all(legend == DEFAULT_COLORS[p][:3], axis=-1))


def test_single_solid_dot_centered():
    img = render_overlay(WHITE[:224, :224], [prediction(S, x=0, y=0)])
    arr = body(img)
    assert tuple(arr[112, 112]) == DEFAULT_COLORS[S][:3]
    ys, xs = np.nonzero(np.all(arr == DEFAULT_COLORS[S][:3], axis=-1))
    assert xs.mean() == pytest.approx(112, abs=0.5)
    assert ys.mean() == pytest.approx(112, abs=0.5)
    assert count_dots(img, S) == 1
    assert dot_sidecar([prediction(S)], 224, 224) == [{"x": 112.0, "y": 112.0, "class": "solid"}]


def test_dot_count_matches_retained_cancerous():
    preds = []
    expected = {p: 0 for p in HistologicPattern}
    for i, (x, y) in enumerate((x, y) for y in (0, 224) for x in (0, 224, 448)):
        k = HistologicPattern(i % 6)
        preds.append(prediction(k, x=x, y=y))
        expected[k] += 1
    img = render_overlay(WHITE, preds)
    for p in (L, A, P, M, S):
        assert count_dots(img, p) == expected[p]
    assert count_dots(img, B) == 0
    assert len(dot_sidecar(preds, 672, 448)) == 5
    with_benign = render_overlay(WHITE, preds, Palette(draw_benign=True))
    assert count_dots(with_benign, B) == 1


def test_scaled_centers():
    img = render_overlay(WHITE, [prediction(A, x=448, y=224)], scale=0.5)
    assert img.size == (336, 224 + LEGEND_HEIGHT)
    assert tuple(body(img)[168, 280]) == DEFAULT_COLORS[A][:3]
    assert dot_sidecar([prediction(A, x=448, y=224)], 672, 448, scale=0.5)[0]["x"] == 280.0


def test_rendering_is_byte_identical(rng):
    slide = rng.integers(0, 256, (448, 672, 3), dtype=np.uint8)
    preds = [prediction(HistologicPattern(int(k)), x=int(x), y=int(y))
             for k, x, y in zip(rng.integers(0, 6, 20), rng.integers(0, 449, 20), rng.integers(0, 225, 20))]
    a = render_overlay(slide, preds, scale=0.37)
    b = render_overlay(slide.copy(), list(preds), scale=0.37)
    assert png_bytes(a) == png_bytes(b)


def test_errors():
    with pytest.raises(OutOfBounds):
        render_overlay(WHITE[:224, :224], [prediction(A, x=1)])
    for bad in (0.0, -1.0, 1.5):
        with pytest.raises(BadScale):
            render_overlay(WHITE, [], scale=bad)
    with pytest.raises(ValueError):
        Palette(color={**DEFAULT_COLORS, A: DEFAULT_COLORS[L]})
