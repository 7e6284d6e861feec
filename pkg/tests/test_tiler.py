from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wsi_patterns.core import PatchGeometry
from wsi_patterns.tiler import (
    NoTilableCrops,
    RegionTooSmall,
    TilerConfig,
    balanced_stride,
    expected_patch_count,
    patch_count_summary,
    stride_for_overlap,
    tile_image,
    tile_region,
)


def xy(geoms):
    return [(g.x, g.y) for g in geoms]


def test_stride_for_overlap():
    assert stride_for_overlap(224, Fraction(1, 5)) == 179
    assert stride_for_overlap(224, 0) == 224
    assert stride_for_overlap(100, Fraction(1, 2)) == 50
    assert stride_for_overlap(1, Fraction(9, 10)) == 1
    assert TilerConfig().stride == 179


def test_tile_region_examples():
    cfg = TilerConfig.with_stride(224, 179)
    assert xy(tile_region(224, 224, cfg)) == [(0, 0)]
    assert xy(tile_region(403, 224, cfg)) == [(0, 0), (179, 0)]
    assert xy(tile_region(400, 224, cfg)) == [(0, 0), (176, 0)]
    assert xy(tile_region(400, 224, TilerConfig.with_stride(224, 179, clamp_final=False))) == [(0, 0)]
    with pytest.raises(RegionTooSmall):
        tile_region(223, 500, cfg)


def test_row_major_order():
    geoms = tile_region(500, 500, TilerConfig.with_stride(224, 179))
    keys = [(g.y, g.x) for g in geoms]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)


def test_expected_patch_count_examples():
    cfg = TilerConfig.with_stride(224, 179)
    assert expected_patch_count(224, 224, cfg) == 1
    assert expected_patch_count(403, 403, cfg) == 4


def test_balanced_stride_examples():
    assert balanced_stride([(448, 448)], 224, 4) == 224
    assert balanced_stride([(448, 448)], 224, 9) == 112
    with pytest.raises(NoTilableCrops):
        balanced_stride([(200, 200)], 224, 1)


def test_balanced_stride_is_largest():
    dims = [(300, 260), (500, 240), (100, 100)]
    for target in (1, 3, 10, 40, 100):
        s = balanced_stride(dims, 64, target)
        count = lambda st_: sum(expected_patch_count(w, h, TilerConfig.with_stride(64, st_, False))
                                for w, h in dims if w >= 64 and h >= 64)
        assert count(s) >= target or s == 1
        if s < 64:
            assert count(s + 1) < target


def test_balanced_stride_unreachable_returns_one():
    assert balanced_stride([(10, 10), (12, 12)], 10, 10**6) == 1


def _covered(width, height, geoms):
    mask = np.zeros((height, width), dtype=bool)
    for g in geoms:
        mask[g.y:g.y + g.side, g.x:g.x + g.side] = True
    return mask.all()


@given(st.integers(1, 64), st.data())
def test_coverage_and_overlap(window, data):
    stride = data.draw(st.integers(1, window))
    width = data.draw(st.integers(window, 4 * window + 7))
    height = data.draw(st.integers(window, 4 * window + 7))
    cfg = TilerConfig.with_stride(window, stride)
    geoms = tile_region(width, height, cfg)
    assert len(geoms) == expected_patch_count(width, height, cfg)
    assert all(g.fits_within(width, height) for g in geoms)
    assert _covered(width, height, geoms)
    xs = sorted({g.x for g in geoms})
    gaps = np.diff(xs)
    assert all(gap == stride for gap in gaps[:-1])
    if len(gaps):
        assert gaps[-1] <= stride


@given(st.integers(1, 40), st.integers(1, 40), st.integers(40, 200), st.integers(40, 200))
def test_monotone_in_stride(window, stride, width, height):
    window = max(window, stride)
    a = expected_patch_count(width, height, TilerConfig.with_stride(window, stride))
    if stride > 1:
        b = expected_patch_count(width, height, TilerConfig.with_stride(window, stride - 1))
        assert b >= a


def test_deterministic():
    cfg = TilerConfig(window=50)
    assert tile_region(333, 211, cfg) == tile_region(333, 211, cfg)


def test_luminance_skip():
    img = np.full((64, 128, 3), 250, dtype=np.uint8)
    img[:, :64] = 40
    cfg = TilerConfig(window=64, overlap_fraction=0, max_mean_luminance=0.9)
    assert tile_image(img, cfg) == [PatchGeometry(0, 0, 64)]
    assert len(tile_image(img, TilerConfig(window=64, overlap_fraction=0))) == 2


def test_config_json_round_trip():
    cfg = TilerConfig(window=96, overlap_fraction=Fraction(1, 3), clamp_final=False)
    assert TilerConfig.from_json(cfg.to_json()) == cfg


def test_patch_count_summary():
    s = patch_count_summary([1, 2, 6])
    assert s == {"slides": 3, "mean": 3.0, "median": 2.0, "std": pytest.approx(np.std([1, 2, 6]))}
