import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from sebsfv.detect import (
    MAX_AREA,
    MIN_AREA,
    NoThreshold,
    binarize,
    detect_frame,
    detect_sequence,
    segment,
    tsallis_threshold,
)


def _brute_threshold(img, q):
    """Direct evaluation of the two-class criterion at every t, ties to the lowest t."""
    p = np.bincount(img.ravel(), minlength=256) / img.size
    best, arg = -np.inf, None
    for t in range(1, 256):
        a, b = p[:t], p[t:]
        Pa, Pb = a.sum(), b.sum()
        if Pa == 0 or Pb == 0:
            continue
        a, b = a[a > 0] / Pa, b[b > 0] / Pb
        if q == 1.0:
            c = -np.sum(a * np.log(a)) - np.sum(b * np.log(b))
        else:
            ha = (1 - np.sum(a**q)) / (q - 1)
            hb = (1 - np.sum(b**q)) / (q - 1)
            c = ha + hb + (1 - q) * ha * hb
        if arg is None or c > best + 1e-12 * max(1, abs(best)):
            best, arg = c, t
    return arg


def test_two_level_image():
    img = np.full((10, 10), 40, np.uint8)
    img.ravel()[60:] = 200
    t = tsallis_threshold(img, 0.8)
    assert 40 < t <= 200
    # classes are [0, t) and [t, 255], so the bright level opens class B
    assert binarize(img, t - 1, "dark").sum() == 60


def test_constant_image():
    with pytest.raises(NoThreshold):
        tsallis_threshold(np.full((5, 5), 7, np.uint8))
    assert detect_frame(np.full((5, 5), 7, np.uint8)) == []


def test_rejects_float_image():
    with pytest.raises(TypeError):
        tsallis_threshold(np.zeros((3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.5, 0.8, 1.0, 1.5, 2.0]))
def test_threshold_matches_brute_force(seed, q):
    rng = np.random.default_rng(seed)
    levels = rng.choice(256, size=rng.integers(2, 12), replace=False)
    img = rng.choice(levels, size=(16, 16)).astype(np.uint8)
    if np.unique(img).size < 2:
        img.ravel()[0], img.ravel()[1] = levels[0], levels[1]
    assert tsallis_threshold(img, q) == _brute_threshold(img, q)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_threshold_consistent_under_monotone_relabeling(seed):
    rng = np.random.default_rng(seed)
    levels = np.sort(rng.choice(256, size=int(rng.integers(2, 10)), replace=False))
    img = rng.choice(levels, size=(20, 20)).astype(np.uint8)
    new_levels = np.sort(rng.choice(256, size=levels.size, replace=False))
    lut = np.zeros(256, np.uint8)
    lut[levels] = new_levels
    mapped = lut[img]
    # the criterion only sees the histogram, so the split between occupied
    # levels is the same: the same pixels fall in the lower class
    t1, t2 = tsallis_threshold(img), tsallis_threshold(mapped)
    np.testing.assert_array_equal(img < t1, mapped < t2)


def _blob(img, y, x, h, w, value):
    img[y : y + h, x : x + w] = value


def test_size_filter_bounds():
    img = np.full((60, 60), 200, np.uint8)
    _blob(img, 2, 2, 7, 7, 20)  # 49 px
    _blob(img, 30, 2, 7, 43, 20)  # 301 px
    assert np.sum(img == 20) == 49 + 301
    seg = segment(img, 100, "dark")
    areas = sorted(np.bincount(seg.labels.ravel())[1:])
    assert seg.boxes == [] and areas == []
    assert seg.n_components == 2 and seg.n_filtered == 2


def test_inclusive_bounds_kept():
    img = np.full((60, 60), 200, np.uint8)
    _blob(img, 2, 2, 5, 10, 20)  # 50 px
    _blob(img, 20, 2, 10, 30, 20)  # 300 px
    seg = segment(img, 100, "dark")
    assert sorted(b.w * b.h for b in seg.boxes) == [MIN_AREA, MAX_AREA]
    assert sorted(b.score for b in seg.boxes) == [50 / 300, 1.0]


def test_two_disjoint_blobs():
    img = np.zeros((50, 50), np.uint8)
    _blob(img, 5, 5, 10, 10, 255)
    _blob(img, 30, 30, 10, 10, 255)
    seg = segment(img, 128, "bright", frame=4)
    assert len(seg.boxes) == 2
    for b in seg.boxes:
        assert (b.w, b.h, b.frame) == (10, 10, 4)
        assert b.score == pytest.approx(100 / 300)


def test_eight_connectivity_joins_diagonals():
    img = np.zeros((30, 30), np.uint8)
    _blob(img, 0, 0, 5, 6, 255)  # 30 px
    _blob(img, 5, 6, 5, 6, 255)  # touches only at a corner
    seg = segment(img, 128, "bright")
    assert seg.n_components == 1 and len(seg.boxes) == 1
    assert (seg.boxes[0].w, seg.boxes[0].h) == (12, 10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["dark", "bright"]))
def test_segment_invariants(seed, polarity):
    rng = np.random.default_rng(seed)
    img = (rng.random((48, 40)) * 255).astype(np.uint8)
    img = np.where(rng.random((48, 40)) < 0.5, img, 255 - img).astype(np.uint8)
    img = ndimage.uniform_filter(img, 5)
    seg = segment(img, int(rng.integers(1, 255)), polarity)
    assert seg.n_components == len(seg.boxes) + seg.n_filtered
    areas = np.bincount(seg.labels.ravel())[1:]
    assert areas.size == len(seg.boxes)
    assert np.all((areas >= MIN_AREA) & (areas <= MAX_AREA))
    for b in seg.boxes:
        assert b.x >= 0 and b.y >= 0 and b.x + b.w <= 40 and b.y + b.h <= 48 and b.w >= 1 and b.h >= 1


def test_detect_sequence_frames():
    img = np.full((40, 40), 220, np.uint8)
    _blob(img, 10, 10, 8, 12, 30)
    boxes = detect_sequence([img, img], "dark")
    assert [b.frame for b in boxes] == [0, 1]
    assert (boxes[0].x, boxes[0].y, boxes[0].w, boxes[0].h) == (10, 10, 12, 8)


def test_bad_polarity():
    with pytest.raises(ValueError):
        binarize(np.zeros((2, 2), np.uint8), 1, "grey")
