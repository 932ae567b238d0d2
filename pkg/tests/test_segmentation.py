import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from atr import segmentation as seg
from atr.segmentation import SuperPixelMap


def test_constant_image_is_one_segment():
    sp = seg.felzenszwalb_segment(np.full((30, 40, 3), 90, dtype=np.uint8))
    assert sp.count == 1
    assert not sp.ids.any()


def test_two_halves_split_cleanly():
    img = np.zeros((2, 4, 3), dtype=np.uint8)
    img[:, 2:] = 255
    sp = seg.felzenszwalb_segment(img, k=1, min_size=1, sigma=0)
    np.testing.assert_array_equal(sp.ids, [[0, 0, 1, 1], [0, 0, 1, 1]])


def random_blocks(seed, H=24, W=32):
    rng = np.random.default_rng(seed)
    small = rng.integers(0, 256, size=(H // 4, W // 4, 3))
    img = np.kron(small, np.ones((4, 4, 1))).astype(np.uint8)
    noise = rng.integers(-8, 9, size=img.shape)
    return np.clip(img.astype(int) + noise, 0, 255).astype(np.uint8)


@given(seed=st.integers(0, 10_000), k=st.sampled_from([10.0, 100.0, 500.0]), min_size=st.integers(1, 30))
@settings(max_examples=40, deadline=None)
def test_segments_partition_connected_and_large_enough(seed, k, min_size):
    img = random_blocks(seed)
    sp = seg.felzenszwalb_segment(img, k=k, min_size=min_size)
    ids = sp.ids
    assert ids.shape == img.shape[:2]
    assert ids.min() == 0 and set(np.unique(ids)) == set(range(sp.count))
    sizes = sp.sizes()
    assert sizes.sum() == ids.size
    if sp.count > 1:
        assert sizes.min() >= min(min_size, ids.size)
    for s in range(sp.count):
        _, pieces = ndimage.label(ids == s)  # default structure is 4-connectivity
        assert pieces == 1


def test_segmentation_is_deterministic():
    img = random_blocks(3, 48, 64)
    a = seg.felzenszwalb_segment(img)
    b = seg.felzenszwalb_segment(img.copy())
    np.testing.assert_array_equal(a.ids, b.ids)


def test_ids_follow_raster_order():
    ids = seg.canonical_ids(np.array([[7, 7, 3], [9, 3, 3]]))
    np.testing.assert_array_equal(ids, [[0, 0, 1], [2, 1, 1]])


def test_empty_image_rejected():
    with pytest.raises(ValueError):
        seg.felzenszwalb_segment(np.zeros((0, 4, 3)))


# -- voting -----------------------------------------------------------------------


def brute_vote(maps, ids):
    out = np.zeros(ids.shape, dtype=np.uint8)
    for s in np.unique(ids):
        region = ids == s
        scores = [m[region].sum() for m in maps]
        best = 0
        for label, score in enumerate(scores):
            if score > scores[best]:
                best = label
        out[region] = best
    return out


@given(seed=st.integers(0, 10_000), K=st.integers(1, 5))
@settings(max_examples=40, deadline=None)
def test_vote_matches_brute_force(seed, K):
    rng = np.random.default_rng(seed)
    maps = rng.integers(0, 9, size=(K + 1, 9, 11)) / 8.0
    ids = seg.canonical_ids(rng.integers(0, 6, size=(9, 11)))
    np.testing.assert_array_equal(seg.superpixel_smooth(list(maps), ids), brute_vote(maps, ids))


@given(seed=st.integers(0, 10_000), shift=st.integers(0, 16))
@settings(max_examples=30, deadline=None)
def test_vote_ignores_constant_shift(seed, shift):
    rng = np.random.default_rng(seed)
    maps = rng.integers(0, 9, size=(4, 8, 8)) / 8.0
    ids = SuperPixelMap(seg.canonical_ids(rng.integers(0, 5, size=(8, 8))))
    base = seg.superpixel_smooth(maps, ids)
    np.testing.assert_array_equal(seg.superpixel_smooth(maps + shift / 8.0, ids), base)


def test_ties_go_to_lowest_label_and_regions_are_uniform():
    maps = np.zeros((3, 2, 2))
    maps[1, 0, 0] = maps[2, 0, 1] = 1.0
    ids = np.array([[0, 0], [1, 1]])
    out = seg.superpixel_smooth(maps, ids)
    np.testing.assert_array_equal(out, [[1, 1], [0, 0]])


def test_pixel_argmax_without_regions():
    maps = np.array([[[0.6, 0.1]], [[0.3, 0.9]]])
    np.testing.assert_array_equal(seg.pixel_argmax(maps), [[0, 1]])


def test_vote_rejects_mismatched_inputs():
    with pytest.raises(ValueError):
        seg.superpixel_smooth(np.zeros((1, 2, 2)), np.zeros((2, 2), dtype=int))
    with pytest.raises(ValueError):
        seg.superpixel_smooth(np.zeros((2, 2, 2)), np.zeros((3, 2), dtype=int))
