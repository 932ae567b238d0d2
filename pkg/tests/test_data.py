import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from atr import data
from atr.data import PALETTE, DatasetError, Sample


def tiny_sample(seed=0, H=40, W=30):
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, size=(H, W, 3), dtype=np.uint8)
    labels = np.zeros((H, W), dtype=np.uint8)
    labels[5:30, 8:20] = PALETTE.index("upper-clothes")
    labels[10:25, 8:12] = PALETTE.index("left-arm")
    labels[10:25, 16:20] = PALETTE.index("right-arm")
    return Sample(image, labels, data.foreground_box(labels))


def test_dataset_round_trip(tmp_path):
    samples = data.synth_generate(5, 4)
    names = data.save_dataset(samples, tmp_path)
    assert names == ["000", "001", "002", "003"]
    loaded, palette = data.load_dataset(tmp_path)
    assert palette == PALETTE
    for a, b in zip(samples, loaded):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert tuple(a.box) == tuple(b.box)


def test_out_of_range_label_rejected(tmp_path):
    labels = np.zeros((4, 4), dtype=np.uint8)
    labels[0, 0] = 200
    Image.fromarray(labels).save(tmp_path / "bad.png")
    with pytest.raises(DatasetError, match="200"):
        data.load_label_map(tmp_path / "bad.png", K=17)


def test_colour_label_map_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "rgb.png")
    with pytest.raises(DatasetError):
        data.load_label_map(tmp_path / "rgb.png")


def test_unpaired_files_reported(tmp_path):
    data.save_dataset(data.synth_generate(1, 2), tmp_path)
    (tmp_path / "labels" / "001.png").unlink()
    with pytest.raises(DatasetError, match="001"):
        data.load_dataset(tmp_path)


def test_size_mismatch_rejected():
    with pytest.raises(DatasetError):
        Sample(np.zeros((4, 5, 3), np.uint8), np.zeros((4, 4), np.uint8))


def test_foreground_box():
    labels = np.zeros((10, 10), dtype=np.uint8)
    assert data.foreground_box(labels) is None
    labels[2:5, 3:9] = 1
    assert data.foreground_box(labels) == (3, 2, 6, 3)


# -- cropping -------------------------------------------------------------------------


def test_crop_rect_enlarges_about_centre():
    assert data.crop_rect((40, 40, 20, 50), 1.2, 200, 200) == (38, 35, 62, 95)
    assert data.crop_rect((0, 0, 20, 20), 1.2, 200, 200)[:2] == (0, 0)
    with pytest.raises(DatasetError):
        data.crop_rect((500, 500, 10, 10), 1.2, 100, 100)


def test_crop_person_native_and_resized():
    s = tiny_sample()
    native = data.crop_person(s, (8, 5, 12, 25), enlarge=1.0, size=None)
    np.testing.assert_array_equal(native.labels, s.labels[5:30, 8:20])
    assert native.box == (0, 0, 12, 25)
    small = data.crop_person(s, (8, 5, 12, 25), enlarge=1.0, size=(6, 5))
    assert small.image.shape == (5, 6, 3)
    assert small.box == (0.0, 0.0, 6.0, 5.0)


def test_augment_yields_24_crops():
    s = data.synth_generate(2, 1)[0]
    crops = data.augment(s)
    assert len(crops) == 24
    assert all(c.image.shape == (64, 64, 3) and c.labels.shape == (64, 64) for c in crops)
    windows = data.augmentation_windows(s)
    assert len(windows) == 12
    assert [f for _, f in windows[-3:]] == [1.2, 1.5, 1.8]
    np.testing.assert_array_equal(crops[0].labels, crops[18].labels)


def test_reflection_swaps_partner_counts():
    s = tiny_sample()
    left, right = PALETTE.index("left-arm"), PALETTE.index("right-arm")
    r = data.reflect(s)
    assert (r.labels == left).sum() == (s.labels == right).sum()
    assert (r.labels == right).sum() == (s.labels == left).sum()
    upper = PALETTE.index("upper-clothes")
    assert (r.labels == upper).sum() == (s.labels == upper).sum()
    np.testing.assert_array_equal(r.image, s.image[:, ::-1])


@given(seed=st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_double_reflection_is_identity(seed):
    s = tiny_sample(seed)
    rr = data.reflect(data.reflect(s))
    np.testing.assert_array_equal(rr.labels, s.labels)
    np.testing.assert_array_equal(rr.image, s.image)
    assert rr.box == s.box


def test_swap_table_is_an_involution():
    t = PALETTE.swap_table()
    np.testing.assert_array_equal(t[t], np.arange(256))
    assert PALETTE.partner_of(PALETTE.index("left-shoe")) == PALETTE.index("right-shoe")
    assert PALETTE.partner_of(PALETTE.index("hat")) == PALETTE.index("hat")


# -- synthetic figures -------------------------------------------------------------------


def test_synth_is_deterministic():
    a = data.synth_generate(11, 3)
    b = data.synth_generate(11, 3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.labels, y.labels)
    c = data.synth_generate(12, 1)[0]
    assert not np.array_equal(a[0].image, c.image)


def test_synth_frame_and_labels():
    for s in data.synth_generate(3, 10, dims=(80, 120)):
        assert s.image.shape == (120, 80, 3) and s.image.dtype == np.uint8
        assert s.labels.max() <= PALETTE.K
        assert s.box == data.foreground_box(s.labels)


def test_synth_label_frequencies():
    samples = data.synth_generate(21, 400)
    expected = data.SynthConfig().label_probabilities()
    for name, p in expected.items():
        k = PALETTE.index(name)
        freq = np.mean([(s.labels == k).any() for s in samples])
        assert abs(freq - p) <= 0.10, (name, freq, p)


def test_synth_rejects_empty_request():
    with pytest.raises(ValueError):
        data.synth_generate(0, 0)
