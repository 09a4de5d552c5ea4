import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from lrrspm.dataset_io import (
    DatasetIndex,
    GrayImage,
    SplitSpec,
    load_image,
    scan_dataset,
    split_dataset,
)
from lrrspm.errors import (
    DecodeError,
    InsufficientSamplesError,
    InvalidDatasetError,
    InvalidInputError,
)


def write_pgm(path, width, height, data: bytes):
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode() + data)
    return path


def test_pgm_bytes_scale_to_unit_interval(tmp_path):
    p = write_pgm(tmp_path / "a.pgm", 2, 2, bytes([0, 255, 128, 64]))
    img = load_image(p)
    assert (img.width, img.height) == (2, 2)
    np.testing.assert_array_equal(img.pixels.ravel(), [0.0, 1.0, 128 / 255, 64 / 255])


def test_white_png_is_all_ones(tmp_path):
    Image.new("L", (5, 3), 255).save(tmp_path / "w.png")
    img = load_image(tmp_path / "w.png")
    assert img.size == (5, 3)
    assert np.all(img.pixels == 1.0)


def test_rgb_red_uses_luma_weight(tmp_path):
    Image.new("RGB", (1, 1), (255, 0, 0)).save(tmp_path / "r.png")
    assert load_image(tmp_path / "r.png").pixels[0, 0] == pytest.approx(0.299, abs=1e-12)


def test_rgb_mixture_matches_hand_weights(tmp_path):
    Image.new("RGB", (1, 1), (10, 200, 30)).save(tmp_path / "m.png")
    expected = (0.299 * 10 + 0.587 * 200 + 0.114 * 30) / 255
    assert load_image(tmp_path / "m.png").pixels[0, 0] == pytest.approx(expected, abs=1e-12)


def test_jpeg_decodes(tmp_path):
    arr = np.tile(np.linspace(0, 255, 16, dtype=np.uint8), (12, 1))
    Image.fromarray(arr).save(tmp_path / "g.JPG")
    img = load_image(tmp_path / "g.JPG")
    assert img.size == (16, 12)
    assert 0.0 <= img.pixels.min() and img.pixels.max() <= 1.0


def test_sixteen_bit_png(tmp_path):
    arr = np.array([[0, 65535], [32768, 1000]], dtype=np.uint16)
    Image.fromarray(arr).save(tmp_path / "s.png")
    img = load_image(tmp_path / "s.png")
    np.testing.assert_allclose(img.pixels, arr / 65535.0)


def test_garbage_file_names_path(tmp_path):
    p = tmp_path / "broken.png"
    p.write_bytes(b"not an image")
    with pytest.raises(DecodeError, match="broken.png"):
        load_image(p)


def test_zero_area_raster_rejected():
    with pytest.raises(InvalidInputError):
        GrayImage(np.zeros((0, 4)))


def test_out_of_range_raster_rejected():
    with pytest.raises(InvalidInputError):
        GrayImage(np.full((2, 2), 1.5))


def test_decode_is_idempotent(tmp_path, rng):
    Image.fromarray(rng.integers(0, 256, (9, 7), dtype=np.uint8)).save(tmp_path / "x.png")
    a, b = load_image(tmp_path / "x.png"), load_image(tmp_path / "x.png")
    assert a.pixels.tobytes() == b.pixels.tobytes()


def _touch_dataset(root, layout):
    for cls, names in layout.items():
        d = root / cls
        d.mkdir(parents=True)
        for n in names:
            (d / n).write_bytes(b"")
    return root


def test_scan_orders_classes_and_samples(tmp_path):
    root = _touch_dataset(tmp_path, {"b": ["2.png", "1.png"], "a": ["z.pgm", "y.jpeg"]})
    (root / "a" / "notes.txt").write_text("ignored")
    index = scan_dataset(root)
    assert index.classes == ("a", "b")
    assert len(index) == 4
    assert [p.name for p, _ in index.samples] == ["y.jpeg", "z.pgm", "1.png", "2.png"]
    assert list(index.labels) == [0, 0, 1, 1]


def test_scan_coil20_layout_counts(tmp_path):
    layout = {f"obj{c}": [f"obj{c}__{i}.png" for i in range(72)] for c in range(1, 21)}
    index = scan_dataset(_touch_dataset(tmp_path, layout))
    assert len(index.classes) == 20
    assert len(index) == 1440


def test_scan_rejects_empty_class(tmp_path):
    root = _touch_dataset(tmp_path, {"a": ["1.png"], "empty": []})
    with pytest.raises(InvalidDatasetError, match="empty"):
        scan_dataset(root)


def test_scan_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        scan_dataset(tmp_path / "nope")


def _synthetic_index(n_classes, per_class):
    classes = tuple(f"c{i}" for i in range(n_classes))
    samples = tuple((f"/d/c{c}/{i:03d}.png", c) for c in range(n_classes) for i in range(per_class))
    return DatasetIndex(classes, samples)


def test_split_counts():
    train, test = split_dataset(_synthetic_index(3, 10), SplitSpec(4, seed=7))
    assert len(train) == 12 and len(test) == 18
    assert np.bincount(train.labels).tolist() == [4, 4, 4]


def test_split_is_deterministic():
    index = _synthetic_index(3, 10)
    a = split_dataset(index, SplitSpec(4, seed=7))
    b = split_dataset(index, SplitSpec(4, seed=7))
    assert repr(a) == repr(b)
    c = split_dataset(index, SplitSpec(4, seed=8))
    assert c[0].samples != a[0].samples


def test_split_coil20_protocol():
    train, test = split_dataset(_synthetic_index(20, 72), SplitSpec(50, seed=0))
    assert (len(train), len(test)) == (1000, 440)


def test_split_insufficient_samples_names_class():
    index = DatasetIndex(("a", "b"), (("x", 0), ("y", 0), ("z", 1)))
    with pytest.raises(InsufficientSamplesError, match="'b'"):
        split_dataset(index, SplitSpec(1))


def test_adding_a_class_leaves_other_splits_alone():
    small = split_dataset(_synthetic_index(2, 10), SplitSpec(3, seed=5))[0]
    big = split_dataset(_synthetic_index(3, 10), SplitSpec(3, seed=5))[0]
    assert small.samples == tuple(s for s in big.samples if s[1] < 2)


def test_split_spec_validation():
    with pytest.raises(InvalidInputError):
        SplitSpec(0)


@settings(max_examples=50, deadline=None)
@given(
    n_classes=st.integers(1, 5),
    per_class=st.integers(2, 12),
    data=st.data(),
)
def test_split_partitions_every_class(n_classes, per_class, data):
    ntrain = data.draw(st.integers(1, per_class - 1))
    seed = data.draw(st.integers(0, 2**64 - 1))
    index = _synthetic_index(n_classes, per_class)
    train, test = split_dataset(index, SplitSpec(ntrain, seed))
    tr, te = set(train.samples), set(test.samples)
    assert not tr & te
    assert tr | te == set(index.samples)
    assert np.all(np.bincount(train.labels, minlength=n_classes) == ntrain)
