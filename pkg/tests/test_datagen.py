import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgdlab.classifier import ClassifierModel, TrainConfig, split, train
from pgdlab.datagen import (
    Dataset,
    Image,
    MalformedHeaderError,
    MaxvalMismatchError,
    TruncatedPayloadError,
    augment,
    augment_dataset,
    gen_shape_dataset,
    gen_texture_dataset,
    load_dataset,
    load_image,
    save_dataset,
    save_image,
)


def same_images(a, b):
    return [im.id for im in a] == [im.id for im in b] and all(
        x.pixels.tobytes() == y.pixels.tobytes() and x.label == y.label for x, y in zip(a, b))


# ---------------------------------------------------------------- generators


def test_texture_deterministic():
    assert same_images(gen_texture_dataset(5, 10, size=16).images, gen_texture_dataset(5, 10, size=16).images)
    assert not same_images(gen_texture_dataset(5, 3, size=16).images, gen_texture_dataset(6, 3, size=16).images)


def test_texture_range_and_balance():
    ds = gen_texture_dataset(1, 6, size=16, num_classes=3)
    assert ds.class_counts() == [6, 6, 6]
    px = np.stack([im.pixels for im in ds])
    assert px.min() >= 0.0 and px.max() <= 1.0
    assert px.shape == (18, 16, 16, 3)


def test_shape_archetypes_without_jitter():
    a = gen_shape_dataset(3, 4, size=16, jitter=0.0, noise=0.0)
    b = gen_shape_dataset(9, 4, size=16, jitter=0.0, noise=0.0)
    for label in (0, 1):
        group = [im.pixels for im in a if im.label == label] + [im.pixels for im in b if im.label == label]
        assert all(g.tobytes() == group[0].tobytes() for g in group)
    assert a.images[0].pixels.tobytes() != a.images[-1].pixels.tobytes()


def test_shape_balance_and_range():
    ds = gen_shape_dataset(2, 7, size=20, channels=3)
    assert ds.class_counts() == [7, 7]
    assert all(im.pixels.min() >= 0.0 and im.pixels.max() <= 1.0 for im in ds)
    assert ds.images[0].shape == (20, 20, 3)


def test_generators_reject_bad_sizes():
    with pytest.raises(ValueError):
        gen_shape_dataset(0, 0)
    with pytest.raises(ValueError):
        gen_texture_dataset(0, 2, size=8)


def test_per_image_randomness_independent_of_count():
    small = gen_shape_dataset(11, 3, size=16)
    large = gen_shape_dataset(11, 8, size=16)
    for im in small:
        twin = next(x for x in large if x.id == im.id)
        assert twin.pixels.tobytes() == im.pixels.tobytes()


def test_texture_is_learnable():
    ds = gen_texture_dataset(7, 100, size=32, channels=3)
    data = split(ds.images, 0.8, seed=1)
    model = ClassifierModel.build(None, (32, 32, 3), 2, seed=3)
    assert train(model, data, TrainConfig(epochs=10, seed=2)).validation_accuracy >= 0.9


# ---------------------------------------------------------------- images


def test_image_validation():
    with pytest.raises(ValueError):
        Image("bad id", np.zeros((2, 2, 1)), 0)
    with pytest.raises(ValueError):
        Image("x", np.full((2, 2, 1), 1.5), 0)
    im = Image("x", np.zeros((2, 2)), 0)
    assert im.shape == (2, 2, 1)
    with pytest.raises(ValueError):
        im.pixels[0, 0, 0] = 1.0


# ---------------------------------------------------------------- augmentation


def test_double_flip_is_identity():
    im = gen_shape_dataset(1, 1, size=16).images[0]
    once = augment(im, ["horizontal-flip"], seed=0)[0]
    twice = augment(once, ["horizontal-flip"], seed=0)[0]
    assert twice.pixels.tobytes() == im.pixels.tobytes()
    assert once.pixels.tobytes() != im.pixels.tobytes()


def test_unit_scale_is_identity():
    im = gen_texture_dataset(1, 1, size=16).images[0]
    assert augment(im, [("intensity-scale", 1.0)], seed=0)[0].pixels.tobytes() == im.pixels.tobytes()


def test_shift_moves_content_and_clamps():
    px = np.zeros((20, 20, 1))
    px[10, 10] = 1.0
    out = augment(Image("dot", px, 0), [("shift", (2, -1))], seed=0)[0]
    assert out.pixels[12, 9, 0] == 1.0 and out.pixels.sum() == 1.0
    with pytest.raises(ValueError):
        augment(Image("dot", px, 0), [("shift", (3, 0))], seed=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 4))
def test_augment_invariants(seed, factor):
    im = gen_shape_dataset(5, 1, size=16).images[0]
    before = im.pixels.copy()
    out = augment(im, ["horizontal-flip", "shift", "intensity-scale"], seed, factor)
    assert len(out) == factor
    assert all(o.pixels.min() >= 0 and o.pixels.max() <= 1 and o.label == im.label for o in out)
    assert np.array_equal(im.pixels, before)
    again = augment(im, ["horizontal-flip", "shift", "intensity-scale"], seed, factor)
    assert same_images(out, again)


def test_augment_dataset_ids_unique():
    ds = gen_shape_dataset(1, 5, size=16)
    big = augment_dataset(ds, ["horizontal-flip", "shift", "intensity-scale"], seed=3, factor=4)
    assert len(big) == 40 and big.class_counts() == [20, 20]
    assert len({im.id for im in big}) == 40


def test_unknown_op():
    im = gen_shape_dataset(1, 1, size=16).images[0]
    with pytest.raises(ValueError, match="unknown augmentation op"):
        augment(im, ["rotate"], seed=0)


# ---------------------------------------------------------------- files


@pytest.mark.parametrize("fill", [0.0, 1.0])
def test_constant_round_trip(tmp_path, fill):
    im = Image("flat", np.full((5, 7, 1), fill), 1, "steep")
    save_image(im, tmp_path / "f.pgm")
    back = load_image(tmp_path / "f.pgm")
    assert back.pixels.tobytes() == im.pixels.tobytes()
    assert (back.id, back.label, back.class_name) == ("flat", 1, "steep")


@pytest.mark.parametrize("channels,ext", [(1, "pgm"), (3, "ppm")])
def test_random_round_trip_within_quantization(tmp_path, channels, ext):
    px = np.random.default_rng(channels).uniform(size=(9, 6, channels))
    save_image(Image("r", px, 0), tmp_path / f"r.{ext}")
    back = load_image(tmp_path / f"r.{ext}")
    assert back.shape == px.shape
    assert np.max(np.abs(back.pixels - px)) <= 1 / 65535


def test_header_is_standard(tmp_path):
    save_image(Image("h", np.zeros((2, 3, 3)), 0), tmp_path / "h.ppm")
    raw = (tmp_path / "h.ppm").read_bytes()
    assert raw.startswith(b"P6\n")
    assert b"\n3 2\n65535\n" in raw
    assert len(raw.split(b"65535\n", 1)[1]) == 2 * 3 * 3 * 2


def test_distinct_format_errors(tmp_path):
    save_image(Image("e", np.zeros((4, 4, 1)), 0), tmp_path / "e.pgm")
    raw = (tmp_path / "e.pgm").read_bytes()
    (tmp_path / "trunc.pgm").write_bytes(raw[:-3])
    (tmp_path / "bad.pgm").write_bytes(b"P9\n4 4\n65535\n" + bytes(32))
    (tmp_path / "max.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(16))
    with pytest.raises(TruncatedPayloadError):
        load_image(tmp_path / "trunc.pgm")
    with pytest.raises(MalformedHeaderError):
        load_image(tmp_path / "bad.pgm")
    with pytest.raises(MaxvalMismatchError):
        load_image(tmp_path / "max.pgm")


def test_manifest_round_trip(tmp_path):
    ds = gen_shape_dataset(4, 3, size=16)
    manifest = save_dataset(ds, tmp_path / "ds")
    lines = manifest.read_text().splitlines()
    assert "# classes=shallow,steep" in lines and "id,path,label" in lines
    back = load_dataset(manifest)
    assert isinstance(back, Dataset) and back.class_names == ds.class_names and back.name == ds.name
    assert back.params["noise"] == ds.params["noise"]
    for a, b in zip(ds, back):
        assert a.id == b.id and a.label == b.label
        assert np.max(np.abs(a.pixels - b.pixels)) <= 1 / 65535
