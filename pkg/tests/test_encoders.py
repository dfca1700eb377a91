import numpy as np
import pytest
import torch

from learn.boxes import BoundingBox
from learn.encoders import (
    EncoderHandle,
    crop_window,
    encode_image,
    encode_region,
    encode_text,
    label_encoder,
    toy_encoder,
    toy_image_embedding,
)
from learn.errors import BadShape, EmptyCrop, EmptyInput


@pytest.fixture
def enc():
    return toy_encoder(dim=64, seed=0)


def _image(seed, h=16, w=16):
    return np.random.default_rng(seed).random((h, w, 3))


class TestHandle:
    def test_dims_must_match(self):
        with pytest.raises(ValueError):
            EncoderHandle(kind="toy", text_dim=64, image_dim=32)

    def test_dims_positive(self):
        with pytest.raises(ValueError):
            EncoderHandle(kind="toy", text_dim=0, image_dim=0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            EncoderHandle(kind="magic", text_dim=8, image_dim=8)


class TestEncodeText:
    def test_deterministic(self, enc):
        a = encode_text(enc, "a lever on a fulcrum")
        b = encode_text(enc, "a lever on a fulcrum")
        assert np.array_equal(a.values, b.values)

    def test_unit_norm(self, enc):
        for s in ("lever", "magnet", "a very long caption " * 10):
            assert encode_text(enc, s).norm == pytest.approx(1.0, abs=1e-6)

    def test_distinct_strings_distinct_vectors(self, enc):
        a = encode_text(enc, "lever")
        b = encode_text(enc, "magnet")
        assert float(a.values @ b.values) < 0.999

    def test_empty_rejected(self, enc):
        with pytest.raises(EmptyInput):
            encode_text(enc, "")
        with pytest.raises(EmptyInput):
            encode_text(enc, "   ")

    def test_seed_changes_embedding(self):
        a = encode_text(toy_encoder(dim=64, seed=0), "lever")
        b = encode_text(toy_encoder(dim=64, seed=1), "lever")
        assert not np.array_equal(a.values, b.values)

    def test_fresh_handle_reproduces(self):
        # bit-reproducible given (seed, input), not tied to handle identity
        a = encode_text(toy_encoder(dim=32, seed=7), "pulley")
        b = encode_text(toy_encoder(dim=32, seed=7), "pulley")
        assert np.array_equal(a.values, b.values)


class TestEncodeImage:
    def test_deterministic(self, enc):
        img = _image(0)
        assert np.array_equal(encode_image(enc, img).values, encode_image(enc, img).values)

    def test_black_vs_white(self, enc):
        black = np.zeros((16, 16, 3))
        white = np.ones((16, 16, 3))
        a, b = encode_image(enc, black), encode_image(enc, white)
        assert not np.allclose(a.values, b.values)

    def test_unit_norm_random(self, enc):
        for s in range(5):
            assert encode_image(enc, _image(s)).norm == pytest.approx(1.0, abs=1e-6)

    def test_bad_shape(self, enc):
        with pytest.raises(BadShape):
            encode_image(enc, np.zeros((16, 16)))
        with pytest.raises(BadShape):
            encode_image(enc, np.zeros((16, 16, 4)))
        with pytest.raises(BadShape):
            encode_image(enc, np.zeros((0, 16, 3)))


class TestEncodeRegion:
    def test_full_canvas_identity(self, enc):
        img = _image(1)
        whole = encode_region(enc, img, BoundingBox(0.0, 0.0, 1.0, 1.0))
        assert np.array_equal(whole.values, encode_image(enc, img).values)

    def test_disjoint_halves_distinct(self, enc):
        img = np.zeros((16, 16, 3))
        img[:, 8:] = 1.0  # left black, right white
        left = encode_region(enc, img, BoundingBox(0.0, 0.0, 0.5, 1.0))
        right = encode_region(enc, img, BoundingBox(0.5, 0.0, 0.5, 1.0))
        assert not np.allclose(left.values, right.values)

    def test_zero_width_raises(self, enc):
        with pytest.raises(EmptyCrop):
            encode_region(enc, _image(2), BoundingBox(0.5, 0.5, 0.0, 0.5))

    def test_tiny_box_rounds_to_one_pixel(self, enc):
        out = encode_region(enc, _image(3), BoundingBox(0.5, 0.5, 1e-4, 1e-4))
        assert out.dim == enc.dim


class TestCropWindow:
    def test_full(self):
        assert crop_window(BoundingBox(0, 0, 1, 1), 16, 16) == (0, 16, 0, 16)

    def test_half(self):
        y0, y1, x0, x1 = crop_window(BoundingBox(0.5, 0.0, 0.5, 1.0), 16, 16)
        assert (y0, y1, x0, x1) == (0, 16, 8, 16)

    def test_floor_origin_ceil_extent(self):
        y0, y1, x0, x1 = crop_window(BoundingBox(0.26, 0.26, 0.5, 0.5), 16, 16)
        assert (x0, x1) == (4, 13) and (y0, y1) == (4, 13)

    def test_minimum_one_pixel(self):
        y0, y1, x0, x1 = crop_window(BoundingBox(0.99, 0.99, 0.005, 0.005), 16, 16)
        assert x1 - x0 >= 1 and y1 - y0 >= 1

    def test_zero_area_raises(self):
        with pytest.raises(EmptyCrop):
            crop_window(BoundingBox(0.5, 0.5, 0.0, 0.1), 16, 16)


class TestToyImageEmbedding:
    def test_matches_numpy_path(self, enc):
        img = _image(4)
        t = torch.from_numpy(img).permute(2, 0, 1).unsqueeze(0)
        batched = toy_image_embedding(enc, t)[0].numpy()
        assert np.allclose(batched, encode_image(enc, img).values)

    def test_gradient_flows(self, enc):
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64, requires_grad=True)
        out = toy_image_embedding(enc, x)
        out.sum().backward()
        assert x.grad is not None and torch.isfinite(x.grad).all()

    def test_bad_shape(self, enc):
        with pytest.raises(BadShape):
            toy_image_embedding(enc, torch.rand(3, 16, 16))


def test_label_encoder_matches_encode_text(enc):
    f = label_encoder(enc)
    assert np.array_equal(f("ball").values, encode_text(enc, "ball").values)
