import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learn.boxes import (
    BoundingBox,
    Embedding,
    Layout,
    LayoutElement,
    PositionEncoder,
    box_contains,
    box_iou,
    encode_position,
    layout_element_embedding,
    layout_from_dict,
    layout_from_json,
    layout_to_dict,
    layout_to_json,
    validate_box,
)
from learn.errors import DimensionMismatch, NonFinite, OutOfRange


def boxes(min_side=1e-6):
    return st.tuples(
        st.floats(0, 1 - min_side),
        st.floats(0, 1 - min_side),
        st.floats(min_side, 1),
        st.floats(min_side, 1),
    ).filter(lambda t: t[0] + t[2] <= 1.0 and t[1] + t[3] <= 1.0)


class TestValidateBox:
    def test_accepts_unit_box(self):
        b = validate_box((0.0, 0.0, 1.0, 1.0))
        assert b.as_tuple() == (0.0, 0.0, 1.0, 1.0)

    def test_accepts_interior_box(self):
        b = validate_box((0.2, 0.3, 0.5, 0.5))
        assert b.as_tuple() == (0.2, 0.3, 0.5, 0.5)

    def test_rejects_overflow(self):
        with pytest.raises(OutOfRange):
            validate_box((0.6, 0.0, 0.5, 0.2))

    def test_rejects_negative(self):
        with pytest.raises(OutOfRange):
            validate_box((-0.1, 0.0, 0.5, 0.5))

    def test_zero_extent_is_valid(self):
        # w >= 0 is the invariant; degenerate boxes are representable
        b = validate_box((0.1, 0.1, 0.0, 0.5))
        assert b.w == 0.0 and b.area == 0.0

    def test_rejects_nan(self):
        with pytest.raises(NonFinite):
            validate_box((float("nan"), 0.0, 0.5, 0.5))

    def test_rejects_wrong_arity(self):
        with pytest.raises(OutOfRange):
            validate_box((0.1, 0.1, 0.5))

    def test_clamps_tiny_overflow(self):
        b = validate_box((0.5, 0.0, 0.5 + 5e-10, 1.0))
        assert b.x + b.w <= 1.0


class TestBoxIou:
    def test_identical(self):
        b = BoundingBox(0.2, 0.2, 0.4, 0.4)
        assert box_iou(b, b) == pytest.approx(1.0)

    def test_disjoint(self):
        assert box_iou(BoundingBox(0, 0, 0.5, 0.5), BoundingBox(0.5, 0.5, 0.5, 0.5)) == 0.0

    def test_quarter_overlap_oracle(self):
        # intersection 0.25^2, union 2*0.25 - 0.0625 -> 1/7
        got = box_iou(BoundingBox(0, 0, 0.5, 0.5), BoundingBox(0.25, 0.25, 0.5, 0.5))
        assert got == pytest.approx(1.0 / 7.0, abs=1e-9)

    def test_zero_union(self):
        z = BoundingBox(0.5, 0.5, 0.0, 0.0)
        assert box_iou(z, z) == 0.0

    @given(boxes(), boxes())
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, t1, t2):
        b1, b2 = BoundingBox(*t1), BoundingBox(*t2)
        v = box_iou(b1, b2)
        assert 0.0 <= v <= 1.0 + 1e-9
        assert v == pytest.approx(box_iou(b2, b1), abs=1e-12)


class TestBoxContains:
    def test_interior(self):
        assert box_contains(BoundingBox(0.25, 0.25, 0.5, 0.5), 0.5, 0.5)

    def test_outside(self):
        assert not box_contains(BoundingBox(0.25, 0.25, 0.5, 0.5), 0.1, 0.9)

    def test_half_open_edges(self):
        b = BoundingBox(0.25, 0.25, 0.5, 0.5)
        assert box_contains(b, 0.25, 0.25)
        assert not box_contains(b, 0.75, 0.5)
        assert not box_contains(b, 0.5, 0.75)

    def test_degenerate_contains_nothing(self):
        assert not box_contains(BoundingBox(0.5, 0.5, 0.0, 0.5), 0.5, 0.6)


class TestEmbedding:
    def test_norm_and_dim(self):
        e = Embedding(np.array([3.0, 4.0]))
        assert e.norm == pytest.approx(5.0)
        assert e.dim == 2

    def test_rejects_2d(self):
        with pytest.raises(DimensionMismatch):
            Embedding(np.zeros((2, 2)))

    def test_rejects_nan(self):
        with pytest.raises(NonFinite):
            Embedding(np.array([1.0, float("nan")]))


class TestPositionEncoding:
    def test_zero_weights_give_zero(self):
        enc = PositionEncoder.zeros(8)
        out = encode_position(BoundingBox(0.1, 0.2, 0.3, 0.4), 8, enc)
        assert np.all(out.values == 0.0)

    def test_affine_oracle(self):
        # identity weight rows pick out the raw coordinates
        enc = PositionEncoder(np.eye(4), np.zeros(4))
        out = encode_position(BoundingBox(0.1, 0.2, 0.3, 0.4), 4, enc)
        assert np.allclose(out.values, [0.1, 0.2, 0.3, 0.4])

    def test_bias_only(self):
        enc = PositionEncoder(np.zeros((4, 3)), np.array([1.0, 2.0, 3.0]))
        out = encode_position(BoundingBox(0.5, 0.5, 0.1, 0.1), 3, enc)
        assert np.allclose(out.values, [1.0, 2.0, 3.0])

    def test_seeded_deterministic(self):
        a = PositionEncoder.seeded(16, seed=3)
        b = PositionEncoder.seeded(16, seed=3)
        box = BoundingBox(0.3, 0.3, 0.2, 0.2)
        assert np.array_equal(
            encode_position(box, 16, a).values, encode_position(box, 16, b).values
        )

    def test_dim_mismatch(self):
        enc = PositionEncoder.seeded(8, seed=0)
        with pytest.raises(DimensionMismatch):
            encode_position(BoundingBox(0.1, 0.1, 0.2, 0.2), 16, enc)

    def test_element_embedding_adds_label_and_position(self):
        enc = PositionEncoder.seeded(8, seed=0)
        el = LayoutElement("thing", BoundingBox(0.1, 0.1, 0.2, 0.2))
        lab = Embedding(np.ones(8))
        out = layout_element_embedding(el, lambda label: lab, enc)
        expected = lab.values + encode_position(el.box, 8, enc).values
        assert np.allclose(out.values, expected)

    def test_element_embedding_dim_mismatch(self):
        enc = PositionEncoder.seeded(8, seed=0)
        el = LayoutElement("thing", BoundingBox(0.1, 0.1, 0.2, 0.2))
        with pytest.raises(DimensionMismatch):
            layout_element_embedding(el, lambda label: Embedding(np.ones(4)), enc)


class TestLayoutElement:
    def test_empty_label_rejected(self):
        with pytest.raises(ValueError):
            LayoutElement("   ", BoundingBox(0, 0, 0.5, 0.5))


class TestLayoutSerialization:
    def _layout(self):
        return Layout(
            elements=[
                LayoutElement("a", BoundingBox(0.0, 0.0, 0.5, 0.5)),
                LayoutElement("b", BoundingBox(0.5, 0.5, 0.25, 0.25)),
            ],
            concept="demo",
        )

    def test_round_trip_dict(self):
        lay = self._layout()
        assert layout_from_dict(layout_to_dict(lay)) == lay

    def test_round_trip_json(self):
        lay = self._layout()
        assert layout_from_json(layout_to_json(lay)) == lay

    def test_json_is_stable_and_valid(self):
        lay = self._layout()
        assert layout_to_json(lay) == layout_to_json(lay)
        doc = json.loads(layout_to_json(lay))
        assert doc["concept"] == "demo"
        assert [el["label"] for el in doc["elements"]] == ["a", "b"]

    def test_layout_iteration(self):
        lay = self._layout()
        assert [el.label for el in lay] == ["a", "b"]
        assert len(lay) == 2

    def test_empty_layout(self):
        lay = Layout(elements=[], concept=None)
        assert layout_from_json(layout_to_json(lay)) == lay

    @given(boxes())
    @settings(max_examples=50, deadline=None)
    def test_box_precision_survives_json(self, t):
        lay = Layout(elements=[LayoutElement("x", BoundingBox(*t))])
        back = layout_from_json(layout_to_json(lay))
        assert back.elements[0].box.as_tuple() == pytest.approx(t, abs=1e-12)
