"""Normalized bounding-box geometry, layout elements, and layout embeddings.

All boxes live on the unit canvas: ``x`` and ``y`` are the top-left corner as
fractions of canvas width/height, ``w`` and ``h`` the extent.  Pixel
conversion happens only at render or mask time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFinite, OutOfRange

BOUND_TOL = 1e-9


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with normalized top-left corner and size."""

    x: float
    y: float
    w: float
    h: float

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class LayoutElement:
    """One object in a layout: a label plus its box."""

    label: str
    box: BoundingBox

    def __post_init__(self):
        if not self.label.strip():
            raise ValueError("layout element label must be non-empty")


@dataclass
class Layout:
    """Ordered set of labeled boxes, optionally tagged with a source concept."""

    elements: list[LayoutElement] = field(default_factory=list)
    concept: str | None = None

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)


@dataclass(frozen=True, eq=False)
class Embedding:
    """A finite real vector; the common currency of encoders and losses."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise DimensionMismatch(f"embedding must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFinite("embedding contains NaN or inf")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def validate_box(raw: Sequence[float]) -> BoundingBox:
    """Build a BoundingBox from a raw (x, y, w, h) 4-tuple.

    Values within ``BOUND_TOL`` of a bound are clamped onto it; anything
    further out raises.

    Raises:
        NonFinite: any coordinate is NaN or infinite.
        OutOfRange: a coordinate violates the unit-canvas invariants beyond
            tolerance, or the tuple has the wrong length.
    """
    vals = tuple(float(v) for v in raw)
    if len(vals) != 4:
        raise OutOfRange(f"expected 4 box coordinates, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise NonFinite(f"box contains non-finite values: {vals}")
    x, y, w, h = vals
    for name, v in (("x", x), ("y", y), ("w", w), ("h", h)):
        if v < -BOUND_TOL:
            raise OutOfRange(f"{name}={v} is negative")
    if x + w > 1.0 + BOUND_TOL:
        raise OutOfRange(f"x+w={x + w} exceeds the canvas")
    if y + h > 1.0 + BOUND_TOL:
        raise OutOfRange(f"y+h={y + h} exceeds the canvas")

    x, y, w, h = (max(v, 0.0) for v in (x, y, w, h))
    # clamp the far edge back onto the canvas when within tolerance
    if x + w > 1.0:
        w = 1.0 - x
    if y + h > 1.0:
        h = 1.0 - y
    return BoundingBox(x, y, w, h)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0 when the union has zero area."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_contains(b: BoundingBox, u: float, v: float) -> bool:
    """Half-open membership test: (u, v) in [x, x+w) x [y, y+h).

    The half-open convention lets adjacent boxes tile the canvas without
    double coverage.  Degenerate boxes (w=0 or h=0) contain nothing.
    """
    return b.x <= u < b.x2 and b.y <= v < b.y2


@dataclass(frozen=True)
class PositionEncoder:
    """Affine map of the raw (x, y, w, h) 4-vector into d dimensions."""

    weight: np.ndarray  # (4, d)
    bias: np.ndarray    # (d,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != 4:
            raise DimensionMismatch(f"position weight must be (4, d), got {w.shape}")
        if b.shape != (w.shape[1],):
            raise DimensionMismatch(
                f"position bias shape {b.shape} does not match weight {w.shape}"
            )
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return int(self.weight.shape[1])

    @classmethod
    def zeros(cls, d: int) -> "PositionEncoder":
        return cls(np.zeros((4, d)), np.zeros(d))

    @classmethod
    def seeded(cls, d: int, seed: int, scale: float = 1.0) -> "PositionEncoder":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((4, d)) * scale, rng.standard_normal(d) * scale)


def encode_position(b: BoundingBox, d: int, params: PositionEncoder) -> Embedding:
    """Map a box through the affine position encoder.

    Raises:
        DimensionMismatch: the encoder's output dimension is not ``d``.
    """
    if params.dim != d:
        raise DimensionMismatch(f"position encoder has d={params.dim}, expected {d}")
    vec = np.array(b.as_tuple(), dtype=np.float64)
    return Embedding(vec @ params.weight + params.bias)


def layout_element_embedding(
    e: LayoutElement,
    label_encoder: Callable[[str], Embedding],
    position_params: PositionEncoder,
) -> Embedding:
    """Layout embedding of one element: label embedding plus position embedding.

    ``label_encoder`` maps a label string to an Embedding whose dimension must
    equal the position encoder's.
    """
    label_emb = label_encoder(e.label)
    values = label_emb.values if isinstance(label_emb, Embedding) else np.asarray(label_emb, dtype=np.float64)
    if values.shape != (position_params.dim,):
        raise DimensionMismatch(
            f"label embedding dim {values.shape} != position dim {position_params.dim}"
        )
    pos = encode_position(e.box, position_params.dim, position_params)
    return Embedding(values + pos.values)


# -- serialization -------------------------------------------------------------

def layout_to_dict(layout: Layout) -> dict:
    """Canonical JSON-ready form; element order is preserved."""
    return {
        "concept": layout.concept,
        "elements": [
            {"label": e.label, "box": list(e.box.as_tuple())} for e in layout.elements
        ],
    }


def layout_from_dict(data: dict) -> Layout:
    elements = [
        LayoutElement(label=item["label"], box=validate_box(item["box"]))
        for item in data.get("elements", [])
    ]
    return Layout(elements=elements, concept=data.get("concept"))


def layout_to_json(layout: Layout) -> str:
    # repr-based float serialization round-trips exactly (>= 9 significant digits)
    return json.dumps(layout_to_dict(layout), sort_keys=True)


def layout_from_json(text: str) -> Layout:
    return layout_from_dict(json.loads(text))
