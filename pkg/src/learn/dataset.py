"""Annotated-image records, JSONL manifests, synthetic oracle data, and
pluggable annotators.

The synthetic generator renders axis-aligned colored shapes on white and
writes boxes that equal each shape's exact rendered pixel extent, so it
doubles as ground truth for the region metrics.  Labels are drawn from a
fixed palette whose names encode shape and color ("red-square"), which lets
the oracle annotator invert color back to label.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .boxes import BoundingBox, validate_box
from .errors import (
    AnnotatorUnavailable,
    BadFractions,
    DuplicateId,
    InvalidBox,
    LearnError,
    MissingImage,
    ParseError,
    SpecInvalid,
)
from .seeding import derive_rng, sha256_hex

MANIFEST_SCHEMA = "learn-manifest-v1"

# label -> (RGB fill, shape kind); kinds: rect | disc | triangle
PALETTE: dict[str, tuple[tuple[int, int, int], str]] = {
    "red-square": ((220, 50, 47), "rect"),
    "blue-disc": ((38, 139, 210), "disc"),
    "green-triangle": ((133, 153, 0), "triangle"),
    "yellow-square": ((181, 137, 0), "rect"),
    "magenta-disc": ((211, 54, 130), "disc"),
    "cyan-triangle": ((42, 161, 152), "triangle"),
    "orange-square": ((203, 75, 22), "rect"),
    "violet-disc": ((108, 113, 196), "disc"),
}
DEFAULT_LABELS = ("red-square", "blue-disc", "green-triangle")
_WHITE = (255, 255, 255)
_PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class Region:
    label: str
    box: BoundingBox
    description: str = ""


@dataclass(frozen=True)
class AnnotatedImage:
    id: str
    image_path: str
    caption: str
    regions: tuple[Region, ...] = ()
    concept_tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[AnnotatedImage, ...]
    val: tuple[AnnotatedImage, ...]
    test: tuple[AnnotatedImage, ...]
    seed: int


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for the synthetic shape corpus."""

    num_records: int = 16
    image_size: int = 32
    shapes_per_image: tuple[int, int] = (1, 3)
    label_palette: tuple[str, ...] = DEFAULT_LABELS

    def validate(self):
        if self.num_records < 1:
            raise SpecInvalid("num_records must be >= 1")
        if self.image_size < 8:
            raise SpecInvalid("image_size must be >= 8")
        lo, hi = self.shapes_per_image
        if lo < 1 or hi < lo:
            raise SpecInvalid(f"bad shapes_per_image range ({lo}, {hi})")
        if not self.label_palette:
            raise SpecInvalid("label_palette must be non-empty")
        for label in self.label_palette:
            if label not in PALETTE:
                raise SpecInvalid(f"unknown palette label {label!r}; known: {sorted(PALETTE)}")


# -- manifest I/O ----------------------------------------------------------------


def _region_from_raw(raw, record_id: str, index: int) -> Region:
    if not isinstance(raw, dict):
        raise ParseError(f"record {record_id!r}: region {index} must be an object")
    label = raw.get("label")
    if not isinstance(label, str) or not label:
        raise ParseError(f"record {record_id!r}: region {index} needs a non-empty 'label'")
    try:
        box = validate_box(raw.get("box"))
    except (LearnError, TypeError, ValueError) as exc:
        raise InvalidBox(f"record {record_id!r}, region {index}: {exc}") from exc
    description = raw.get("description", "")
    if not isinstance(description, str):
        raise ParseError(f"record {record_id!r}: region {index} 'description' must be a string")
    return Region(label=label, box=box, description=description)


def record_from_dict(raw: dict, base_dir: Path | None = None) -> AnnotatedImage:
    """Build one validated AnnotatedImage from a decoded manifest record."""
    if not isinstance(raw, dict):
        raise ParseError(f"record must be an object, got {type(raw).__name__}")
    rid = raw.get("id")
    if not isinstance(rid, str) or not rid:
        raise ParseError("record needs a non-empty string 'id'")
    image = raw.get("image")
    if not isinstance(image, str) or not image:
        raise ParseError(f"record {rid!r}: needs an 'image' path")
    caption = raw.get("caption")
    if not isinstance(caption, str) or not caption:
        raise ParseError(f"record {rid!r}: caption must be a non-empty string")
    raw_regions = raw.get("regions", [])
    if not isinstance(raw_regions, list):
        raise ParseError(f"record {rid!r}: 'regions' must be a list")
    regions = tuple(_region_from_raw(r, rid, i) for i, r in enumerate(raw_regions))
    tags = raw.get("tags", [])
    if not isinstance(tags, list) or any(not isinstance(t, str) for t in tags):
        raise ParseError(f"record {rid!r}: 'tags' must be a list of strings")
    path = image
    if base_dir is not None and not os.path.isabs(image):
        path = os.path.abspath(os.path.join(str(base_dir), image))
    return AnnotatedImage(
        id=rid, image_path=path, caption=caption, regions=regions, concept_tags=tuple(tags)
    )


def record_to_dict(rec: AnnotatedImage, base_dir: Path | None = None) -> dict:
    image = rec.image_path
    if base_dir is not None and os.path.isabs(image):
        try:
            image = os.path.relpath(image, str(base_dir))
        except ValueError:
            pass  # different drive; keep absolute
    return {
        "id": rec.id,
        "image": image,
        "caption": rec.caption,
        "regions": [
            {
                "label": r.label,
                "box": [r.box.x, r.box.y, r.box.w, r.box.h],
                "description": r.description,
            }
            for r in rec.regions
        ],
        "tags": list(rec.concept_tags),
    }


def load_manifest(path: str | Path, check_images: bool = True) -> list[AnnotatedImage]:
    """Read a JSONL manifest: optional {"schema": ...} header line, then one
    record per line.  An empty file yields an empty list."""
    path = Path(path)
    if not path.exists():
        raise MissingImage(f"manifest not found: {path}")
    base_dir = path.parent
    records: list[AnnotatedImage] = []
    seen: set[str] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if lineno == 1 and isinstance(raw, dict) and set(raw) == {"schema"}:
                if raw["schema"] != MANIFEST_SCHEMA:
                    raise ParseError(f"{path}:1: unsupported schema {raw['schema']!r}")
                continue
            try:
                rec = record_from_dict(raw, base_dir=base_dir)
            except (ParseError, InvalidBox) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from exc
            if rec.id in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if check_images and not os.path.exists(rec.image_path):
                raise MissingImage(f"{path}:{lineno}: image not found: {rec.image_path}")
            records.append(rec)
    return records


def save_manifest(records: Sequence[AnnotatedImage], path: str | Path) -> Path:
    """Write records as JSONL with a schema header; image paths are made
    relative to the manifest's directory when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base_dir = path.parent.absolute()
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": MANIFEST_SCHEMA}) + "\n")
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec, base_dir=base_dir), sort_keys=True) + "\n")
    return path


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG to float64 H×W×3 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise MissingImage(str(path))
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_image(array: np.ndarray, path: str | Path) -> Path:
    """Write a float image in [0, 1] (H×W×3) as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB").save(path, format="PNG")
    return path


# -- synthetic rendering ---------------------------------------------------------


def _pixel_centers(size: int) -> tuple[np.ndarray, np.ndarray]:
    c = np.arange(size) + 0.5
    return np.meshgrid(c, c, indexing="ij")  # (rows y, cols x)


def _shape_mask(kind: str, size: int, r0: int, c0: int, extent: int) -> np.ndarray:
    """Boolean pixel mask of one shape inside its (extent × extent) cell
    anchored at row r0, col c0."""
    if kind == "rect":
        mask = np.zeros((size, size), dtype=bool)
        mask[r0 : r0 + extent, c0 : c0 + extent] = True
        return mask
    yy, xx = _pixel_centers(size)
    cy, cx = r0 + extent / 2.0, c0 + extent / 2.0
    if kind == "disc":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= (extent / 2.0) ** 2
    if kind == "triangle":
        # upward isoceles: apex top-center, base along the cell's bottom row
        top, bottom = float(r0), float(r0 + extent)
        half = extent / 2.0
        inside_y = (yy >= top) & (yy <= bottom)
        frac = np.clip((yy - top) / max(bottom - top, 1e-9), 0.0, 1.0)
        return inside_y & (np.abs(xx - cx) <= frac * half)
    raise SpecInvalid(f"unknown shape kind {kind!r}")


def _mask_extent_box(mask: np.ndarray, size: int) -> BoundingBox:
    rows, cols = np.nonzero(mask)
    r0, r1 = int(rows.min()), int(rows.max())
    c0, c1 = int(cols.min()), int(cols.max())
    return BoundingBox(x=c0 / size, y=r0 / size, w=(c1 + 1 - c0) / size, h=(r1 + 1 - r0) / size)


def _caption_for(regions: Sequence[Region]) -> str:
    ordered = sorted(regions, key=lambda r: (r.box.x, r.box.y, r.label))
    names = [f"a {r.label}" for r in ordered]
    if len(names) == 1:
        listing = names[0]
    else:
        listing = ", ".join(names[:-1]) + " and " + names[-1]
    return f"a scene with {listing} on a white background"


def _render_record(
    spec: SynthSpec, rng: np.random.Generator, forced: list[tuple[str, int, int, int]] | None = None
) -> tuple[np.ndarray, list[Region]]:
    """Render one image; returns (uint8 image, regions).  `forced` pins
    (label, r0, c0, extent) placements instead of sampling them."""
    size = spec.image_size
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    regions: list[Region] = []
    placed: list[tuple[int, int, int, int]] = []  # r0, r1, c0, c1 with margin

    if forced is None:
        count = int(rng.integers(spec.shapes_per_image[0], spec.shapes_per_image[1] + 1))
        todo = None
    else:
        count = len(forced)
        todo = forced

    min_ext = max(3, size // 8)
    max_ext = max(min_ext, size // 3)
    for i in range(count):
        for attempt in range(_PLACEMENT_TRIES + 1):
            if todo is not None:
                label, r0, c0, extent = todo[i]
            else:
                label = spec.label_palette[int(rng.integers(len(spec.label_palette)))]
                extent = int(rng.integers(min_ext, max_ext + 1))
                r0 = int(rng.integers(0, size - extent + 1))
                c0 = int(rng.integers(0, size - extent + 1))
            cell = (r0 - 1, r0 + extent + 1, c0 - 1, c0 + extent + 1)
            clash = any(
                cell[0] < p[1] and p[0] < cell[1] and cell[2] < p[3] and p[2] < cell[3]
                for p in placed
            )
            if not clash or todo is not None:
                break
            if attempt == _PLACEMENT_TRIES:
                raise SpecInvalid(
                    f"could not place {count} non-overlapping shapes on a {size}px canvas"
                )
        color, kind = PALETTE[label]
        mask = _shape_mask(kind, size, r0, c0, extent)
        if not mask.any():
            raise SpecInvalid(f"degenerate {kind} of extent {extent}")
        img[mask] = color
        placed.append(cell)
        box = _mask_extent_box(mask, size)
        regions.append(Region(label=label, box=box, description=f"a solid {label} shape"))
    return img, regions


def generate_synthetic_dataset(
    spec: SynthSpec | dict, seed: int, out_dir: str | Path
) -> tuple[list[AnnotatedImage], Path]:
    """Render `spec.num_records` shape scenes under out_dir/images and write
    out_dir/manifest.jsonl.  Bit-reproducible for a given (spec, seed)."""
    if isinstance(spec, dict):
        spec = SynthSpec(**spec)
    spec.validate()
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    records: list[AnnotatedImage] = []
    for i in range(spec.num_records):
        rng = derive_rng(seed, "record", i)
        img, regions = _render_record(spec, rng)
        rid = f"synth-{i:04d}"
        path = img_dir / f"{rid}.png"
        Image.fromarray(img, mode="RGB").save(path, format="PNG")
        records.append(
            AnnotatedImage(
                id=rid,
                image_path=os.path.abspath(path),
                caption=_caption_for(regions),
                regions=tuple(regions),
                concept_tags=("synthetic",),
            )
        )
    manifest = save_manifest(records, out_dir / "manifest.jsonl")
    return records, manifest


def generate_concept_dataset(
    out_dir: str | Path,
    seed: int,
    num_concepts: int = 4,
    samples_per_concept: int = 8,
    image_size: int = 32,
) -> tuple[list[AnnotatedImage], Path]:
    """Concept-structured corpus: each concept fixes an arrangement archetype
    (labels + nominal placements) and samples jitter around it, so layouts are
    similar within a concept and distinct across concepts.  Captions differ
    per sample.  Tags carry the concept id."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    labels = list(PALETTE)
    size = image_size
    unit = size // 4

    records: list[AnnotatedImage] = []
    for j in range(num_concepts):
        # two shapes per concept at concept-specific corners
        lab_a = labels[(2 * j) % len(labels)]
        lab_b = labels[(2 * j + 1) % len(labels)]
        anchors = [
            ((0, 0), (2 * unit, 2 * unit)),
            ((0, 2 * unit), (2 * unit, 0)),
            ((unit // 2, unit // 2), (2 * unit, 2 * unit)),
            ((2 * unit, unit), (0, unit)),
        ][j % 4]
        for k in range(samples_per_concept):
            rng = derive_rng(seed, "concept", j, k)
            forced = []
            for label, (r_base, c_base) in ((lab_a, anchors[0]), (lab_b, anchors[1])):
                extent = unit + int(rng.integers(0, max(unit // 2, 1)))
                r0 = int(np.clip(r_base + rng.integers(-1, 2), 0, size - extent))
                c0 = int(np.clip(c_base + rng.integers(-1, 2), 0, size - extent))
                forced.append((label, r0, c0, extent))
            spec = SynthSpec(num_records=1, image_size=size, label_palette=tuple(labels))
            img, regions = _render_record(spec, rng, forced=forced)
            rid = f"c{j}-s{k:02d}"
            path = img_dir / f"{rid}.png"
            Image.fromarray(img, mode="RGB").save(path, format="PNG")
            records.append(
                AnnotatedImage(
                    id=rid,
                    image_path=os.path.abspath(path),
                    caption=f"concept {j} study {k}: " + _caption_for(regions),
                    regions=tuple(regions),
                    concept_tags=(f"c{j}",),
                )
            )
    manifest = save_manifest(records, out_dir / "manifest.jsonl")
    return records, manifest


# -- annotators ------------------------------------------------------------------


def _oracle_annotator(image: np.ndarray) -> list[Region]:
    """Recover regions from a synthetic render by exact fill-color match and
    connected components."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    size_y, size_x = arr.shape[:2]
    found: list[tuple[float, Region]] = []
    for label, (color, _kind) in PALETTE.items():
        match = np.all(arr == np.asarray(color, dtype=np.uint8), axis=-1)
        if not match.any():
            continue
        comps, n = ndimage.label(match)
        for ci in range(1, n + 1):
            mask = comps == ci
            rows, cols = np.nonzero(mask)
            box = BoundingBox(
                x=cols.min() / size_x,
                y=rows.min() / size_y,
                w=(cols.max() + 1 - cols.min()) / size_x,
                h=(rows.max() + 1 - rows.min()) / size_y,
            )
            found.append((box.x, Region(label=label, box=box, description=f"a solid {label} shape")))
    found.sort(key=lambda t: (t[0], t[1].box.y, t[1].label))
    return [r for _, r in found]


def _stub_annotator(image: np.ndarray) -> list[Region]:
    return []


ANNOTATORS: dict[str, Callable[[np.ndarray], list[Region]]] = {
    "oracle": _oracle_annotator,
    "stub": _stub_annotator,
}


def register_annotator(name: str, fn: Callable[[np.ndarray], list[Region]]):
    ANNOTATORS[name] = fn


def annotate_image(image: np.ndarray, annotator: str | Callable = "oracle") -> list[Region]:
    """Run a registered annotator (by name) or a provided callable."""
    if callable(annotator):
        return list(annotator(image))
    fn = ANNOTATORS.get(annotator)
    if fn is None:
        raise AnnotatorUnavailable(f"no annotator named {annotator!r}; known: {sorted(ANNOTATORS)}")
    return list(fn(image))


# -- splits ----------------------------------------------------------------------


def split_dataset(
    records: Sequence[AnnotatedImage], fractions: tuple[float, float, float], seed: int
) -> DatasetSplit:
    """Deterministic train/val/test split.  Records are ordered by a seeded
    hash of their id (stable under input re-ordering), then sliced at
    boundaries round(cumfrac * n)."""
    if len(fractions) != 3:
        raise BadFractions("need exactly (train, val, test) fractions")
    if any(f < 0 for f in fractions):
        raise BadFractions("fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions sum to {sum(fractions)!r}, expected 1")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DuplicateId("records contain duplicate ids")
    ordered = sorted(records, key=lambda r: sha256_hex(f"{seed}|{r.id}"))
    n = len(ordered)
    b1 = round(fractions[0] * n)
    b2 = round((fractions[0] + fractions[1]) * n)
    return DatasetSplit(
        train=tuple(ordered[:b1]), val=tuple(ordered[b1:b2]), test=tuple(ordered[b2:]), seed=seed
    )
