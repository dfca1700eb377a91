"""Evaluation metrics: region IoU against reference masks, region-text
agreement, Frechet distance between feature sets, per-concept embedding
similarity statistics, and image clarity measures.

Numpy throughout; nothing here needs gradients.  Box coverage on a mask grid
uses cell centers: cell (r, c) of an H×W grid is covered when the point
((c+0.5)/W, (r+0.5)/H) falls inside the half-open box.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .boxes import BoundingBox, Layout
from .encoders import EncoderHandle, encode_region, encode_text
from .errors import (
    BadShape,
    EmptyCrop,
    EmptyReferences,
    InsufficientSamples,
    TooFewSamples,
)

DEFINITIONS_VERSION = "learn-metrics-1"

_EPS = 1e-12
_HIST_BINS = np.round(np.arange(-1.0, 1.0 + 0.025, 0.05), 10)  # width 0.05 over [-1, 1]


@dataclass(frozen=True)
class RegionMask:
    """Binary reference mask with a label.  Empty masks must be flagged."""

    grid: np.ndarray
    label: str
    allow_empty: bool = False

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=bool)
        if g.ndim != 2:
            raise BadShape(f"mask grid must be 2-D, got shape {g.shape}")
        if not g.any() and not self.allow_empty:
            raise BadShape("mask has no true cells; pass allow_empty=True if intended")
        object.__setattr__(self, "grid", g)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


def box_cell_mask(box: BoundingBox, height: int, width: int) -> np.ndarray:
    """Cells of an H×W grid whose centers lie inside the box."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    in_x = (xs >= box.x) & (xs < box.x + box.w)
    in_y = (ys >= box.y) & (ys < box.y + box.h)
    return np.outer(in_y, in_x)


def mask_from_box(box: BoundingBox, label: str, height: int, width: int) -> RegionMask:
    """Rasterize a normalized box to a RegionMask on an H×W grid."""
    return RegionMask(grid=box_cell_mask(box, height, width), label=label, allow_empty=True)


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    return inter / union if union > 0 else 0.0


def sam_iou(predicted: Layout, references: Sequence[RegionMask]) -> float:
    """100 × mean IoU between predicted boxes and reference masks.

    Predictions are rasterized onto each reference's grid.  Matching is
    greedy: same-label pairs are considered first, ordered by descending IoU,
    then remaining pairs; each prediction and reference matches at most once,
    and unmatched references score 0.
    """
    refs = list(references)
    if not refs:
        raise EmptyReferences("sam_iou needs at least one reference mask")
    preds = list(predicted)
    if not preds:
        return 0.0

    pairs = []  # (cross_label, -iou, ref_idx, pred_idx, iou)
    for ri, ref in enumerate(refs):
        h, w = ref.shape
        for pi, el in enumerate(preds):
            iou = _mask_iou(box_cell_mask(el.box, h, w), ref.grid)
            if iou > 0.0:
                pairs.append((el.label != ref.label, -iou, ri, pi, iou))
    pairs.sort()

    ref_score = [0.0] * len(refs)
    used_pred: set[int] = set()
    matched_ref: set[int] = set()
    for _, _, ri, pi, iou in pairs:
        if ri in matched_ref or pi in used_pred:
            continue
        matched_ref.add(ri)
        used_pred.add(pi)
        ref_score[ri] = iou
    return 100.0 * float(np.mean(ref_score))


def crop_clip_score(image: np.ndarray, layout: Layout, enc: EncoderHandle) -> float:
    """100 × mean cosine between each region crop's embedding and its label's
    text embedding.  Degenerate crops are skipped with a warning; if nothing
    is scorable the error propagates.
    """
    elements = list(layout)
    if not elements:
        raise EmptyReferences("crop_clip_score needs at least one layout element")
    sims = []
    for i, el in enumerate(elements):
        try:
            region = encode_region(enc, image, el.box)
        except EmptyCrop:
            warnings.warn(f"element {i} ({el.label!r}): empty crop, skipped", stacklevel=2)
            continue
        text = encode_text(enc, el.label)
        sims.append(float(region.values @ text.values))
    if not sims:
        raise EmptyCrop("every layout element produced an empty crop")
    return 100.0 * float(np.mean(sims))


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, regularizing with
    1e-6·I when numerical negative eigenvalues appear."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() < 0.0:
        sym = sym + 1e-6 * np.eye(sym.shape[0])
        vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_score(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets:
    ‖μa−μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2})."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise BadShape("feature sets must be 2-D (n_samples, dim)")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise TooFewSamples("each feature set needs at least 2 samples")
    if a.shape[1] != b.shape[1]:
        raise BadShape(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    if cov_a.ndim == 0:  # dim-1 features
        cov_a = cov_a.reshape(1, 1)
        cov_b = cov_b.reshape(1, 1)

    # Tr((Σa Σb)^1/2) via the similar symmetric product S Σb S, S = Σa^1/2.
    s = _sqrtm_psd(cov_a)
    inner = s @ cov_b @ s
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < 0.0:
        vals = np.linalg.eigvalsh((inner + inner.T) / 2.0 + 1e-6 * np.eye(inner.shape[0]))
    tr_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())

    diff = mu_a - mu_b
    fid = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(fid, 0.0)


@dataclass(frozen=True)
class ConceptSimilarityStats:
    """Pairwise-cosine summary per concept and across concepts."""

    per_concept: dict[str, dict]
    intra_mean: float
    inter_mean: float | None  # None when only one concept has embeddings
    inter_defined: bool
    margin: float | None
    histogram_intra: np.ndarray
    histogram_inter: np.ndarray
    bin_edges: np.ndarray


def _unit_rows(vectors) -> np.ndarray:
    arr = np.stack([np.asarray(getattr(v, "values", v), dtype=np.float64) for v in vectors])
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    return arr / np.maximum(norms, _EPS)


def intra_concept_similarity_stats(
    embeddings_by_concept: Mapping[str, Sequence],
) -> ConceptSimilarityStats:
    """Cosine similarity statistics within and across concepts.

    intra: all unordered same-concept pairs; inter: all cross-concept pairs.
    At least one concept must have two embeddings.  Histograms use bin width
    0.05 over [-1, 1].
    """
    units = {c: _unit_rows(vs) for c, vs in embeddings_by_concept.items() if len(vs) > 0}
    if not any(u.shape[0] >= 2 for u in units.values()):
        raise InsufficientSamples("no concept has 2 or more embeddings")

    per_concept: dict[str, dict] = {}
    intra_vals: list[np.ndarray] = []
    for c, u in units.items():
        n = u.shape[0]
        if n >= 2:
            sims = (u @ u.T)[np.triu_indices(n, k=1)]
            intra_vals.append(sims)
            per_concept[c] = {"count": n, "mean": float(sims.mean()), "pairs": sims.size}
        else:
            per_concept[c] = {"count": n, "mean": None, "pairs": 0}

    inter_vals: list[np.ndarray] = []
    names = sorted(units)
    for i, ci in enumerate(names):
        for cj in names[i + 1 :]:
            inter_vals.append((units[ci] @ units[cj].T).ravel())

    intra_all = np.concatenate(intra_vals)
    intra_mean = float(intra_all.mean())
    if inter_vals:
        inter_all = np.concatenate(inter_vals)
        inter_mean = float(inter_all.mean())
        inter_defined = True
        margin = intra_mean - inter_mean
    else:
        inter_all = np.empty(0)
        inter_mean = None
        inter_defined = False
        margin = None

    hist_intra, edges = np.histogram(np.clip(intra_all, -1.0, 1.0), bins=_HIST_BINS)
    hist_inter, _ = np.histogram(np.clip(inter_all, -1.0, 1.0), bins=_HIST_BINS)
    return ConceptSimilarityStats(
        per_concept=per_concept,
        intra_mean=intra_mean,
        inter_mean=inter_mean,
        inter_defined=inter_defined,
        margin=margin,
        histogram_intra=hist_intra,
        histogram_inter=hist_inter,
        bin_edges=edges,
    )


def clarity_metrics(image: np.ndarray) -> tuple[float, float]:
    """(luminance variance, edge clutter index) of an H×W×3 image in [0, 1].

    Luminance is 0.299R + 0.587G + 0.114B; variance is the population
    variance over pixels; edge clutter is the mean magnitude of the 3×3
    Sobel gradient with replicated borders.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise BadShape(f"expected H×W×3 image, got shape {img.shape}")
    if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > 1.0:
        raise BadShape("image values must be finite and within [0, 1]")
    lum = img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114
    variance = float(lum.var())
    gx = ndimage.sobel(lum, axis=1, mode="nearest")
    gy = ndimage.sobel(lum, axis=0, mode="nearest")
    clutter = float(np.hypot(gx, gy).mean())
    return variance, clutter


@dataclass(frozen=True)
class MetricReport:
    """Aggregated metric values plus the per-item rows they average."""

    sam_iou: float | None
    crop_clip: float | None
    fid: float | None
    items: tuple[dict, ...] = field(default_factory=tuple)
    definitions_version: str = DEFINITIONS_VERSION
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "definitions_version": self.definitions_version,
            "sam_iou": self.sam_iou,
            "crop_clip": self.crop_clip,
            "fid": self.fid,
            "items": list(self.items),
            "notes": list(self.notes),
        }


def build_report(items: Sequence[dict], fid: float | None = None, notes: Sequence[str] = ()) -> MetricReport:
    """Aggregate per-item rows into a MetricReport; aggregates are plain means
    over the items where the metric is present."""

    def _mean(key: str) -> float | None:
        vals = [it[key] for it in items if it.get(key) is not None]
        return float(np.mean(vals)) if vals else None

    return MetricReport(
        sam_iou=_mean("sam_iou"),
        crop_clip=_mean("crop_clip"),
        fid=fid,
        items=tuple(dict(it) for it in items),
        notes=tuple(notes),
    )
