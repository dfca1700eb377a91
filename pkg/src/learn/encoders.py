"""Text, image, and region encoders behind one handle type.

Two backends share the same interface: a deterministic toy encoder used
throughout the test suite, and an optional pretrained vision-language
encoder loaded from local weights.  Both produce unit-norm embeddings in a
shared text/image space.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .boxes import BoundingBox, Embedding
from .errors import BackendUnavailable, BadShape, EmptyCrop, EmptyInput
from .seeding import derive_seed

_POOL = 8  # toy image features: 8x8 downsampled luminance
_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class EncoderHandle:
    """Immutable selector for an encoder backend.

    text_dim and image_dim are equal (shared embedding space); the toy
    backend derives everything from ``seed``.
    """

    kind: str
    text_dim: int
    image_dim: int
    seed: int = 0
    weights_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("toy", "pretrained"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.text_dim <= 0 or self.image_dim <= 0:
            raise ValueError("encoder dimensions must be positive")
        if self.text_dim != self.image_dim:
            raise ValueError("text_dim and image_dim must match (shared space)")

    @property
    def dim(self) -> int:
        return self.text_dim


def toy_encoder(dim: int = 64, seed: int = 0) -> EncoderHandle:
    return EncoderHandle(kind="toy", text_dim=dim, image_dim=dim, seed=seed)


def pretrained_encoder(weights_path: str, dim: int = 512) -> EncoderHandle:
    return EncoderHandle(
        kind="pretrained", text_dim=dim, image_dim=dim, weights_path=weights_path
    )


def encode_text(h: EncoderHandle, c: str) -> Embedding:
    """Unit-norm embedding of a string; deterministic per (handle, string).

    Raises:
        EmptyInput: the string is empty after trimming.
        BackendUnavailable: pretrained backend selected but not loadable.
    """
    if not c or not c.strip():
        raise EmptyInput("cannot encode an empty string")
    if h.kind == "toy":
        rng = np.random.default_rng(derive_seed(h.seed, "text", c))
        vec = rng.standard_normal(h.text_dim)
        return Embedding(vec / np.linalg.norm(vec))
    return _pretrained_backend(h).encode_text(c)


def encode_image(h: EncoderHandle, x: np.ndarray) -> Embedding:
    """Unit-norm embedding of an H x W x 3 image with values in [0, 1].

    The toy backend projects 8x8 area-averaged luminance (plus a constant
    feature, so even an all-black image maps to a well-defined direction)
    through a seeded Gaussian matrix.
    """
    arr = _check_image(x)
    if h.kind == "toy":
        t = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)  # 1x3xHxW float64
        with torch.no_grad():
            emb = toy_image_embedding(h, t)[0].numpy()
        return Embedding(emb)
    return _pretrained_backend(h).encode_image(arr)


def encode_region(h: EncoderHandle, x: np.ndarray, b: BoundingBox) -> Embedding:
    """Embedding of the pixel crop of ``x`` under box ``b``.

    Crop rounding: floor for origin, ceil for extent, clamped to image
    bounds.  The full-canvas box reproduces ``encode_image`` exactly.

    Raises:
        EmptyCrop: the box has zero area or rounds to an empty pixel window.
    """
    arr = _check_image(x)
    height, width = arr.shape[:2]
    y0, y1, x0, x1 = crop_window(b, height, width)
    return encode_image(h, arr[y0:y1, x0:x1])


def crop_window(b: BoundingBox, height: int, width: int) -> tuple[int, int, int, int]:
    """Pixel window (y0, y1, x0, x1) for a normalized box; raises EmptyCrop."""
    if b.w <= 0.0 or b.h <= 0.0:
        raise EmptyCrop(f"box {b.as_tuple()} has zero area")
    x0 = max(0, math.floor(b.x * width))
    y0 = max(0, math.floor(b.y * height))
    x1 = min(width, max(x0 + 1, math.ceil(b.x2 * width)))
    y1 = min(height, max(y0 + 1, math.ceil(b.y2 * height)))
    if x1 <= x0 or y1 <= y0:
        raise EmptyCrop(f"box {b.as_tuple()} rounds to an empty crop at {width}x{height}")
    return y0, y1, x0, x1


def toy_image_embedding(h: EncoderHandle, x: torch.Tensor) -> torch.Tensor:
    """Differentiable toy image embedding for a batch.

    Args:
        x: (B, 3, H, W) tensor with values in [0, 1].

    Returns:
        (B, image_dim) unit-norm embeddings, same dtype as ``x``.
    """
    if x.ndim != 4 or x.shape[1] != 3:
        raise BadShape(f"expected (B, 3, H, W), got {tuple(x.shape)}")
    r, g, b = x[:, 0], x[:, 1], x[:, 2]
    luma = _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b  # B x H x W
    pooled = F.adaptive_avg_pool2d(luma.unsqueeze(1), (_POOL, _POOL)).flatten(1)
    ones = torch.ones(pooled.shape[0], 1, dtype=pooled.dtype, device=pooled.device)
    feats = torch.cat([pooled, ones], dim=1)  # B x 65
    proj = torch.from_numpy(_toy_projection(h.seed, h.image_dim)).to(feats.dtype)
    return F.normalize(feats @ proj, dim=1, eps=1e-12)


def label_encoder(h: EncoderHandle) -> Callable[[str], Embedding]:
    """The f_label callable expected by layout_element_embedding."""
    return lambda s: encode_text(h, s)


@functools.lru_cache(maxsize=16)
def _toy_projection(seed: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "image-proj", dim))
    return rng.standard_normal((_POOL * _POOL + 1, dim))


def _check_image(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise BadShape(f"expected H x W x 3 image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise BadShape(f"image has empty spatial extent: {arr.shape}")
    return arr


class _ClipBackend:
    """Thin adapter over a locally stored CLIP checkpoint."""

    def __init__(self, handle: EncoderHandle):
        try:
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:  # pragma: no cover - depends on install
            raise BackendUnavailable("transformers is not installed") from e
        if not handle.weights_path:
            raise BackendUnavailable("pretrained encoder needs weights_path")
        try:
            self.model = CLIPModel.from_pretrained(handle.weights_path)
            self.processor = CLIPProcessor.from_pretrained(handle.weights_path)
        except Exception as e:
            raise BackendUnavailable(
                f"could not load weights from {handle.weights_path!r}: {e}"
            ) from e
        self.model.eval()

    def encode_text(self, c: str) -> Embedding:
        inputs = self.processor(text=[c], return_tensors="pt", padding=True)
        with torch.no_grad():
            feats = self.model.get_text_features(**inputs)[0]
        vec = feats.double().numpy()
        return Embedding(vec / np.linalg.norm(vec))

    def encode_image(self, arr: np.ndarray) -> Embedding:
        pixels = (arr * 255.0).round().astype(np.uint8)
        inputs = self.processor(images=pixels, return_tensors="pt")
        with torch.no_grad():
            feats = self.model.get_image_features(**inputs)[0]
        vec = feats.double().numpy()
        return Embedding(vec / np.linalg.norm(vec))


@functools.lru_cache(maxsize=4)
def _pretrained_backend(h: EncoderHandle) -> _ClipBackend:
    return _ClipBackend(h)
