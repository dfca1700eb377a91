"""Training objectives: token alignment, layout contrast, intra-concept
cohesion, their combination, and the image-text semantic alignment term.

Similarity is cosine throughout.  Every function accepts numpy arrays,
Embedding objects, or torch tensors; softmax terms are computed in log-space
with row-max subtraction.  Passing torch tensors keeps the autograd graph
(returns a 0-dim tensor); plain arrays return a float.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .boxes import Embedding
from .encoders import EncoderHandle, encode_image, encode_text
from .errors import AllMasked, MismatchedLengths, ZeroVector

_EPS = 1e-12
_AUGMENT_RESAMPLES = 8


@dataclass(frozen=True)
class LossConfig:
    """Temperatures, weights, and augmentation probabilities."""

    tau: float = 0.07
    lambda_align: float = 1.0
    lambda_laycontrast: float = 0.5
    lambda_semantic: float = 1.0
    lambda_intra: float = 0.36
    augment_mask_prob: float = 0.1
    augment_dropout: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        for name in ("lambda_align", "lambda_laycontrast", "lambda_semantic", "lambda_intra"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("augment_mask_prob", "augment_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")


def _as_tensor(x) -> tuple[torch.Tensor, bool]:
    """Coerce Embedding / ndarray / tensor input; flag whether it was a tensor."""
    if isinstance(x, torch.Tensor):
        return x, True
    if isinstance(x, Embedding):
        return torch.from_numpy(x.values), False
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], Embedding):
        return torch.from_numpy(np.stack([e.values for e in x])), False
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), False


def _check_nonzero(t: torch.Tensor, what: str):
    norms = t.detach().norm(dim=-1)
    if bool((norms < _EPS).any()):
        raise ZeroVector(f"{what} contains a (numerically) zero vector")


def _ret(value: torch.Tensor, keep_tensor: bool):
    return value if keep_tensor else float(value)


def cosine_similarity(a, b) -> float | torch.Tensor:
    """dot(a, b) / (|a| |b|); raises ZeroVector on zero input."""
    ta, tens_a = _as_tensor(a)
    tb, tens_b = _as_tensor(b)
    if ta.shape[-1] != tb.shape[-1]:
        raise MismatchedLengths(f"dims {ta.shape[-1]} != {tb.shape[-1]}")
    _check_nonzero(ta.reshape(1, -1) if ta.ndim == 1 else ta, "first argument")
    _check_nonzero(tb.reshape(1, -1) if tb.ndim == 1 else tb, "second argument")
    sim = F.cosine_similarity(ta, tb, dim=-1, eps=_EPS)
    return _ret(sim, tens_a or tens_b)


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    an = F.normalize(a, dim=1, eps=_EPS)
    bn = F.normalize(b, dim=1, eps=_EPS)
    return an @ bn.T


def token_alignment_loss(l, v, tau: float | None = None, cfg: LossConfig | None = None):
    """InfoNCE over the N tokens of one layout-image pair.

    Each layout embedding l_i is the anchor; its matched region embedding v_i
    is the positive and the other regions of the same image are negatives:

        -(1/N) sum_i log softmax_j(sim(l_i, v_j)/tau)[i]
    """
    tau = _resolve_tau(tau, cfg)
    tl, keep_l = _as_tensor(l)
    tv, keep_v = _as_tensor(v)
    if tl.ndim == 1:
        tl = tl.unsqueeze(0)
    if tv.ndim == 1:
        tv = tv.unsqueeze(0)
    if tl.shape[0] != tv.shape[0]:
        raise MismatchedLengths(f"{tl.shape[0]} layout vs {tv.shape[0]} region embeddings")
    if tl.shape[0] == 0:
        raise MismatchedLengths("need at least one embedding pair")
    _check_nonzero(tl, "layout embeddings")
    _check_nonzero(tv, "region embeddings")
    logits = _cosine_matrix(tl, tv) / tau
    log_probs = F.log_softmax(logits, dim=1)
    loss = -log_probs.diagonal().mean()
    return _ret(loss, keep_l or keep_v)


def layout_contrastive_loss(l, l_plus, tau: float | None = None, cfg: LossConfig | None = None):
    """Batch-level InfoNCE separating global layout embeddings.

    The positive for anchor k is its augmented view l_k^+; the denominator
    enumerates the batch anchors themselves (including k).  Averaged over the
    batch size B.
    """
    tau = _resolve_tau(tau, cfg)
    tl, keep_l = _as_tensor(l)
    tp, keep_p = _as_tensor(l_plus)
    if tl.ndim == 1:
        tl = tl.unsqueeze(0)
    if tp.ndim == 1:
        tp = tp.unsqueeze(0)
    if tl.shape[0] != tp.shape[0]:
        raise MismatchedLengths(f"{tl.shape[0]} anchors vs {tp.shape[0]} positives")
    if tl.shape[0] == 0:
        raise MismatchedLengths("need at least one anchor")
    _check_nonzero(tl, "global embeddings")
    _check_nonzero(tp, "augmented embeddings")
    pos = F.cosine_similarity(tl, tp, dim=1, eps=_EPS) / tau
    denom = torch.logsumexp(_cosine_matrix(tl, tl) / tau, dim=1)
    loss = -(pos - denom).mean()
    return _ret(loss, keep_l or keep_p)


def intra_concept_loss(group):
    """Mean pairwise cosine distance over one concept's embeddings.

    All ordered pairs count, including i=j (which contribute zero), matching
    the 1/|P|^2 normalization.  Result lies in [0, 2].
    """
    tg, keep = _as_tensor(group)
    if tg.ndim == 1:
        tg = tg.unsqueeze(0)
    if tg.shape[0] == 0:
        raise MismatchedLengths("need at least one embedding")
    _check_nonzero(tg, "concept embeddings")
    loss = 1.0 - _cosine_matrix(tg, tg).mean()
    return _ret(loss, keep)


def combined_layout_loss(laycontrast, intra, cfg: LossConfig):
    """Final layout objective: laycontrast + lambda_intra * intra."""
    return laycontrast + cfg.lambda_intra * intra


def semantic_alignment_from_embeddings(text_emb, image_emb):
    """1 - cos between text and image embeddings; the differentiable core."""
    return 1.0 - cosine_similarity(text_emb, image_emb)


def semantic_alignment_loss(c: str, x_hat: np.ndarray, enc: EncoderHandle) -> float:
    """1 - cos(f_text(c), f_image(x_hat)), in [0, 2]."""
    t = encode_text(enc, c)
    i = encode_image(enc, x_hat)
    return float(semantic_alignment_from_embeddings(t, i))


# -- embedding augmentation ------------------------------------------------------

def sample_augment_mask(dim: int, cfg: LossConfig, rng: np.random.Generator) -> np.ndarray:
    """One multiplicative augmentation mask: coordinate masking then
    dropout-style scaled zeroing.  Returns a (dim,) float64 array."""
    keep = np.ones(dim)
    if cfg.augment_mask_prob > 0:
        keep *= rng.random(dim) >= cfg.augment_mask_prob
    if cfg.augment_dropout > 0:
        drop = rng.random(dim) < cfg.augment_dropout
        keep *= np.where(drop, 0.0, 1.0 / (1.0 - cfg.augment_dropout))
    return keep


def augment_layout_embedding(l, cfg: LossConfig, seed: int) -> Embedding:
    """Stochastically masked view of an embedding, re-normalized to unit length.

    Deterministic given the seed.  Resamples internally up to 8 times if the
    mask zeroes everything, then raises AllMasked.
    """
    emb = l if isinstance(l, Embedding) else Embedding(np.asarray(l, dtype=np.float64))
    if cfg.augment_mask_prob == 0.0 and cfg.augment_dropout == 0.0:
        return Embedding(emb.values.copy())
    rng = np.random.default_rng(seed)
    for _ in range(_AUGMENT_RESAMPLES):
        out = emb.values * sample_augment_mask(emb.dim, cfg, rng)
        norm = np.linalg.norm(out)
        if norm > _EPS:
            return Embedding(out / norm)
    raise AllMasked(f"augmentation zeroed all {emb.dim} coordinates {_AUGMENT_RESAMPLES} times")


def _resolve_tau(tau: float | None, cfg: LossConfig | None) -> float:
    if tau is None:
        tau = (cfg or LossConfig()).tau
    if tau <= 0:
        raise ValueError("tau must be positive")
    return float(tau)
