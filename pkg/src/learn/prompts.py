"""Positive/negative prompt embedding modulation and background pseudo-prompt
selection by clarity scoring.

Modulation is additive with renormalization: the positive embedding pulls the
text embedding toward shared traits, the negative pushes it away from
unwanted variance.  Background selection generates trial images per candidate
and keeps the one whose renders are flattest (lowest weighted luminance
variance + edge clutter).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .boxes import Embedding, Layout
from .errors import DimensionMismatch, EmptyCandidates, ZeroVector
from .metrics import clarity_metrics

_EPS = 1e-12


@dataclass(frozen=True)
class PromptModulator:
    """Learned positive/negative directions with their strengths."""

    positive: Embedding
    negative: Embedding
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.positive.dim != self.negative.dim:
            raise DimensionMismatch(
                f"positive dim {self.positive.dim} != negative dim {self.negative.dim}"
            )
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")


def apply_prompt_modulation(e: Embedding, m: PromptModulator) -> Embedding:
    """unit-normalize(e + alpha * positive - beta * negative).

    With alpha = beta = 0 the input comes back unchanged (no renormalization),
    so un-normalized embeddings pass through exactly.
    """
    if e.dim != m.positive.dim:
        raise DimensionMismatch(f"embedding dim {e.dim} != modulator dim {m.positive.dim}")
    if m.alpha == 0.0 and m.beta == 0.0:
        return Embedding(e.values.copy())
    combined = e.values + m.alpha * m.positive.values - m.beta * m.negative.values
    norm = np.linalg.norm(combined)
    if norm < _EPS:
        raise ZeroVector("modulated embedding vanished")
    return Embedding(combined / norm)


def select_background_pseudo_prompt(
    candidates: Sequence[Embedding],
    model,
    layout: Layout,
    seeds: Sequence[int] = (0, 1, 2),
    clarity_weights: tuple[float, float] = (0.5, 0.5),
    render_fn: Callable | None = None,
) -> tuple[Embedding, int, list[float]]:
    """Pick the candidate whose generated backgrounds are cleanest.

    Each candidate is appended to the layout conditioning as one extra token
    and one image is sampled per seed; the score is
    w1 * luminance_variance + w2 * edge_clutter averaged over seeds, lower
    better, ties broken by candidate index.  Returns (winner, index, scores).

    render_fn(candidate, seed) -> image overrides the default generation path
    (used by tests to plant known images).
    """
    cands = list(candidates)
    if not cands:
        raise EmptyCandidates("need at least one candidate embedding")
    w1, w2 = clarity_weights

    if render_fn is None:
        from .diffusion import generate_with_extra_context

        def render_fn(cand: Embedding, seed: int):
            return generate_with_extra_context(model, layout, extra=cand, seed=seed)

    scores: list[float] = []
    for ci, cand in enumerate(cands):
        vals = []
        for seed in seeds:
            img = render_fn(cand, seed)
            lum_var, clutter = clarity_metrics(np.asarray(img))
            vals.append(w1 * lum_var + w2 * clutter)
        scores.append(float(np.mean(vals)))
    best = int(np.argmin(scores))  # argmin takes the first minimum: index tie-break
    return cands[best], best, scores
