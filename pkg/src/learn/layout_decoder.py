"""Caption-to-layout decoder: learned queries cross-attend to a projected
text embedding; heads emit a label, a box, and an objectness score per query.

Boxes come out of a squashing map (sigmoid for size, position scaled into the
remaining room), so every prediction satisfies the unit-canvas invariants by
construction.  Supervision matches queries to ground-truth regions with a
Hungarian assignment on label + box cost, DETR-style; the contrastive terms
(token alignment, batch layout contrast, intra-concept cohesion) ride on the
same matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .boxes import BoundingBox, Embedding, Layout, LayoutElement, box_iou
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import AnnotatedImage, load_image
from .encoders import EncoderHandle, encode_region, encode_text
from .errors import (
    EmptyCrop,
    EmptyDataset,
    EmptyInput,
    NonFiniteLoss,
    ParseError,
    UnknownLabel,
)
from .losses import LossConfig, sample_augment_mask
from .seeding import derive_rng, derive_seed

_EPS = 1e-12


@dataclass(frozen=True)
class LayoutDecoderConfig:
    """Architecture and decoding knobs for the layout decoder."""

    label_vocab: tuple[str, ...]
    max_tokens: int = 40
    embed_dim: int = 768
    num_layers: int = 4
    num_heads: int = 8
    objectness_threshold: float = 0.5
    text_dim: int = 512
    region_dim: int = 64
    use_layout_queries: bool = True  # False zeroes and freezes the queries

    def __post_init__(self):
        object.__setattr__(self, "label_vocab", tuple(self.label_vocab))
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if not self.label_vocab:
            raise ValueError("label_vocab must be non-empty")
        if len(set(self.label_vocab)) != len(self.label_vocab):
            raise ValueError("label_vocab contains duplicates")
        if not 0.0 <= self.objectness_threshold <= 1.0:
            raise ValueError("objectness_threshold must be in [0, 1]")


def _squash_boxes(raw: torch.Tensor) -> torch.Tensor:
    """(..., 4) raw head output -> (..., 4) boxes inside the unit canvas:
    w = sigmoid(rw), h = sigmoid(rh), x = sigmoid(rx)(1-w), y = sigmoid(ry)(1-h)."""
    rx, ry, rw, rh = raw.unbind(-1)
    w = torch.sigmoid(rw)
    h = torch.sigmoid(rh)
    x = torch.sigmoid(rx) * (1.0 - w)
    y = torch.sigmoid(ry) * (1.0 - h)
    return torch.stack([x, y, w, h], dim=-1)


class LayoutDecoderModel(nn.Module):
    def __init__(self, config: LayoutDecoderConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.query_embed = nn.Parameter(torch.randn(config.max_tokens, d) * 0.02)
        self.text_proj = nn.Linear(config.text_dim, d)
        layer = nn.TransformerDecoderLayer(
            d_model=d,
            nhead=config.num_heads,
            dim_feedforward=4 * d,
            dropout=0.0,
            batch_first=True,
        )
        self.decoder = nn.TransformerDecoder(layer, num_layers=config.num_layers)
        self.label_head = nn.Linear(d, len(config.label_vocab))
        self.box_head = nn.Linear(d, 4)
        self.objectness_head = nn.Linear(d, 1)
        self.region_proj = nn.Linear(d, config.region_dim)
        # objectness starts near 0.5 so an untrained model predicts nothing
        # at high thresholds
        nn.init.zeros_(self.objectness_head.bias)
        nn.init.normal_(self.objectness_head.weight, std=1e-3)
        if not config.use_layout_queries:
            with torch.no_grad():
                self.query_embed.zero_()
            self.query_embed.requires_grad_(False)

    def forward(self, text_emb: torch.Tensor) -> dict[str, torch.Tensor]:
        """text_emb: (B, text_dim) -> per-query tokens, boxes, label logits,
        objectness logits."""
        if text_emb.ndim != 2:
            raise EmptyInput(f"expected (B, text_dim) text embeddings, got {tuple(text_emb.shape)}")
        bsz = text_emb.shape[0]
        memory = self.text_proj(text_emb).unsqueeze(1)  # (B, 1, d)
        queries = self.query_embed.unsqueeze(0).expand(bsz, -1, -1)
        tokens = self.decoder(queries, memory)  # (B, T, d)
        return {
            "tokens": tokens,
            "boxes": _squash_boxes(self.box_head(tokens)),
            "label_logits": self.label_head(tokens),
            "objectness_logits": self.objectness_head(tokens).squeeze(-1),
        }


def build_layout_decoder(config: LayoutDecoderConfig, seed: int = 0) -> LayoutDecoderModel:
    torch.manual_seed(derive_seed(seed, "layout-decoder-init"))
    return LayoutDecoderModel(config)


def _text_tensor(enc: EncoderHandle, caption: str) -> torch.Tensor:
    emb = encode_text(enc, caption)
    return torch.from_numpy(emb.values).to(torch.float32)


def _select_indices(obj_probs: torch.Tensor, threshold: float) -> list[int]:
    """Query indices with objectness >= threshold, ordered by descending
    confidence then ascending query index."""
    probs = obj_probs.detach().cpu().numpy()
    picked = [i for i in range(len(probs)) if probs[i] >= threshold]
    picked.sort(key=lambda i: (-probs[i], i))
    return picked


@torch.no_grad()
def predict_layout(
    model: LayoutDecoderModel, caption: str, enc: EncoderHandle
) -> tuple[Layout, list[float]]:
    """Decode a caption to a variable-length layout plus per-element
    confidences (objectness probabilities)."""
    model.eval()
    cfg = model.config
    out = model(_text_tensor(enc, caption).unsqueeze(0))
    probs = torch.sigmoid(out["objectness_logits"][0])
    boxes = out["boxes"][0].to(torch.float64).cpu().numpy()
    labels = out["label_logits"][0].argmax(dim=-1).cpu().numpy()
    elements = []
    confidences = []
    for i in _select_indices(probs, cfg.objectness_threshold):
        x, y, w, h = (float(v) for v in boxes[i])
        # float32 rounding in the squash can leave x+w an ulp past 1
        w, h = min(w, 1.0), min(h, 1.0)
        x = min(max(x, 0.0), 1.0 - w)
        y = min(max(y, 0.0), 1.0 - h)
        elements.append(
            LayoutElement(label=cfg.label_vocab[int(labels[i])], box=BoundingBox(x=x, y=y, w=w, h=h))
        )
        confidences.append(float(probs[i]))
    return Layout(elements=tuple(elements), concept=caption), confidences


def _global_embedding(tokens: torch.Tensor, selected: Sequence[int]) -> torch.Tensor:
    """Unit-norm mean over the selected tokens (all tokens when none pass)."""
    pool = tokens[list(selected)] if len(selected) > 0 else tokens
    mean = pool.mean(dim=0)
    return mean / mean.norm().clamp_min(_EPS)


@torch.no_grad()
def layout_token_embeddings(
    model: LayoutDecoderModel, caption: str, enc: EncoderHandle
) -> tuple[list[Embedding], Embedding]:
    """All max_tokens decoder output embeddings for a caption, plus the pooled
    global layout embedding (mean over thresholded tokens, unit-normalized;
    falls back to all tokens when none pass)."""
    model.eval()
    out = model(_text_tensor(enc, caption).unsqueeze(0))
    tokens = out["tokens"][0]
    probs = torch.sigmoid(out["objectness_logits"][0])
    selected = _select_indices(probs, model.config.objectness_threshold)
    global_emb = _global_embedding(tokens, selected)
    token_embs = [Embedding(t.to(torch.float64).cpu().numpy()) for t in tokens]
    return token_embs, Embedding(global_emb.to(torch.float64).cpu().numpy())


@dataclass(frozen=True)
class LayoutTrainConfig:
    """Optimization settings for the layout decoder."""

    steps: int = 300
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    box_weight: float = 5.0
    label_weight: float = 1.0
    objectness_weight: float = 1.0
    seed: int = 0


@dataclass
class _Example:
    text: torch.Tensor          # (text_dim,)
    boxes: torch.Tensor         # (G, 4) float32
    labels: torch.Tensor        # (G,) long
    regions: torch.Tensor       # (G, region_dim) float32, constant targets
    concept: str | None


def _prepare_examples(
    dataset: Sequence[AnnotatedImage], enc: EncoderHandle, vocab: Sequence[str]
) -> list[_Example]:
    label_index = {lab: i for i, lab in enumerate(vocab)}
    examples = []
    for rec in dataset:
        if not rec.regions:
            raise EmptyDataset(f"record {rec.id!r} has no region annotations")
        image = load_image(rec.image_path)
        boxes, labels, regions = [], [], []
        for ri, region in enumerate(rec.regions):
            if region.label not in label_index:
                raise UnknownLabel(f"record {rec.id!r}: label {region.label!r} not in vocabulary")
            try:
                remb = encode_region(enc, image, region.box)
            except EmptyCrop as exc:
                raise EmptyDataset(f"record {rec.id!r} region {ri}: {exc}") from exc
            boxes.append([region.box.x, region.box.y, region.box.w, region.box.h])
            labels.append(label_index[region.label])
            regions.append(remb.values)
        examples.append(
            _Example(
                text=_text_tensor(enc, rec.caption),
                boxes=torch.tensor(boxes, dtype=torch.float32),
                labels=torch.tensor(labels, dtype=torch.long),
                regions=torch.from_numpy(np.stack(regions)).to(torch.float32),
                concept=rec.concept_tags[0] if rec.concept_tags else None,
            )
        )
    return examples


def _match(
    boxes: torch.Tensor, label_logits: torch.Tensor, ex: _Example
) -> tuple[np.ndarray, np.ndarray]:
    """Hungarian assignment of queries to ground-truth regions on
    (label cost + box L1 cost).  Returns (query_idx, gt_idx)."""
    with torch.no_grad():
        prob = F.softmax(label_logits, dim=-1)  # (T, V)
        cost_label = -prob[:, ex.labels]  # (T, G)
        cost_box = torch.cdist(boxes, ex.boxes, p=1)  # (T, G)
        cost = (cost_label + cost_box).cpu().numpy()
    return linear_sum_assignment(cost)


def _augmented(
    globals_t: torch.Tensor, loss_cfg: LossConfig, seed: int, step: int
) -> torch.Tensor:
    """Differentiable augmented views l_k^+ of the batch global embeddings,
    masks drawn from the shared numpy sampler."""
    views = []
    for k in range(globals_t.shape[0]):
        rng = derive_rng(seed, "augment", step, k)
        g = globals_t[k]
        view = g
        for _ in range(8):
            mask = torch.from_numpy(
                sample_augment_mask(g.shape[0], loss_cfg, rng)
            ).to(g.dtype)
            view = g * mask
            if float(view.detach().norm()) > _EPS:
                break
        views.append(view / view.norm().clamp_min(_EPS))
    return torch.stack(views)


def train_layout_decoder(
    model: LayoutDecoderModel,
    dataset: Sequence[AnnotatedImage],
    enc: EncoderHandle,
    loss_cfg: LossConfig | None = None,
    train_cfg: LayoutTrainConfig | None = None,
) -> tuple[LayoutDecoderModel, list[dict]]:
    """Optimize the decoder on annotated records; returns the model and a
    per-step history of every loss term.  Deterministic given the seed."""
    loss_cfg = loss_cfg or LossConfig()
    train_cfg = train_cfg or LayoutTrainConfig()
    records = list(dataset)
    if not records:
        raise EmptyDataset("training needs at least one record")
    if train_cfg.batch_size > len(records):
        raise EmptyDataset(
            f"batch_size {train_cfg.batch_size} exceeds dataset size {len(records)}"
        )
    torch.set_num_threads(1)
    examples = _prepare_examples(records, enc, model.config.label_vocab)
    torch.manual_seed(derive_seed(train_cfg.seed, "layout-train"))
    opt = torch.optim.AdamW(
        [p for p in model.parameters() if p.requires_grad],
        lr=train_cfg.lr,
        weight_decay=train_cfg.weight_decay,
    )
    tau = loss_cfg.tau
    history: list[dict] = []
    model.train()

    for step in range(train_cfg.steps):
        rng = derive_rng(train_cfg.seed, "batch", step)
        idx = rng.permutation(len(examples))[: train_cfg.batch_size]
        batch = [examples[i] for i in idx]
        out = model(torch.stack([ex.text for ex in batch]))

        box_terms, label_terms, align_terms = [], [], []
        obj_targets = torch.zeros_like(out["objectness_logits"])
        globals_list = []
        concepts: list[str | None] = []
        for b, ex in enumerate(batch):
            qi, gi = _match(out["boxes"][b], out["label_logits"][b], ex)
            q = torch.as_tensor(qi, dtype=torch.long)
            g = torch.as_tensor(gi, dtype=torch.long)
            box_terms.append(F.l1_loss(out["boxes"][b][q], ex.boxes[g]))
            label_terms.append(F.cross_entropy(out["label_logits"][b][q], ex.labels[g]))
            obj_targets[b, q] = 1.0
            l_tokens = model.region_proj(out["tokens"][b][q])
            align_terms.append(
                _token_alignment_torch(l_tokens, ex.regions[g], tau)
            )
            globals_list.append(_global_embedding(out["tokens"][b], range(len(out["tokens"][b]))))
            concepts.append(ex.concept)

        box_l1 = torch.stack(box_terms).mean()
        label_ce = torch.stack(label_terms).mean()
        obj_bce = F.binary_cross_entropy_with_logits(out["objectness_logits"], obj_targets)
        align = torch.stack(align_terms).mean()

        globals_t = torch.stack(globals_list)
        plus = _augmented(globals_t, loss_cfg, train_cfg.seed, step)
        laycontrast = _layout_contrastive_torch(globals_t, plus, tau)

        intra_terms = []
        for concept in sorted({c for c in concepts if c is not None}):
            members = [globals_t[i] for i, c in enumerate(concepts) if c == concept]
            if len(members) >= 2:
                group = torch.stack(members)
                gn = F.normalize(group, dim=1, eps=_EPS)
                intra_terms.append(1.0 - (gn @ gn.T).mean())
        intra = torch.stack(intra_terms).mean() if intra_terms else torch.zeros(())

        total = (
            train_cfg.box_weight * box_l1
            + train_cfg.label_weight * label_ce
            + train_cfg.objectness_weight * obj_bce
            + loss_cfg.lambda_align * align
            + loss_cfg.lambda_laycontrast * laycontrast
            + loss_cfg.lambda_intra * intra
        )
        if not torch.isfinite(total):
            raise NonFiniteLoss(step, f"total loss became non-finite at step {step}")

        opt.zero_grad()
        total.backward()
        opt.step()
        history.append(
            {
                "step": step,
                "total": float(total.detach()),
                "box_l1": float(box_l1.detach()),
                "label_ce": float(label_ce.detach()),
                "objectness_bce": float(obj_bce.detach()),
                "token_alignment": float(align.detach()),
                "layout_contrast": float(laycontrast.detach()),
                "intra_concept": float(intra.detach()),
            }
        )
    model.eval()
    return model, history


def _token_alignment_torch(l: torch.Tensor, v: torch.Tensor, tau: float) -> torch.Tensor:
    ln = F.normalize(l, dim=1, eps=_EPS)
    vn = F.normalize(v, dim=1, eps=_EPS)
    logits = (ln @ vn.T) / tau
    return -F.log_softmax(logits, dim=1).diagonal().mean()


def _layout_contrastive_torch(l: torch.Tensor, plus: torch.Tensor, tau: float) -> torch.Tensor:
    pos = F.cosine_similarity(l, plus, dim=1, eps=_EPS) / tau
    ln = F.normalize(l, dim=1, eps=_EPS)
    denom = torch.logsumexp((ln @ ln.T) / tau, dim=1)
    return -(pos - denom).mean()


def mean_layout_iou(
    model: LayoutDecoderModel, dataset: Sequence[AnnotatedImage], enc: EncoderHandle
) -> float:
    """Mean over records of mean IoU between predicted and ground-truth boxes
    under a Hungarian assignment maximizing IoU; unmatched ground truth
    scores 0."""
    records = list(dataset)
    if not records:
        raise EmptyDataset("evaluation needs at least one record")
    per_record = []
    for rec in records:
        layout, _ = predict_layout(model, rec.caption, enc)
        preds = list(layout)
        gts = list(rec.regions)
        if not gts:
            continue
        if not preds:
            per_record.append(0.0)
            continue
        iou = np.zeros((len(gts), len(preds)))
        for i, gt_region in enumerate(gts):
            for j, el in enumerate(preds):
                iou[i, j] = box_iou(gt_region.box, el.box)
        gi, pj = linear_sum_assignment(-iou)
        scores = np.zeros(len(gts))
        scores[gi] = iou[gi, pj]
        per_record.append(float(scores.mean()))
    if not per_record:
        raise EmptyDataset("no annotated records to score")
    return float(np.mean(per_record))


# -- persistence -----------------------------------------------------------------


def save_layout_decoder(
    model: LayoutDecoderModel, path: str | Path, extra: dict | None = None
) -> Path:
    config = asdict(model.config)
    config["label_vocab"] = list(model.config.label_vocab)
    if extra:
        config["extra"] = extra
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    return save_checkpoint(path, "layout-decoder", config, arrays)


def load_layout_decoder(path: str | Path) -> tuple[LayoutDecoderModel, dict]:
    kind, config, arrays = load_checkpoint(path)
    if kind != "layout-decoder":
        raise ParseError(f"{path}: expected a layout-decoder checkpoint, found {kind!r}")
    extra = config.pop("extra", {})
    config["label_vocab"] = tuple(config["label_vocab"])
    model = LayoutDecoderModel(LayoutDecoderConfig(**config))
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    return model, extra
