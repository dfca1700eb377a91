"""Layout-conditioned denoising generator.

A small pixel-space UNet predicts the noise added to an image; layout
conditioning enters through masked cross-attention at the mid block and at
the configured down/up resolutions.  Each spatial position may only attend
to layout tokens whose boxes cover its cell center, plus an always-visible
learned null token so uncovered positions keep a defined softmax.

Pixel convention: [-1, 1] inside the model, [0, 1] at the interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .boxes import Layout, box_contains
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import AnnotatedImage, load_image
from .encoders import EncoderHandle, encode_text, toy_image_embedding
from .errors import (
    BackendUnavailable,
    BadShape,
    EmptyDataset,
    InvalidSteps,
    NonFiniteLoss,
    ParseError,
    ShapeMismatch,
    UnknownLabel,
)
from .seeding import derive_rng, derive_seed

_EPS = 1e-12
NEG_INF = float("-inf")


# -- noise schedule --------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta schedule with cached alpha products.

    The default is linear 1e-4 -> 0.02 *per thousand steps*: betas scale by
    1000/num_steps so that shorter desk-scale schedules still reach full
    noise (alpha_bar near 0) at t = num_steps, as the forward-noising
    invariant requires.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise InvalidSteps("betas must be a non-empty 1-D sequence")
        if not ((betas > 0.0) & (betas < 1.0)).all():
            raise InvalidSteps("every beta must lie in (0, 1)")
        if (np.diff(betas) < 0.0).any():
            raise InvalidSteps("betas must be non-decreasing")
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", np.cumprod(alphas))

    @property
    def num_steps(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative alpha product at step t in 1..num_steps (t=0 -> 1)."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.num_steps:
            raise InvalidSteps(f"t={t} outside 1..{self.num_steps}")
        return float(self.alpha_bars[t - 1])

    @classmethod
    def linear(cls, num_steps: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        if num_steps < 1:
            raise InvalidSteps("num_steps must be >= 1")
        scale = 1000.0 / num_steps
        betas = np.linspace(beta_start * scale, min(beta_end * scale, 0.999), num_steps)
        return cls(betas=betas)


def forward_noise(
    schedule: NoiseSchedule, x0: np.ndarray, t: int, noise: np.ndarray
) -> np.ndarray:
    """q(x_t | x_0) sample: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * noise


# -- attention masks -------------------------------------------------------------


@dataclass(frozen=True)
class AttentionMask:
    """Additive mask (num_positions × (N+1)) with entries in {0, -inf}; the
    final column is the always-unmasked null token."""

    values: np.ndarray
    resolution: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] < 1:
            raise ShapeMismatch(f"mask must be 2-D with >= 1 column, got {vals.shape}")
        if not np.all((vals == 0.0) | np.isneginf(vals)):
            raise ShapeMismatch("mask entries must be 0 or -inf")
        if not (vals == 0.0).any(axis=1).all():
            raise ShapeMismatch("every mask row needs at least one unmasked entry")
        object.__setattr__(self, "values", vals)


def build_attention_mask(layout: Layout, resolution: int) -> AttentionMask:
    """0/-inf mask over grid cells × (layout tokens + null).

    Cell p = row*resolution + col has center ((col+0.5)/res, (row+0.5)/res);
    entry (p, i) is 0 iff box i contains that center.  The appended null
    column is all zeros.
    """
    if resolution < 1:
        raise InvalidSteps(f"resolution must be >= 1, got {resolution}")
    elements = list(layout)
    n = len(elements)
    vals = np.full((resolution * resolution, n + 1), NEG_INF)
    vals[:, n] = 0.0
    for row in range(resolution):
        cy = (row + 0.5) / resolution
        for col in range(resolution):
            cx = (col + 0.5) / resolution
            p = row * resolution + col
            for i, el in enumerate(elements):
                if box_contains(el.box, cx, cy):
                    vals[p, i] = 0.0
    return AttentionMask(values=vals, resolution=resolution)


def masked_cross_attention(Q, layout_embs, M: AttentionMask):
    """Softmax((Q Lᵀ + M)/sqrt(d)) L with -inf entries excluding tokens.

    Accepts numpy arrays (or anything array-like); pure function used both as
    the reference semantics and by tests.  The network uses a learned
    multi-head variant with the same masking rule.
    """
    q = np.asarray(Q, dtype=np.float64)
    l = np.asarray(layout_embs, dtype=np.float64)
    if q.ndim != 2 or l.ndim != 2:
        raise ShapeMismatch("Q and layout_embs must be 2-D")
    if q.shape[1] != l.shape[1]:
        raise ShapeMismatch(f"feature dims differ: {q.shape[1]} vs {l.shape[1]}")
    mask = M.values if isinstance(M, AttentionMask) else np.asarray(M, dtype=np.float64)
    if mask.shape != (q.shape[0], l.shape[0]):
        raise ShapeMismatch(
            f"mask shape {mask.shape} does not match (positions {q.shape[0]}, tokens {l.shape[0]})"
        )
    logits = (q @ l.T + mask) / math.sqrt(q.shape[1])
    logits = logits - logits.max(axis=1, keepdims=True)  # rowmax finite: null col is 0
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ l


# -- network blocks --------------------------------------------------------------


def _timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of integer timesteps; (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1))
    args = t.to(torch.float32)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class LayoutAttention(nn.Module):
    """Masked multi-head cross-attention from feature-map positions to
    pre-projected layout key/values."""

    def __init__(self, ch: int, attn_dim: int, num_heads: int):
        super().__init__()
        if attn_dim % num_heads != 0:
            raise ValueError("attn_dim must be divisible by num_heads")
        self.num_heads = num_heads
        self.head_dim = attn_dim // num_heads
        self.norm = _norm(ch)
        self.q_proj = nn.Linear(ch, attn_dim)
        self.out_proj = nn.Linear(attn_dim, ch)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, x: torch.Tensor, kv: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """x: (B,C,H,W); kv: (B,K,2*attn_dim); mask: (B,H*W,K) additive."""
        b, c, h, w = x.shape
        pos = self.norm(x).reshape(b, c, h * w).transpose(1, 2)  # (B,P,C)
        q = self.q_proj(pos)
        k, v = kv.chunk(2, dim=-1)
        nh, hd = self.num_heads, self.head_dim

        def split(t):
            return t.reshape(b, -1, nh, hd).transpose(1, 2)  # (B,nh,*,hd)

        qh, kh, vh = split(q), split(k), split(v)
        logits = qh @ kh.transpose(-1, -2) / math.sqrt(hd)  # (B,nh,P,K)
        logits = logits + mask[:, None, :, :]
        attn = torch.softmax(logits, dim=-1)
        out = (attn @ vh).transpose(1, 2).reshape(b, h * w, nh * hd)
        out = self.out_proj(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


@dataclass(frozen=True)
class UNetConfig:
    """Denoiser shape: image/feature sizes, widths, and injection sites."""

    image_size: int = 32
    in_channels: int = 3
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2, 2)
    attention_resolutions: tuple[int, ...] = (16, 8, 4)
    layout_dim: int = 64
    attn_dim: int = 64
    num_heads: int = 4

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        object.__setattr__(self, "attention_resolutions", tuple(sorted(set(self.attention_resolutions), reverse=True)))
        levels = len(self.channel_mults)
        if levels < 1:
            raise ValueError("need at least one channel multiplier")
        if self.image_size % (2 ** (levels - 1)) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^{levels - 1}"
            )
        sizes = self.feature_sizes()
        for res in self.attention_resolutions:
            if res not in sizes:
                raise ValueError(f"attention resolution {res} not among feature sizes {sizes}")

    def feature_sizes(self) -> tuple[int, ...]:
        return tuple(self.image_size // (2**i) for i in range(len(self.channel_mults)))


class UNet(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * m for m in cfg.channel_mults]
        sizes = cfg.feature_sizes()
        time_dim = cfg.base_channels * 4
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.base_channels, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.conv_in = nn.Conv2d(cfg.in_channels, chans[0], 3, padding=1)

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = chans[0]
        for i, ch in enumerate(chans):
            self.down_res.append(ResBlock(prev, ch, time_dim))
            self.down_attn.append(
                LayoutAttention(ch, cfg.attn_dim, cfg.num_heads)
                if sizes[i] in cfg.attention_resolutions
                else None
            )
            if i < len(chans) - 1:
                self.downs.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch

        self.mid1 = ResBlock(chans[-1], chans[-1], time_dim)
        self.mid_attn = LayoutAttention(chans[-1], cfg.attn_dim, cfg.num_heads)
        self.mid2 = ResBlock(chans[-1], chans[-1], time_dim)

        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        for i in range(len(chans) - 1, -1, -1):
            above = chans[i + 1] if i < len(chans) - 1 else chans[-1]
            self.up_res.append(ResBlock(above + chans[i], chans[i], time_dim))
            self.up_attn.append(
                LayoutAttention(chans[i], cfg.attn_dim, cfg.num_heads)
                if sizes[i] in cfg.attention_resolutions
                else None
            )
        # ups[j] smooths the nearest-upsample from level i+1 to level i for
        # i = L-2..0, keeping the incoming channel count
        self.ups = nn.ModuleList(
            nn.Conv2d(chans[i + 1], chans[i + 1], 3, padding=1) for i in range(len(chans) - 2, -1, -1)
        )

        self.out_norm = _norm(chans[0])
        self.conv_out = nn.Conv2d(chans[0], cfg.in_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, kv: torch.Tensor, masks: dict[int, torch.Tensor]
    ) -> torch.Tensor:
        temb = self.time_mlp(_timestep_embedding(t, self.cfg.base_channels))
        sizes = self.cfg.feature_sizes()
        h = self.conv_in(x)
        skips = []
        for i in range(len(self.down_res)):
            h = self.down_res[i](h, temb)
            if self.down_attn[i] is not None:
                h = self.down_attn[i](h, kv, masks[sizes[i]])
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)

        h = self.mid1(h, temb)
        h = self.mid_attn(h, kv, masks[sizes[-1]])
        h = self.mid2(h, temb)

        for j, i in enumerate(range(len(self.down_res) - 1, -1, -1)):
            if i < len(self.down_res) - 1:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.ups[j - 1](h)
            h = self.up_res[j](torch.cat([h, skips[i]], dim=1), temb)
            if self.up_attn[j] is not None:
                h = self.up_attn[j](h, kv, masks[sizes[i]])

        return self.conv_out(F.silu(self.out_norm(h)))


class GeneratorModel(nn.Module):
    """UNet denoiser plus everything needed to condition on a layout: label
    and box embeddings, the learned null token, the shared projection of
    layout tokens to attention key/values, and the noise schedule."""

    def __init__(self, cfg: UNetConfig, label_vocab: Sequence[str], schedule: NoiseSchedule):
        super().__init__()
        if not label_vocab:
            raise ValueError("label_vocab must be non-empty")
        self.cfg = cfg
        self.label_vocab = tuple(label_vocab)
        self.schedule = schedule
        self.unet = UNet(cfg)
        self.label_embed = nn.Embedding(len(self.label_vocab), cfg.layout_dim)
        self.pos_proj = nn.Linear(4, cfg.layout_dim)
        self.null_token = nn.Parameter(torch.randn(cfg.layout_dim) * 0.02)
        self.layout_proj = nn.Linear(cfg.layout_dim, 2 * cfg.attn_dim)
        self._label_index = {lab: i for i, lab in enumerate(self.label_vocab)}

    def tokens_for_layout(self, layout: Layout) -> torch.Tensor:
        """(N+1, layout_dim) tokens: label embedding + projected box, plus the
        null token last."""
        rows = []
        for el in layout:
            if el.label not in self._label_index:
                raise UnknownLabel(f"label {el.label!r} not in generator vocabulary")
            idx = torch.tensor(self._label_index[el.label])
            box = torch.tensor([el.box.x, el.box.y, el.box.w, el.box.h], dtype=torch.float32)
            rows.append(self.label_embed(idx) + self.pos_proj(box))
        rows.append(self.null_token)
        return torch.stack(rows)

    def masks_for_layout(self, layout: Layout) -> dict[int, torch.Tensor]:
        """Additive masks for every feature size (zero mask where no
        injection happens is never built; only attention sites query this)."""
        masks = {}
        for res in self._injection_sizes():
            m = build_attention_mask(layout, res)
            masks[res] = torch.from_numpy(m.values).to(torch.float32)
        return masks

    def _injection_sizes(self) -> tuple[int, ...]:
        sizes = self.cfg.feature_sizes()
        wanted = set(self.cfg.attention_resolutions) | {sizes[-1]}  # mid block always attends
        return tuple(s for s in sizes if s in wanted)

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, tokens: torch.Tensor, masks: dict[int, torch.Tensor]
    ) -> torch.Tensor:
        """tokens: (B, K, layout_dim); masks: size -> (B, P, K)."""
        kv = self.layout_proj(tokens)
        return self.unet(x, t, kv, masks)


def build_generator(
    cfg: UNetConfig, label_vocab: Sequence[str], schedule: NoiseSchedule | None = None, seed: int = 0
) -> GeneratorModel:
    torch.manual_seed(derive_seed(seed, "generator-init"))
    return GeneratorModel(cfg, label_vocab, schedule or NoiseSchedule.linear())


def _collate_layouts(
    model: GeneratorModel, layouts: Sequence[Layout]
) -> tuple[torch.Tensor, dict[int, torch.Tensor]]:
    """Pad per-record tokens/masks to a common width.  Padding columns are
    zero tokens masked to -inf everywhere, so they never receive weight."""
    tokens = [model.tokens_for_layout(lay) for lay in layouts]
    masks = [model.masks_for_layout(lay) for lay in layouts]
    width = max(t.shape[0] for t in tokens)
    tok_batch = torch.zeros(len(tokens), width, model.cfg.layout_dim)
    mask_batch: dict[int, torch.Tensor] = {}
    sizes = model._injection_sizes()
    for res in sizes:
        p = res * res
        mask_batch[res] = torch.full((len(tokens), p, width), NEG_INF)
    for b, (tok, mk) in enumerate(zip(tokens, masks)):
        k = tok.shape[0]
        tok_batch[b, :k] = tok
        for res in sizes:
            mask_batch[res][b, :, :k] = mk[res]
    return tok_batch, mask_batch


@dataclass(frozen=True)
class DiffusionTrainConfig:
    """Optimization settings for the denoiser."""

    steps: int = 500
    batch_size: int = 4
    lr: float = 1e-3
    weight_decay: float = 0.0
    semantic_every: int = 10
    seed: int = 0


def _layout_from_record(rec: AnnotatedImage) -> Layout:
    from .boxes import LayoutElement

    return Layout(
        elements=tuple(LayoutElement(label=r.label, box=r.box) for r in rec.regions),
        concept=rec.caption,
    )


def train_diffusion(
    model: GeneratorModel,
    dataset: Sequence[AnnotatedImage],
    layout_source: str = "ground-truth",
    enc: EncoderHandle | None = None,
    loss_cfg=None,
    train_cfg: DiffusionTrainConfig | None = None,
    layout_model=None,
) -> tuple[GeneratorModel, list[dict]]:
    """Noise-prediction training with an optional semantic alignment term.

    layout_source picks where conditioning layouts come from: "ground-truth"
    reads record regions; "decoder" runs a trained layout decoder on each
    caption once up front.  The semantic term (weight lambda_semantic, every
    `semantic_every` steps) scores the one-step denoised estimate against the
    caption embedding and needs the toy encoder.  Deterministic given seed.
    """
    from .losses import LossConfig

    loss_cfg = loss_cfg or LossConfig()
    train_cfg = train_cfg or DiffusionTrainConfig()
    records = list(dataset)
    if not records:
        raise EmptyDataset("training needs at least one record")
    torch.set_num_threads(1)

    if layout_source == "ground-truth":
        layouts = [_layout_from_record(r) for r in records]
    elif layout_source == "decoder":
        if layout_model is None or enc is None:
            raise EmptyDataset("layout_source='decoder' needs layout_model and enc")
        from .layout_decoder import predict_layout

        layouts = [predict_layout(layout_model, r.caption, enc)[0] for r in records]
    else:
        raise ValueError(f"unknown layout_source {layout_source!r}")

    # semantic_every <= 0 switches the term off entirely
    use_semantic = loss_cfg.lambda_semantic > 0.0 and train_cfg.semantic_every > 0
    if use_semantic:
        if enc is None:
            raise EmptyDataset("semantic term needs an encoder handle")
        if enc.kind != "toy":
            raise BackendUnavailable("the semantic term is differentiable only with the toy encoder")
        text_embs = torch.stack(
            [torch.from_numpy(encode_text(enc, r.caption).values).to(torch.float64) for r in records]
        )

    size = model.cfg.image_size
    images = []
    for rec in records:
        arr = load_image(rec.image_path)
        if arr.shape[0] != size or arr.shape[1] != size:
            raise BadShape(
                f"record {rec.id!r}: image is {arr.shape[0]}x{arr.shape[1]}, model wants {size}x{size}"
            )
        images.append(torch.from_numpy(arr * 2.0 - 1.0).to(torch.float32).permute(2, 0, 1))

    schedule = model.schedule
    abars = torch.from_numpy(schedule.alpha_bars).to(torch.float32)
    torch.manual_seed(derive_seed(train_cfg.seed, "diffusion-train"))
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    history: list[dict] = []
    model.train()

    for step in range(train_cfg.steps):
        rng = derive_rng(train_cfg.seed, "batch", step)
        idx = rng.permutation(len(records))[: min(train_cfg.batch_size, len(records))]
        x0 = torch.stack([images[i] for i in idx])
        tokens, masks = _collate_layouts(model, [layouts[i] for i in idx])

        t_np = rng.integers(1, schedule.num_steps + 1, size=len(idx))
        t = torch.from_numpy(t_np).to(torch.long)
        gen = torch.Generator().manual_seed(derive_seed(train_cfg.seed, "noise", step))
        noise = torch.randn(x0.shape, generator=gen)
        ab = abars[t - 1][:, None, None, None]
        x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise

        eps_hat = model(x_t, t, tokens, masks)
        noise_mse = F.mse_loss(eps_hat, noise)

        semantic = torch.zeros(())
        if use_semantic and step % train_cfg.semantic_every == 0:
            x0_hat = (x_t - (1.0 - ab).sqrt() * eps_hat) / ab.sqrt().clamp_min(_EPS)
            x0_unit = ((x0_hat.clamp(-1.0, 1.0) + 1.0) / 2.0).to(torch.float64)
            img_embs = toy_image_embedding(enc, x0_unit)
            cos = (img_embs * text_embs[torch.from_numpy(idx)]).sum(dim=1)
            semantic = (1.0 - cos).mean().to(torch.float32)

        total = noise_mse + loss_cfg.lambda_semantic * semantic
        if not torch.isfinite(total):
            raise NonFiniteLoss(step, f"total loss became non-finite at step {step}")

        opt.zero_grad()
        total.backward()
        opt.step()
        history.append(
            {
                "step": step,
                "total": float(total.detach()),
                "noise_mse": float(noise_mse.detach()),
                "semantic": float(semantic.detach()) if torch.is_tensor(semantic) else float(semantic),
            }
        )
    model.eval()
    return model, history


def _check_method(method: str) -> float:
    if method not in ("ddpm", "ddim"):
        raise InvalidSteps(f"unknown sampling method {method!r}")
    return 1.0 if method == "ddpm" else 0.0


def _conditioning_tokens(model: GeneratorModel, layout: Layout, extra_context):
    """Layout tokens and masks for one layout, with optional always-visible
    extra rows appended."""
    tokens, masks = _collate_layouts(model, [layout])
    if extra_context is not None:
        vals = np.atleast_2d(np.asarray(getattr(extra_context, "values", extra_context), dtype=np.float64))
        if vals.shape[1] != model.cfg.layout_dim:
            raise ShapeMismatch(
                f"extra context dim {vals.shape[1]} != layout_dim {model.cfg.layout_dim}"
            )
        ex = torch.from_numpy(vals).to(torch.float32).unsqueeze(0)
        tokens = torch.cat([tokens, ex], dim=1)
        for res in list(masks):
            pad = torch.zeros(1, masks[res].shape[1], vals.shape[0])
            masks[res] = torch.cat([masks[res], pad], dim=2)
    return tokens, masks


def _denoise(model, x, ts, tokens, masks, eta, seed, z_tag):
    """Run the reverse chain over the (descending) timestep list ts."""
    schedule = model.schedule
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab_t = schedule.alpha_bar(t)
        ab_prev = schedule.alpha_bar(t_prev)
        eps = model(x, torch.tensor([t], dtype=torch.long), tokens, masks)
        # clip the x0 estimate to the pixel range and fold the correction
        # back into the noise term; keeps off-manifold drift bounded
        x0_hat = ((x - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)).clamp(-1.0, 1.0)
        eps_eff = (x - math.sqrt(ab_t) * x0_hat) / math.sqrt(1.0 - ab_t)
        sigma = eta * math.sqrt(max((1.0 - ab_prev) / (1.0 - ab_t), 0.0)) * math.sqrt(
            max(1.0 - ab_t / ab_prev, 0.0)
        )
        dir_coeff = math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0))
        x = math.sqrt(ab_prev) * x0_hat + dir_coeff * eps_eff
        if sigma > 0.0 and t_prev > 0:
            zgen = torch.Generator().manual_seed(derive_seed(seed, z_tag, t))
            x = x + sigma * torch.randn(x.shape, generator=zgen)
    return x


def _to_image(x: torch.Tensor) -> np.ndarray:
    return ((x[0] + 1.0) / 2.0).clamp(0.0, 1.0).permute(1, 2, 0).to(torch.float64).cpu().numpy()


@torch.no_grad()
def generate(
    model: GeneratorModel,
    layout: Layout,
    seed: int = 0,
    num_steps: int | None = None,
    method: str = "ddpm",
    extra_context: np.ndarray | None = None,
) -> np.ndarray:
    """Sample an image conditioned on a layout.

    Ancestral DDPM by default; method="ddim" runs the deterministic variant.
    num_steps below the schedule length respaces the timesteps evenly.
    extra_context rows (layout_dim each) are appended as always-visible
    tokens.  Returns H×W×3 float64 in [0, 1]; deterministic given
    (model, layout, seed, num_steps, method).
    """
    schedule = model.schedule
    big_t = schedule.num_steps
    if num_steps is None:
        num_steps = big_t
    if not isinstance(num_steps, int) or num_steps < 1 or num_steps > big_t:
        raise InvalidSteps(f"num_steps must be in 1..{big_t}, got {num_steps!r}")
    eta = _check_method(method)

    ts = sorted({int(round(v)) for v in np.linspace(1, big_t, num_steps)}, reverse=True)
    model.eval()
    size = model.cfg.image_size
    tokens, masks = _conditioning_tokens(model, layout, extra_context)
    gen = torch.Generator().manual_seed(derive_seed(seed, "init"))
    x = torch.randn(1, model.cfg.in_channels, size, size, generator=gen)
    x = _denoise(model, x, ts, tokens, masks, eta, seed, "z")
    return _to_image(x)


@torch.no_grad()
def reconstruct(
    model: GeneratorModel,
    image: np.ndarray,
    layout: Layout,
    t_start: int,
    seed: int = 0,
    method: str = "ddpm",
    extra_context: np.ndarray | None = None,
) -> np.ndarray:
    """Noise a real image up to t_start, then denoise it back under layout
    conditioning.

    Small t_start perturbs the input only lightly (near-identity); t_start
    at the schedule length destroys it completely and the call approaches
    generate().  A model that has memorized its training set restores a
    training image from mid-schedule noise levels, which is the memorization
    probe the overfit checks use.  image is H×W×3 in [0, 1]; returns the
    same shape/range, deterministic given (model, image, layout, t_start,
    seed, method).
    """
    schedule = model.schedule
    if not isinstance(t_start, int) or t_start < 1 or t_start > schedule.num_steps:
        raise InvalidSteps(f"t_start must be in 1..{schedule.num_steps}, got {t_start!r}")
    eta = _check_method(method)
    size = model.cfg.image_size
    arr = np.asarray(image, dtype=np.float64)
    if arr.shape != (size, size, model.cfg.in_channels):
        raise BadShape(
            f"image shape {arr.shape} does not match model {(size, size, model.cfg.in_channels)}"
        )
    model.eval()
    tokens, masks = _conditioning_tokens(model, layout, extra_context)
    x0 = torch.from_numpy(2.0 * arr - 1.0).to(torch.float32).permute(2, 0, 1).unsqueeze(0)
    gen = torch.Generator().manual_seed(derive_seed(seed, "recon-init"))
    ab0 = schedule.alpha_bar(t_start)
    x = math.sqrt(ab0) * x0 + math.sqrt(1.0 - ab0) * torch.randn(x0.shape, generator=gen)
    x = _denoise(model, x, list(range(t_start, 0, -1)), tokens, masks, eta, seed, "recon-z")
    return _to_image(x)


def generate_with_extra_context(
    model: GeneratorModel,
    layout: Layout,
    extra,
    seed: int = 0,
    num_steps: int | None = None,
    method: str = "ddpm",
) -> np.ndarray:
    """generate() with one or more always-visible conditioning tokens
    appended (e.g. a background pseudo-prompt embedding)."""
    return generate(
        model, layout, seed=seed, num_steps=num_steps, method=method, extra_context=extra
    )


# -- persistence -----------------------------------------------------------------


def save_generator(model: GeneratorModel, path: str | Path, extra: dict | None = None) -> Path:
    config = {
        "unet": asdict(model.cfg),
        "label_vocab": list(model.label_vocab),
        "schedule_betas": [float(b) for b in model.schedule.betas],
    }
    if extra:
        config["extra"] = extra
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    return save_checkpoint(path, "generator", config, arrays)


def load_generator(path: str | Path) -> tuple[GeneratorModel, dict]:
    kind, config, arrays = load_checkpoint(path)
    if kind != "generator":
        raise ParseError(f"{path}: expected a generator checkpoint, found {kind!r}")
    unet_cfg = dict(config["unet"])
    unet_cfg["channel_mults"] = tuple(unet_cfg["channel_mults"])
    unet_cfg["attention_resolutions"] = tuple(unet_cfg["attention_resolutions"])
    model = GeneratorModel(
        UNetConfig(**unet_cfg),
        tuple(config["label_vocab"]),
        NoiseSchedule(betas=np.asarray(config["schedule_betas"], dtype=np.float64)),
    )
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
    model.eval()
    return model, config.get("extra", {})
