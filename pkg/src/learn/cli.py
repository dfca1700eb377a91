"""Command-line entry point.

Subcommands: dataset synth, train-layout, train-diffusion, generate,
traverse, evaluate, tune-background, inspect-layout.  Exit codes: 0 success,
1 domain error, 2 usage error.  Every run writes run_manifest.json (merged
config, its hash, seed, library versions, wall time) next to its primary
output.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .boxes import Layout, layout_from_json, layout_to_dict, layout_to_json
from .config import (
    encoder_from_config,
    load_config_file,
    loss_from_config,
    merge_config,
    parse_set_overrides,
    write_run_manifest,
)
from .errors import EmptyDataset, LearnError, MissingImage, ParseError

_OUTLINE_COLORS = [
    (220, 50, 47),
    (38, 139, 210),
    (133, 153, 0),
    (181, 137, 0),
    (211, 54, 130),
    (42, 161, 152),
    (203, 75, 22),
    (108, 113, 196),
]


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="JSON config file (default: $LEARN_CONFIG)")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. --set loss.tau=0.1 (repeatable)",
    )


def _merged_config(args) -> dict:
    return merge_config(load_config_file(args.config), parse_set_overrides(args.overrides))


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="learn",
        description="Layout-guided story-driven image generation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    # dataset synth
    p_ds = sub.add_parser("dataset", help="dataset utilities")
    ds_sub = p_ds.add_subparsers(dest="dataset_command", required=True)
    p_synth = ds_sub.add_parser("synth", help="render a synthetic shape corpus")
    p_synth.add_argument("--n", type=int, default=64, help="number of records")
    p_synth.add_argument("--size", type=int, default=32, help="image side in pixels")
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--shapes-min", type=int, default=1)
    p_synth.add_argument("--shapes-max", type=int, default=3)
    p_synth.add_argument("--labels", default=None, help="comma-separated palette labels")
    p_synth.add_argument(
        "--concepts", type=int, default=0, help="if > 0, build a concept-structured corpus instead"
    )
    p_synth.add_argument("--samples-per-concept", type=int, default=8)
    _add_config_flags(p_synth)
    p_synth.set_defaults(func=_cmd_dataset_synth)

    # train-layout
    p_tl = sub.add_parser("train-layout", help="train the caption-to-layout decoder")
    p_tl.add_argument("--data", required=True, help="manifest JSONL")
    p_tl.add_argument("--out", required=True, help="checkpoint file to write")
    p_tl.add_argument("--seed", type=int, default=0)
    p_tl.add_argument("--steps", type=int, default=300)
    p_tl.add_argument("--batch", type=int, default=8)
    p_tl.add_argument("--lr", type=float, default=1e-4)
    p_tl.add_argument("--weight-decay", type=float, default=1e-4)
    p_tl.add_argument("--embed-dim", type=int, default=768)
    p_tl.add_argument("--layers", type=int, default=4)
    p_tl.add_argument("--heads", type=int, default=8)
    p_tl.add_argument("--max-tokens", type=int, default=40)
    p_tl.add_argument("--threshold", type=float, default=0.5)
    p_tl.add_argument(
        "--no-layout-queries",
        action="store_true",
        help="ablation: zero and freeze the learned query embeddings",
    )
    p_tl.add_argument("--box-weight", type=float, default=5.0)
    p_tl.add_argument("--label-weight", type=float, default=1.0)
    p_tl.add_argument("--objectness-weight", type=float, default=1.0)
    _add_config_flags(p_tl)
    p_tl.set_defaults(func=_cmd_train_layout)

    # train-diffusion
    p_td = sub.add_parser("train-diffusion", help="train the layout-conditioned denoiser")
    p_td.add_argument("--data", required=True)
    p_td.add_argument("--out", required=True)
    p_td.add_argument("--seed", type=int, default=0)
    p_td.add_argument("--steps", type=int, default=500)
    p_td.add_argument("--batch", type=int, default=4)
    p_td.add_argument("--lr", type=float, default=1e-3)
    p_td.add_argument("--weight-decay", type=float, default=0.0)
    p_td.add_argument("--image-size", type=int, default=32)
    p_td.add_argument("--base-channels", type=int, default=32)
    p_td.add_argument("--mults", type=_int_list, default=(1, 2, 2, 2))
    p_td.add_argument("--attn-res", type=_int_list, default=(16, 8, 4))
    p_td.add_argument("--layout-dim", type=int, default=64)
    p_td.add_argument("--attn-dim", type=int, default=64)
    p_td.add_argument("--heads", type=int, default=4)
    p_td.add_argument("--sched-steps", type=int, default=200)
    p_td.add_argument(
        "--layout-source", choices=("ground-truth", "decoder"), default="ground-truth"
    )
    p_td.add_argument("--layout-ckpt", default=None, help="decoder checkpoint for --layout-source decoder")
    p_td.add_argument("--semantic-every", type=int, default=10)
    _add_config_flags(p_td)
    p_td.set_defaults(func=_cmd_train_diffusion)

    # generate
    p_gen = sub.add_parser("generate", help="sample one image from a prompt or layout")
    p_gen.add_argument("--ckpt", required=True, help="generator checkpoint")
    p_gen.add_argument("--prompt", default=None)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--steps", type=int, default=None, help="sampling steps (default: full schedule)")
    p_gen.add_argument("--out", required=True, help="output PNG")
    p_gen.add_argument("--layout-ckpt", default=None, help="layout decoder for --prompt")
    p_gen.add_argument("--layout-json", default=None, help="layout JSON file (bypasses the decoder)")
    p_gen.add_argument("--method", choices=("ddpm", "ddim"), default="ddpm")
    _add_config_flags(p_gen)
    p_gen.set_defaults(func=_cmd_generate)

    # traverse
    p_tr = sub.add_parser("traverse", help="curriculum-ordered generation over a concept graph")
    p_tr.add_argument("--graph", required=True, help="concept graph JSON")
    p_tr.add_argument("--concept", required=True, help="target concept id")
    p_tr.add_argument("--out-dir", required=True)
    p_tr.add_argument("--layout-ckpt", required=True)
    p_tr.add_argument("--gen-ckpt", required=True)
    p_tr.add_argument("--seed", type=int, default=0)
    p_tr.add_argument("--steps", type=int, default=None)
    p_tr.add_argument("--method", choices=("ddpm", "ddim"), default="ddpm")
    _add_config_flags(p_tr)
    p_tr.set_defaults(func=_cmd_traverse)

    # evaluate
    p_ev = sub.add_parser("evaluate", help="score generated images against a reference manifest")
    p_ev.add_argument("--pred-dir", required=True, help="directory of <id>.png and <id>.layout.json")
    p_ev.add_argument("--ref", required=True, help="reference manifest JSONL")
    p_ev.add_argument("--out", required=True, help="report JSON path")
    _add_config_flags(p_ev)
    p_ev.set_defaults(func=_cmd_evaluate)

    # tune-background
    p_tb = sub.add_parser("tune-background", help="select the cleanest background pseudo-prompt")
    p_tb.add_argument("--ckpt", required=True, help="generator checkpoint")
    p_tb.add_argument("--candidates", required=True, help="JSON file of candidate embeddings")
    p_tb.add_argument("--seeds", type=int, default=3, help="number of trial seeds per candidate")
    p_tb.add_argument("--out", required=True, help="selection JSON path")
    p_tb.add_argument("--layout-json", default=None)
    p_tb.add_argument("--steps", type=int, default=None)
    p_tb.add_argument("--w-lum", type=float, default=0.5)
    p_tb.add_argument("--w-edge", type=float, default=0.5)
    _add_config_flags(p_tb)
    p_tb.set_defaults(func=_cmd_tune_background)

    # inspect-layout
    p_il = sub.add_parser("inspect-layout", help="print the layout a decoder predicts for a prompt")
    p_il.add_argument("--ckpt", required=True, help="layout decoder checkpoint")
    p_il.add_argument("--prompt", required=True)
    p_il.add_argument("--out", default=None, help="also write the layout JSON here")
    p_il.add_argument("--render", default=None, help="draw labeled boxes to this PNG")
    p_il.add_argument("--size", type=int, default=256, help="render canvas side")
    _add_config_flags(p_il)
    p_il.set_defaults(func=_cmd_inspect_layout)

    return parser


# -- subcommand bodies -----------------------------------------------------------


def _cmd_dataset_synth(args) -> int:
    from .dataset import SynthSpec, generate_concept_dataset, generate_synthetic_dataset

    started = time.time()
    cfg = _merged_config(args)
    out = Path(args.out)
    if args.concepts > 0:
        records, manifest = generate_concept_dataset(
            out,
            seed=args.seed,
            num_concepts=args.concepts,
            samples_per_concept=args.samples_per_concept,
            image_size=args.size,
        )
    else:
        if args.labels:
            palette = tuple(s.strip() for s in args.labels.split(",") if s.strip())
        else:
            palette = SynthSpec().label_palette
        spec = SynthSpec(
            num_records=args.n,
            image_size=args.size,
            shapes_per_image=(args.shapes_min, args.shapes_max),
            label_palette=palette,
        )
        records, manifest = generate_synthetic_dataset(spec, seed=args.seed, out_dir=out)
    write_run_manifest(
        out,
        "dataset synth",
        cfg,
        args.seed,
        started,
        outputs={"manifest": str(manifest), "num_records": len(records)},
    )
    print(f"wrote {len(records)} records to {manifest}")
    return 0


def _labels_in(records) -> tuple[str, ...]:
    labels = sorted({r.label for rec in records for r in rec.regions})
    if not labels:
        raise EmptyDataset("manifest has no region labels")
    return tuple(labels)


def _cmd_train_layout(args) -> int:
    from .dataset import load_manifest
    from .layout_decoder import (
        LayoutDecoderConfig,
        LayoutTrainConfig,
        build_layout_decoder,
        save_layout_decoder,
        train_layout_decoder,
    )

    started = time.time()
    cfg = _merged_config(args)
    enc = encoder_from_config(cfg)
    records = load_manifest(args.data)
    model_cfg = LayoutDecoderConfig(
        label_vocab=_labels_in(records),
        max_tokens=args.max_tokens,
        embed_dim=args.embed_dim,
        num_layers=args.layers,
        num_heads=args.heads,
        objectness_threshold=args.threshold,
        text_dim=enc.text_dim,
        region_dim=enc.image_dim,
        use_layout_queries=not args.no_layout_queries,
    )
    model = build_layout_decoder(model_cfg, seed=args.seed)
    train_cfg = LayoutTrainConfig(
        steps=args.steps,
        batch_size=min(args.batch, len(records)),
        lr=args.lr,
        weight_decay=args.weight_decay,
        box_weight=args.box_weight,
        label_weight=args.label_weight,
        objectness_weight=args.objectness_weight,
        seed=args.seed,
    )
    model, history = train_layout_decoder(
        model, records, enc, loss_cfg=loss_from_config(cfg), train_cfg=train_cfg
    )
    ckpt = save_layout_decoder(model, args.out, extra={"encoder": cfg["encoder"]})
    hist_path = ckpt.parent / "history.json"
    hist_path.write_text(json.dumps(history, indent=2) + "\n")
    write_run_manifest(
        ckpt.parent,
        "train-layout",
        cfg,
        args.seed,
        started,
        outputs={"checkpoint": str(ckpt), "history": str(hist_path), "steps": len(history)},
    )
    final = history[-1]["total"] if history else float("nan")
    print(f"trained {len(history)} steps; final total loss {final:.4f}; wrote {ckpt}")
    return 0


def _cmd_train_diffusion(args) -> int:
    from .dataset import load_manifest
    from .diffusion import (
        DiffusionTrainConfig,
        NoiseSchedule,
        UNetConfig,
        build_generator,
        save_generator,
        train_diffusion,
    )

    started = time.time()
    cfg = _merged_config(args)
    enc = encoder_from_config(cfg)
    records = load_manifest(args.data)
    layout_model = None
    if args.layout_source == "decoder":
        if not args.layout_ckpt:
            raise ParseError("--layout-source decoder needs --layout-ckpt")
        from .layout_decoder import load_layout_decoder

        layout_model, _ = load_layout_decoder(args.layout_ckpt)
        vocab = layout_model.config.label_vocab
    else:
        vocab = _labels_in(records)
    unet_cfg = UNetConfig(
        image_size=args.image_size,
        base_channels=args.base_channels,
        channel_mults=args.mults,
        attention_resolutions=args.attn_res,
        layout_dim=args.layout_dim,
        attn_dim=args.attn_dim,
        num_heads=args.heads,
    )
    model = build_generator(
        unet_cfg, vocab, NoiseSchedule.linear(num_steps=args.sched_steps), seed=args.seed
    )
    train_cfg = DiffusionTrainConfig(
        steps=args.steps,
        batch_size=min(args.batch, len(records)),
        lr=args.lr,
        weight_decay=args.weight_decay,
        semantic_every=args.semantic_every,
        seed=args.seed,
    )
    model, history = train_diffusion(
        model,
        records,
        layout_source=args.layout_source,
        enc=enc,
        loss_cfg=loss_from_config(cfg),
        train_cfg=train_cfg,
        layout_model=layout_model,
    )
    ckpt = save_generator(model, args.out, extra={"encoder": cfg["encoder"]})
    hist_path = ckpt.parent / "history.json"
    hist_path.write_text(json.dumps(history, indent=2) + "\n")
    write_run_manifest(
        ckpt.parent,
        "train-diffusion",
        cfg,
        args.seed,
        started,
        outputs={"checkpoint": str(ckpt), "history": str(hist_path), "steps": len(history)},
    )
    final = history[-1]["noise_mse"] if history else float("nan")
    print(f"trained {len(history)} steps; final noise MSE {final:.4f}; wrote {ckpt}")
    return 0


def _layout_for_prompt(args, cfg) -> Layout:
    """Resolve the conditioning layout: explicit JSON file, or a decoder
    prediction for --prompt."""
    if args.layout_json:
        return layout_from_json(Path(args.layout_json).read_text())
    if args.prompt is None or args.layout_ckpt is None:
        raise ParseError("need either --layout-json or both --prompt and --layout-ckpt")
    from .layout_decoder import load_layout_decoder, predict_layout

    decoder, extra = load_layout_decoder(args.layout_ckpt)
    enc_cfg = extra.get("encoder")
    enc = encoder_from_config({"encoder": enc_cfg} if enc_cfg else cfg)
    layout, _ = predict_layout(decoder, args.prompt, enc)
    return layout


def _cmd_generate(args) -> int:
    from .dataset import save_image
    from .diffusion import generate, load_generator

    started = time.time()
    cfg = _merged_config(args)
    layout = _layout_for_prompt(args, cfg)
    model, _ = load_generator(args.ckpt)
    image = generate(model, layout, seed=args.seed, num_steps=args.steps, method=args.method)
    out = Path(args.out)
    save_image(image, out)
    layout_path = out.with_suffix(".layout.json")
    layout_path.write_text(layout_to_json(layout) + "\n")
    write_run_manifest(
        out.parent,
        "generate",
        cfg,
        args.seed,
        started,
        outputs={"image": str(out), "layout": str(layout_path)},
    )
    print(f"wrote {out}")
    return 0


def _cmd_traverse(args) -> int:
    from .dataset import save_image
    from .diffusion import generate, load_generator
    from .graph import curriculum_order, load_concept_graph, traverse_with
    from .layout_decoder import load_layout_decoder, predict_layout

    started = time.time()
    cfg = _merged_config(args)
    graph = load_concept_graph(Path(args.graph))
    decoder, extra = load_layout_decoder(args.layout_ckpt)
    enc_cfg = extra.get("encoder")
    enc = encoder_from_config({"encoder": enc_cfg} if enc_cfg else cfg)
    gen_model, _ = load_generator(args.gen_ckpt)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def frame(node, step_seed):
        layout, _ = predict_layout(decoder, node.prompt, enc)
        image = generate(
            gen_model, layout, seed=step_seed, num_steps=args.steps, method=args.method
        )
        return layout, image

    frames = traverse_with(graph, args.concept, frame, seed=args.seed)
    plan = curriculum_order(graph, args.concept)
    frame_entries = []
    for i, fr in enumerate(frames):
        name = f"frame_{i:03d}.png"
        save_image(fr.image, out_dir / name)
        frame_entries.append(
            {
                "index": i,
                "concept_id": fr.concept_id,
                "prompt": fr.prompt,
                "seed": fr.seed,
                "image": name,
                "layout": layout_to_dict(fr.layout),
            }
        )
    plan_doc = {
        "target": plan.target,
        "ordered_concepts": list(plan.ordered_concepts),
        "frames": frame_entries,
    }
    (out_dir / "plan.json").write_text(json.dumps(plan_doc, indent=2, sort_keys=True) + "\n")
    write_run_manifest(
        out_dir,
        "traverse",
        cfg,
        args.seed,
        started,
        outputs={"plan": str(out_dir / "plan.json"), "frames": len(frames)},
    )
    print(f"wrote {len(frames)} frames to {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    from .dataset import load_image, load_manifest
    from .encoders import encode_image
    from .errors import EmptyCrop, EmptyReferences
    from .metrics import build_report, crop_clip_score, fid_score, mask_from_box, sam_iou

    started = time.time()
    cfg = _merged_config(args)
    enc = encoder_from_config(cfg)
    refs = load_manifest(args.ref)
    if not refs:
        raise EmptyDataset(f"reference manifest {args.ref} has no records")
    pred_dir = Path(args.pred_dir)

    items = []
    pred_feats, ref_feats = [], []
    for rec in refs:
        img_path = pred_dir / f"{rec.id}.png"
        if not img_path.exists():
            raise MissingImage(f"no prediction for record {rec.id!r}: {img_path}")
        pred_img = load_image(img_path)
        layout_path = pred_dir / f"{rec.id}.layout.json"
        if layout_path.exists():
            pred_layout = layout_from_json(layout_path.read_text())
        else:
            pred_layout = Layout(elements=(), concept=rec.caption)
        ref_img = load_image(rec.image_path)
        h, w = ref_img.shape[0], ref_img.shape[1]
        masks = [mask_from_box(r.box, r.label, h, w) for r in rec.regions]

        item: dict = {"id": rec.id}
        item["sam_iou"] = sam_iou(pred_layout, masks) if masks else None
        try:
            item["crop_clip"] = crop_clip_score(pred_img, pred_layout, enc)
        except (EmptyCrop, EmptyReferences):
            item["crop_clip"] = None
        items.append(item)
        pred_feats.append(encode_image(enc, pred_img).values)
        ref_feats.append(encode_image(enc, ref_img).values)

    fid = None
    if len(pred_feats) >= 2:
        fid = fid_score(np.stack(pred_feats), np.stack(ref_feats))
    report = build_report(
        items,
        fid=fid,
        notes=(
            "sam_iou is box-to-mask IoU on the reference grid (no segmentation backend)",
            "crop_clip and fid use the configured encoder's features",
        ),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    write_run_manifest(
        out.parent, "evaluate", cfg, None, started, outputs={"report": str(out)}
    )
    summary = {k: v for k, v in report.to_dict().items() if k in ("sam_iou", "crop_clip", "fid")}
    print(json.dumps(summary))
    return 0


def _cmd_tune_background(args) -> int:
    from .boxes import Embedding
    from .diffusion import generate, load_generator
    from .prompts import select_background_pseudo_prompt

    started = time.time()
    cfg = _merged_config(args)
    model, _ = load_generator(args.ckpt)
    raw = json.loads(Path(args.candidates).read_text())
    if isinstance(raw, dict):
        raw = raw.get("candidates", [])
    candidates = [Embedding(np.asarray(v, dtype=np.float64)) for v in raw]
    if args.layout_json:
        layout = layout_from_json(Path(args.layout_json).read_text())
    else:
        layout = Layout(elements=(), concept="background")

    def render(cand, seed):
        return generate(
            model, layout, seed=seed, num_steps=args.steps, extra_context=cand.values
        )

    best, index, scores = select_background_pseudo_prompt(
        candidates,
        model,
        layout,
        seeds=tuple(range(args.seeds)),
        clarity_weights=(args.w_lum, args.w_edge),
        render_fn=render,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "best_index": index,
        "scores": scores,
        "best": [float(v) for v in best.values],
    }
    out.write_text(json.dumps(doc, indent=2) + "\n")
    write_run_manifest(
        out.parent,
        "tune-background",
        cfg,
        None,
        started,
        outputs={"selection": str(out), "candidates": len(candidates)},
    )
    print(f"candidate {index} wins; wrote {out}")
    return 0


def render_layout_overlay(layout: Layout, size: int):
    """White canvas with one colored outline rectangle per element and its
    label drawn in black.  Outline pixel extents match the serialized box
    after scaling by the canvas size."""
    from PIL import Image, ImageDraw

    img = Image.new("RGB", (size, size), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    for i, el in enumerate(layout):
        color = _OUTLINE_COLORS[i % len(_OUTLINE_COLORS)]
        x0 = int(round(el.box.x * size))
        y0 = int(round(el.box.y * size))
        x1 = max(int(round((el.box.x + el.box.w) * size)) - 1, x0)
        y1 = max(int(round((el.box.y + el.box.h) * size)) - 1, y0)
        draw.rectangle([x0, y0, x1, y1], outline=color)
        draw.text((min(x0 + 2, size - 8), min(y0 + 1, size - 10)), el.label, fill=(0, 0, 0))
    return img


def _cmd_inspect_layout(args) -> int:
    from .layout_decoder import load_layout_decoder, predict_layout

    started = time.time()
    cfg = _merged_config(args)
    decoder, extra = load_layout_decoder(args.ckpt)
    enc_cfg = extra.get("encoder")
    enc = encoder_from_config({"encoder": enc_cfg} if enc_cfg else cfg)
    layout, confidences = predict_layout(decoder, args.prompt, enc)
    text = layout_to_json(layout)
    print(text)
    manifest_dir = Path(".")
    outputs: dict = {"elements": len(layout), "confidences": confidences}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
        outputs["layout"] = str(out)
        manifest_dir = out.parent
    if args.render:
        render_path = Path(args.render)
        render_path.parent.mkdir(parents=True, exist_ok=True)
        render_layout_overlay(layout, args.size).save(render_path, format="PNG")
        outputs["render"] = str(render_path)
        manifest_dir = render_path.parent
    write_run_manifest(manifest_dir, "inspect-layout", cfg, None, started, outputs=outputs)
    return 0


def dispatch(argv: list[str] | None = None) -> int:
    """Parse argv and run one subcommand.  0 success, 1 domain error,
    2 usage error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    try:
        return args.func(args)
    except LearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
