"""Train the caption-to-layout decoder on a small corpus and inspect what it
predicts.

The decoder is a DETR-style set predictor: a fixed budget of learned queries
cross-attends to the caption embedding, and each query emits (label, box,
objectness).  A few hundred steps on 16 records is enough to memorize the
caption -> layout mapping; mean IoU against the oracle boxes is the score.
"""

from pathlib import Path

from learn.cli import render_layout_overlay
from learn.boxes import layout_to_json
from learn.dataset import SynthSpec, generate_synthetic_dataset
from learn.encoders import toy_encoder
from learn.layout_decoder import (
    LayoutDecoderConfig,
    LayoutTrainConfig,
    build_layout_decoder,
    mean_layout_iou,
    predict_layout,
    train_layout_decoder,
)

OUT = Path(__file__).parent / "output" / "02_layout_from_captions"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    enc = toy_encoder()
    spec = SynthSpec(num_records=16, image_size=32)
    records, _ = generate_synthetic_dataset(spec, seed=0, out_dir=OUT / "corpus")
    vocab = tuple(sorted({r.label for rec in records for r in rec.regions}))

    cfg = LayoutDecoderConfig(
        label_vocab=vocab,
        max_tokens=8,
        embed_dim=64,
        num_layers=2,
        num_heads=4,
        text_dim=enc.text_dim,
        region_dim=enc.image_dim,
        objectness_threshold=0.35,
    )
    model = build_layout_decoder(cfg, seed=1)
    model, history = train_layout_decoder(
        model,
        records,
        enc,
        train_cfg=LayoutTrainConfig(steps=400, batch_size=16, lr=3e-3, seed=0),
    )
    print(f"loss: {history[0]['total']:.3f} -> {history[-1]['total']:.3f}")
    print(f"mean IoU vs oracle boxes: {mean_layout_iou(model, records, enc):.3f}")

    caption = records[0].caption
    layout, confidences = predict_layout(model, caption, enc)
    print(f"\ncaption: {caption!r}")
    print(layout_to_json(layout))
    print(f"confidences: {[round(c, 3) for c in confidences]}")

    overlay = OUT / "predicted_layout.png"
    render_layout_overlay(layout, 256).save(overlay, format="PNG")
    print(f"overlay -> {overlay}")


if __name__ == "__main__":
    main()
