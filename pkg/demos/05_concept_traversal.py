"""Walk a prerequisite graph in curriculum order, generating one frame per
concept.

The graph is a DAG of concepts with prompts; the plan for a target is a
topological order of the target plus its transitive prerequisites, ending at
the target.  Each step decodes the concept's prompt into a layout and samples
an image from it, with a per-step seed derived from (run seed, concept id) so
the whole story is reproducible.
"""

import json
from pathlib import Path

from learn.dataset import SynthSpec, generate_synthetic_dataset, save_image
from learn.diffusion import (
    DiffusionTrainConfig,
    NoiseSchedule,
    UNetConfig,
    build_generator,
    generate,
    train_diffusion,
)
from learn.encoders import toy_encoder
from learn.graph import curriculum_order, load_concept_graph, traverse_with
from learn.layout_decoder import (
    LayoutDecoderConfig,
    LayoutTrainConfig,
    build_layout_decoder,
    predict_layout,
    train_layout_decoder,
)

OUT = Path(__file__).parent / "output" / "05_concept_traversal"

GRAPH = {
    "nodes": [
        {"id": "single-shape", "prompt": "a blue-disc"},
        {"id": "pairing", "prompt": "a blue-disc beside a red-square"},
        {"id": "stacking", "prompt": "a red-square above a blue-disc"},
        {"id": "full-scene", "prompt": "a green-triangle beside a red-square above a blue-disc"},
    ],
    "edges": [
        ["single-shape", "pairing"],
        ["single-shape", "stacking"],
        ["pairing", "full-scene"],
        ["stacking", "full-scene"],
    ],
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    graph = load_concept_graph(GRAPH)
    plan = curriculum_order(graph, "full-scene")
    print(f"curriculum for 'full-scene': {list(plan.ordered_concepts)}")

    enc = toy_encoder()
    palette = ("blue-disc", "red-square", "green-triangle")
    spec = SynthSpec(num_records=12, image_size=16, label_palette=palette)
    records, _ = generate_synthetic_dataset(spec, seed=0, out_dir=OUT / "corpus")

    decoder = build_layout_decoder(
        LayoutDecoderConfig(
            label_vocab=palette, max_tokens=6, embed_dim=64, num_layers=2,
            num_heads=4, text_dim=enc.text_dim, region_dim=enc.image_dim,
        ),
        seed=1,
    )
    decoder, _ = train_layout_decoder(
        decoder, records, enc,
        train_cfg=LayoutTrainConfig(steps=200, batch_size=12, lr=3e-3, seed=0),
    )
    gen_model = build_generator(
        UNetConfig(image_size=16, base_channels=16, channel_mults=(1, 2),
                   attention_resolutions=(8,), layout_dim=32, attn_dim=32, num_heads=2),
        palette, NoiseSchedule.linear(num_steps=60), seed=0,
    )
    gen_model, _ = train_diffusion(
        gen_model, records,
        train_cfg=DiffusionTrainConfig(steps=200, batch_size=8, lr=2e-3, seed=0,
                                       semantic_every=0),
    )

    def frame(node, step_seed):
        layout, _ = predict_layout(decoder, node.prompt, enc)
        return layout, generate(gen_model, layout, seed=step_seed)

    frames = traverse_with(graph, "full-scene", frame, seed=0)
    story = []
    for i, fr in enumerate(frames):
        name = f"frame_{i:02d}_{fr.concept_id}.png"
        save_image(fr.image, OUT / name)
        story.append({"concept": fr.concept_id, "prompt": fr.prompt,
                      "elements": len(fr.layout), "image": name})
        print(f"  [{i}] {fr.concept_id:<13} {fr.prompt!r} -> {name}")
    (OUT / "story.json").write_text(json.dumps(story, indent=2) + "\n")
    print(f"frames -> {OUT}")


if __name__ == "__main__":
    main()
