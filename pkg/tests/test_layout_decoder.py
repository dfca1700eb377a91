import dataclasses

import numpy as np
import pytest
import torch

from learn.boxes import validate_box
from learn.dataset import PALETTE, SynthSpec, generate_synthetic_dataset
from learn.encoders import toy_encoder
from learn.errors import EmptyDataset, EmptyInput, ParseError, UnknownLabel
from learn.layout_decoder import (
    LayoutDecoderConfig,
    LayoutTrainConfig,
    build_layout_decoder,
    layout_token_embeddings,
    load_layout_decoder,
    mean_layout_iou,
    predict_layout,
    save_layout_decoder,
    train_layout_decoder,
)
from learn.losses import LossConfig

ENC = toy_encoder(dim=64, seed=0)
VOCAB = tuple(sorted(PALETTE))


def _config(**kw):
    base = dict(
        label_vocab=VOCAB,
        max_tokens=8,
        embed_dim=64,
        num_layers=2,
        num_heads=4,
        text_dim=ENC.text_dim,
        region_dim=ENC.image_dim,
    )
    base.update(kw)
    return LayoutDecoderConfig(**base)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    spec = SynthSpec(num_records=16, image_size=32, label_palette=VOCAB)
    records, _ = generate_synthetic_dataset(
        spec, seed=0, out_dir=tmp_path_factory.mktemp("corpus")
    )
    return records


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            _config(max_tokens=0)
        with pytest.raises(ValueError):
            _config(embed_dim=65)
        with pytest.raises(ValueError):
            _config(label_vocab=())
        with pytest.raises(ValueError):
            _config(label_vocab=("a", "a"))
        with pytest.raises(ValueError):
            _config(objectness_threshold=1.5)


class TestPredict:
    def test_deterministic_untrained(self):
        model = build_layout_decoder(_config(), seed=1)
        a, ca = predict_layout(model, "a scene with a red-square", ENC)
        b, cb = predict_layout(model, "a scene with a red-square", ENC)
        assert a == b and ca == cb

    def test_boxes_valid_under_random_parameters(self):
        # squashing map must hold regardless of weights; blow up the box head
        # to push sigmoids toward the corners
        for seed in range(5):
            model = build_layout_decoder(_config(objectness_threshold=0.0), seed=seed)
            with torch.no_grad():
                model.box_head.weight.mul_(50.0)
                model.box_head.bias.uniform_(-20.0, 20.0)
            layout, _ = predict_layout(model, f"case {seed}", ENC)
            assert len(layout) == 8  # threshold 0 keeps every query
            for el in layout:
                validate_box(el.box.as_tuple())

    def test_high_threshold_untrained_selects_nothing(self):
        model = build_layout_decoder(_config(objectness_threshold=0.99), seed=2)
        layout, conf = predict_layout(model, "anything at all", ENC)
        assert len(layout) == 0 and conf == []

    def test_threshold_monotonic(self):
        caption = "a scene with a blue-disc"
        counts = []
        for thr in (0.0, 0.3, 0.5, 0.7, 0.99):
            model = build_layout_decoder(_config(objectness_threshold=thr), seed=3)
            layout, _ = predict_layout(model, caption, ENC)
            counts.append(len(layout))
        assert counts == sorted(counts, reverse=True)
        assert all(c <= 8 for c in counts)

    def test_confidences_sorted_descending(self):
        model = build_layout_decoder(_config(objectness_threshold=0.0), seed=4)
        _, conf = predict_layout(model, "several shapes", ENC)
        assert conf == sorted(conf, reverse=True)

    def test_concept_attached(self):
        model = build_layout_decoder(_config(), seed=0)
        layout, _ = predict_layout(model, "a cyan-triangle", ENC)
        assert layout.concept == "a cyan-triangle"

    def test_bad_input_shape(self):
        model = build_layout_decoder(_config(), seed=0)
        with pytest.raises(EmptyInput):
            model(torch.zeros(64))


class TestTokenEmbeddings:
    def test_shapes_and_norm(self):
        model = build_layout_decoder(_config(), seed=5)
        tokens, global_emb = layout_token_embeddings(model, "a yellow-square", ENC)
        assert len(tokens) == 8
        assert all(t.dim == 64 for t in tokens)
        assert global_emb.norm == pytest.approx(1.0, abs=1e-6)

    def test_global_is_normalized_mean_of_selected(self):
        # threshold 0 selects every token, so the pool is the plain mean
        model = build_layout_decoder(_config(objectness_threshold=0.0), seed=6)
        tokens, global_emb = layout_token_embeddings(model, "a violet-disc", ENC)
        mean = np.mean([t.values for t in tokens], axis=0)
        expected = mean / np.linalg.norm(mean)
        assert np.allclose(global_emb.values, expected, atol=1e-6)


class TestMatching:
    def test_assignment_is_permutation(self):
        from learn.layout_decoder import _Example, _match

        rng = np.random.default_rng(0)
        for _ in range(20):
            T, G, V = 8, int(rng.integers(1, 9)), 5
            boxes = torch.rand(T, 4) * 0.4
            logits = torch.tensor(rng.standard_normal((T, V)), dtype=torch.float32)
            ex = _Example(
                text=torch.zeros(4),
                boxes=torch.rand(G, 4) * 0.4,
                labels=torch.tensor(rng.integers(0, V, size=G)),
                regions=torch.zeros(G, 3),
                concept=None,
            )
            qi, gi = _match(boxes, logits, ex)
            assert len(qi) == G
            assert len(set(qi.tolist())) == G
            assert sorted(gi.tolist()) == list(range(G))


class TestTraining:
    def test_loss_halves_on_small_corpus(self, corpus):
        model = build_layout_decoder(_config(), seed=1)
        cfg = LayoutTrainConfig(steps=300, batch_size=16, lr=3e-3, seed=0)
        _, history = train_layout_decoder(model, corpus, ENC, train_cfg=cfg)
        assert len(history) == 300
        assert history[-1]["total"] < 0.5 * history[0]["total"]

    def test_overfit_single_pair_iou(self, tmp_path):
        spec = SynthSpec(num_records=1, image_size=32, label_palette=VOCAB)
        records, _ = generate_synthetic_dataset(spec, seed=2, out_dir=tmp_path / "one")
        model = build_layout_decoder(_config(), seed=1)
        cfg = LayoutTrainConfig(steps=300, batch_size=1, lr=3e-3, seed=0)
        train_layout_decoder(model, records, ENC, train_cfg=cfg)
        assert mean_layout_iou(model, records, ENC) >= 0.5

    def test_bitwise_identical_history(self, corpus):
        histories = []
        for _ in range(2):
            model = build_layout_decoder(_config(), seed=7)
            cfg = LayoutTrainConfig(steps=10, batch_size=4, lr=1e-3, seed=3)
            _, history = train_layout_decoder(model, corpus, ENC, train_cfg=cfg)
            histories.append(history)
        assert histories[0] == histories[1]

    def test_history_records_every_term(self, corpus):
        model = build_layout_decoder(_config(), seed=0)
        cfg = LayoutTrainConfig(steps=2, batch_size=4, seed=0)
        _, history = train_layout_decoder(model, corpus, ENC, train_cfg=cfg)
        for row in history:
            for key in (
                "step",
                "total",
                "box_l1",
                "label_ce",
                "objectness_bce",
                "token_alignment",
                "layout_contrast",
                "intra_concept",
            ):
                assert key in row

    def test_zero_weights_freeze_label_head(self, corpus):
        model = build_layout_decoder(_config(), seed=2)
        before_label = model.label_head.weight.detach().clone()
        before_box = model.box_head.weight.detach().clone()
        cfg = LayoutTrainConfig(
            steps=3,
            batch_size=4,
            lr=1e-2,
            weight_decay=0.0,
            box_weight=5.0,
            label_weight=0.0,
            objectness_weight=0.0,
            seed=0,
        )
        zeroed = LossConfig(
            lambda_align=0.0, lambda_laycontrast=0.0, lambda_intra=0.0
        )
        train_layout_decoder(model, corpus, ENC, loss_cfg=zeroed, train_cfg=cfg)
        assert torch.equal(model.label_head.weight, before_label)
        assert not torch.equal(model.box_head.weight, before_box)

    def test_empty_dataset(self):
        model = build_layout_decoder(_config(), seed=0)
        with pytest.raises(EmptyDataset):
            train_layout_decoder(model, [], ENC)

    def test_batch_larger_than_dataset(self, corpus):
        model = build_layout_decoder(_config(), seed=0)
        cfg = LayoutTrainConfig(steps=1, batch_size=64, seed=0)
        with pytest.raises(EmptyDataset):
            train_layout_decoder(model, corpus, ENC, train_cfg=cfg)

    def test_unknown_label(self, corpus):
        narrow = build_layout_decoder(_config(label_vocab=("red-square",)), seed=0)
        cfg = LayoutTrainConfig(steps=1, batch_size=2, seed=0)
        with pytest.raises(UnknownLabel):
            train_layout_decoder(narrow, corpus, ENC, train_cfg=cfg)

    def test_record_without_regions(self, corpus):
        bare = dataclasses.replace(corpus[0], regions=())
        model = build_layout_decoder(_config(), seed=0)
        cfg = LayoutTrainConfig(steps=1, batch_size=1, seed=0)
        with pytest.raises(EmptyDataset):
            train_layout_decoder(model, [bare], ENC, train_cfg=cfg)


class TestAblation:
    def test_disabled_queries_are_zero_and_frozen(self, corpus):
        model = build_layout_decoder(_config(use_layout_queries=False), seed=1)
        assert torch.equal(model.query_embed, torch.zeros_like(model.query_embed))
        assert not model.query_embed.requires_grad
        cfg = LayoutTrainConfig(steps=3, batch_size=4, lr=1e-2, seed=0)
        train_layout_decoder(model, corpus, ENC, train_cfg=cfg)
        assert torch.equal(model.query_embed, torch.zeros_like(model.query_embed))


class TestEvaluation:
    def test_mean_iou_bounds(self, corpus):
        model = build_layout_decoder(_config(), seed=3)
        v = mean_layout_iou(model, corpus, ENC)
        assert 0.0 <= v <= 1.0

    def test_empty_records(self):
        model = build_layout_decoder(_config(), seed=0)
        with pytest.raises(EmptyDataset):
            mean_layout_iou(model, [], ENC)


class TestPersistence:
    def test_round_trip_preserves_predictions(self, tmp_path):
        model = build_layout_decoder(_config(), seed=9)
        caption = "a scene with an orange-square"
        before, conf_before = predict_layout(model, caption, ENC)
        path = save_layout_decoder(model, tmp_path / "m.ckpt", extra={"note": "test"})
        loaded, extra = load_layout_decoder(path)
        after, conf_after = predict_layout(loaded, caption, ENC)
        assert before == after and conf_before == conf_after
        assert extra == {"note": "test"}

    def test_kind_checked(self, tmp_path):
        from learn.checkpoint import save_checkpoint

        p = save_checkpoint(tmp_path / "x.ckpt", "something-else", {}, {})
        with pytest.raises(ParseError):
            load_layout_decoder(p)
