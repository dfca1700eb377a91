import math

import numpy as np
import pytest
import torch

from learn.boxes import Embedding
from learn.encoders import toy_encoder
from learn.errors import AllMasked, MismatchedLengths, ZeroVector
from learn.losses import (
    LossConfig,
    augment_layout_embedding,
    combined_layout_loss,
    cosine_similarity,
    intra_concept_loss,
    layout_contrastive_loss,
    semantic_alignment_from_embeddings,
    semantic_alignment_loss,
    token_alignment_loss,
)


class TestLossConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.tau == 0.07
        assert cfg.lambda_intra == 0.36

    def test_validation(self):
        with pytest.raises(ValueError):
            LossConfig(tau=0.0)
        with pytest.raises(ValueError):
            LossConfig(lambda_align=-0.1)
        with pytest.raises(ValueError):
            LossConfig(augment_mask_prob=1.0)


class TestCosine:
    def test_identical_unit(self):
        v = np.array([0.6, 0.8])
        assert cosine_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)

    def test_45_degrees(self):
        a = np.array([1.0, 0.0])
        b = np.array([1.0, 1.0]) / math.sqrt(2)
        assert cosine_similarity(a, b) == pytest.approx(0.707107, abs=1e-6)

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_dim_mismatch(self):
        with pytest.raises(MismatchedLengths):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_tensor_in_tensor_out(self):
        a = torch.tensor([1.0, 0.0], dtype=torch.float64, requires_grad=True)
        out = cosine_similarity(a, torch.tensor([0.0, 1.0], dtype=torch.float64))
        assert isinstance(out, torch.Tensor) and out.requires_grad

    def test_embedding_inputs_give_float(self):
        out = cosine_similarity(Embedding(np.array([1.0, 0.0])), Embedding(np.array([1.0, 0.0])))
        assert isinstance(out, float)


class TestTokenAlignment:
    def test_singleton_is_zero(self):
        l = np.array([[1.0, 0.0]])
        assert token_alignment_loss(l, l, tau=1.0) == pytest.approx(0.0, abs=1e-12)

    def test_identity_sim_matrix_oracle(self):
        # sim matrix [[1,0],[0,1]] at tau=1 -> -log(e/(e+1)) = 0.313262
        l = np.eye(2)
        assert token_alignment_loss(l, l, tau=1.0) == pytest.approx(0.313262, abs=1e-6)

    def test_uniform_sims_give_log_n(self):
        # all tokens identical: every pairwise sim is 1, softmax is uniform
        for n in (2, 3, 7):
            l = np.tile(np.array([[0.6, 0.8]]), (n, 1))
            assert token_alignment_loss(l, l, tau=0.3) == pytest.approx(math.log(n), abs=1e-9)

    def test_dominant_diagonal_near_zero(self):
        # positives at cosine 1, negatives <= 0, tau small -> loss ~ 0
        assert token_alignment_loss(np.eye(2), np.eye(2), tau=0.07) < 1e-6
        spread = np.array(
            [[math.cos(a), math.sin(a)] for a in (0.0, 2 * math.pi / 3, 4 * math.pi / 3)]
        )
        assert token_alignment_loss(spread, spread, tau=0.07) < 1e-6

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            l = rng.standard_normal((5, 8))
            v = rng.standard_normal((5, 8))
            assert token_alignment_loss(l, v, tau=0.5) >= 0.0

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        l = rng.standard_normal((6, 8))
        v = rng.standard_normal((6, 8))
        base = token_alignment_loss(l, v, tau=0.2)
        perm = rng.permutation(6)
        assert token_alignment_loss(l[perm], v[perm], tau=0.2) == pytest.approx(base, rel=1e-12)

    def test_temperature_monotone_on_dominant_case(self):
        l = np.eye(3)
        losses = [token_alignment_loss(l, l, tau=t) for t in (1.0, 0.5, 0.25, 0.1)]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_mismatched_lengths(self):
        with pytest.raises(MismatchedLengths):
            token_alignment_loss(np.ones((2, 4)), np.ones((3, 4)))
        with pytest.raises(MismatchedLengths):
            token_alignment_loss(np.ones((0, 4)), np.ones((0, 4)))

    def test_default_tau_from_config(self):
        l = np.eye(2)
        assert token_alignment_loss(l, l) == pytest.approx(
            token_alignment_loss(l, l, tau=0.07), rel=1e-12
        )


class TestLayoutContrastive:
    def test_single_anchor_self_positive(self):
        l = np.array([[1.0, 0.0]])
        assert layout_contrastive_loss(l, l, tau=1.0) == pytest.approx(0.0, abs=1e-12)

    def test_single_anchor_half_sim(self):
        # denominator has only the self term; loss = (1 - 0.5)/tau
        l = np.array([[1.0, 0.0]])
        lp = np.array([[0.5, math.sqrt(3) / 2]])
        assert layout_contrastive_loss(l, lp, tau=1.0) == pytest.approx(0.5, abs=1e-9)

    def test_two_orthogonal_anchors(self):
        l = np.eye(2)
        assert layout_contrastive_loss(l, l, tau=1.0) == pytest.approx(0.313262, abs=1e-6)

    def test_mismatched(self):
        with pytest.raises(MismatchedLengths):
            layout_contrastive_loss(np.ones((2, 4)), np.ones((1, 4)))

    def test_tensor_path_keeps_grad(self):
        l = torch.randn(3, 8, dtype=torch.float64, requires_grad=True)
        out = layout_contrastive_loss(l, l.detach() + 0.01, tau=0.5)
        assert out.requires_grad
        out.backward()
        assert torch.isfinite(l.grad).all()


class TestIntraConcept:
    def test_identical_zero(self):
        g = np.tile(np.array([[0.0, 1.0]]), (4, 1))
        assert intra_concept_loss(g) == pytest.approx(0.0, abs=1e-12)

    def test_two_orthogonal(self):
        assert intra_concept_loss(np.eye(2)) == pytest.approx(0.5, abs=1e-12)

    def test_two_at_cosine_half(self):
        g = np.array([[1.0, 0.0], [0.5, math.sqrt(3) / 2]])
        assert intra_concept_loss(g) == pytest.approx(0.25, abs=1e-9)

    def test_order_invariant(self):
        rng = np.random.default_rng(2)
        g = rng.standard_normal((5, 6))
        assert intra_concept_loss(g) == pytest.approx(
            intra_concept_loss(g[::-1].copy()), rel=1e-12
        )

    def test_range(self):
        g = np.array([[1.0, 0.0], [-1.0, 0.0]])
        v = intra_concept_loss(g)
        assert 0.0 <= v <= 2.0


class TestCombined:
    def test_weighted_sum(self):
        assert combined_layout_loss(0.5, 0.5, LossConfig(lambda_intra=0.36)) == pytest.approx(0.68)

    def test_zero_intra(self):
        assert combined_layout_loss(0.7, 0.0, LossConfig()) == pytest.approx(0.7)

    def test_zero_weight(self):
        assert combined_layout_loss(0.7, 5.0, LossConfig(lambda_intra=0.0)) == pytest.approx(0.7)


class TestSemanticAlignment:
    def test_coincident_embeddings(self, monkeypatch):
        v = Embedding(np.array([0.6, 0.8]))
        monkeypatch.setattr("learn.losses.encode_text", lambda h, c: v)
        monkeypatch.setattr("learn.losses.encode_image", lambda h, x: v)
        assert semantic_alignment_loss("anything", np.zeros((4, 4, 3)), None) == pytest.approx(0.0)

    def test_orthogonal_is_one(self):
        a = np.array([1.0, 0.0])
        b = np.array([0.0, 1.0])
        assert semantic_alignment_from_embeddings(a, b) == pytest.approx(1.0)

    def test_opposite_is_two(self):
        a = np.array([1.0, 0.0])
        assert semantic_alignment_from_embeddings(a, -a) == pytest.approx(2.0)

    def test_toy_backend_in_range(self):
        enc = toy_encoder(dim=32, seed=0)
        img = np.random.default_rng(0).random((8, 8, 3))
        v = semantic_alignment_loss("a red square", img, enc)
        assert 0.0 <= v <= 2.0


class TestAugmentation:
    def test_identity_when_disabled(self):
        cfg = LossConfig(augment_mask_prob=0.0, augment_dropout=0.0)
        e = Embedding(np.array([3.0, 4.0]))
        out = augment_layout_embedding(e, cfg, seed=0)
        assert np.array_equal(out.values, e.values)

    def test_deterministic(self):
        cfg = LossConfig()
        e = Embedding(np.random.default_rng(3).standard_normal(64))
        a = augment_layout_embedding(e, cfg, seed=11)
        b = augment_layout_embedding(e, cfg, seed=11)
        assert np.array_equal(a.values, b.values)

    def test_different_seeds_differ(self):
        cfg = LossConfig()
        e = Embedding(np.random.default_rng(3).standard_normal(64))
        a = augment_layout_embedding(e, cfg, seed=11)
        b = augment_layout_embedding(e, cfg, seed=12)
        assert not np.array_equal(a.values, b.values)

    def test_unit_norm_output(self):
        cfg = LossConfig(augment_mask_prob=0.3, augment_dropout=0.2)
        e = Embedding(np.random.default_rng(4).standard_normal(128))
        out = augment_layout_embedding(e, cfg, seed=5)
        assert out.norm == pytest.approx(1.0, abs=1e-9)

    def test_mask_rate_concentrates(self):
        # mask_prob 0.5, no dropout: zeroed fraction should sit near 0.5
        cfg = LossConfig(augment_mask_prob=0.5, augment_dropout=0.0)
        e = Embedding(np.ones(768))
        out = augment_layout_embedding(e, cfg, seed=7)
        frac = float(np.mean(out.values == 0.0))
        assert 0.4 <= frac <= 0.6

    def test_all_masked(self):
        cfg = LossConfig(augment_mask_prob=0.999, augment_dropout=0.0)
        e = Embedding(np.ones(2))
        with pytest.raises(AllMasked):
            for seed in range(50):
                augment_layout_embedding(e, cfg, seed=seed)


# -- gradient checks against central differences -------------------------------

def _numeric_grad(fn, x: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    g = torch.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        hi = float(fn())
        flat[i] = orig - h
        lo = float(fn())
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def _check_grads(make_inputs, loss_fn, points=20, tol=1e-4):
    rng = np.random.default_rng(12345)
    for _ in range(points):
        tensors = make_inputs(rng)
        for t in tensors:
            t.requires_grad_(True)
        loss = loss_fn(*tensors)
        grads = torch.autograd.grad(loss, tensors)
        for t, g in zip(tensors, grads):
            with torch.no_grad():
                num = _numeric_grad(lambda: loss_fn(*tensors), t)
            err = (g - num).abs() / torch.clamp(torch.maximum(g.abs(), num.abs()), min=1.0)
            assert float(err.max()) < tol, f"grad mismatch {float(err.max()):.2e}"


class TestGradients:
    def test_token_alignment(self):
        def make(rng):
            return [
                torch.tensor(rng.standard_normal((3, 5)), dtype=torch.float64),
                torch.tensor(rng.standard_normal((3, 5)), dtype=torch.float64),
            ]

        _check_grads(make, lambda l, v: token_alignment_loss(l, v, tau=0.5))

    def test_layout_contrastive(self):
        def make(rng):
            return [
                torch.tensor(rng.standard_normal((3, 5)), dtype=torch.float64),
                torch.tensor(rng.standard_normal((3, 5)), dtype=torch.float64),
            ]

        _check_grads(make, lambda l, lp: layout_contrastive_loss(l, lp, tau=0.5))

    def test_intra_concept(self):
        def make(rng):
            return [torch.tensor(rng.standard_normal((4, 5)), dtype=torch.float64)]

        _check_grads(make, intra_concept_loss)

    def test_semantic_core(self):
        def make(rng):
            return [
                torch.tensor(rng.standard_normal(6), dtype=torch.float64),
                torch.tensor(rng.standard_normal(6), dtype=torch.float64),
            ]

        _check_grads(make, semantic_alignment_from_embeddings)

    def test_sharp_temperature(self):
        # tau at the 0.07 default produces steep logits; gradients must still match
        def make(rng):
            return [
                torch.tensor(rng.standard_normal((2, 4)), dtype=torch.float64),
                torch.tensor(rng.standard_normal((2, 4)), dtype=torch.float64),
            ]

        _check_grads(make, lambda l, v: token_alignment_loss(l, v, tau=0.07), points=5)
