"""Loss-term fixed points, formula limits, and loop-oracle equivalence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthlab import autodiff as ad
from depthlab import losses as L
from depthlab.autodiff import Tensor
from depthlab.losses import LossWeights, SemanticMaskSet

from oracles import (
    photometric_loss_loops,
    reconstruction_loss_loops,
    reflectance_loss_loops,
    smoothness_loss_loops,
    ssim_map_loops,
)


def rand_image(rng, c=3, h=8, w=8):
    return rng.uniform(0.0, 1.0, size=(c, h, w))


class TestSSIM:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(1)
        x = rand_image(rng)
        mean, smap = L.ssim(Tensor(x), Tensor(x))
        np.testing.assert_allclose(smap.data, np.ones((8, 8)), atol=1e-12)
        assert abs(mean.item() - 1.0) <= 1e-12
        assert abs((1.0 - mean.item()) / 2.0) <= 1e-12

    def test_inverted_checkerboard_is_negative(self):
        u, v = np.meshgrid(np.arange(8), np.arange(8))
        board = ((u + v) % 2).astype(np.float64)[None]
        mean, _ = L.ssim(Tensor(board), Tensor(1.0 - board))
        assert mean.item() < 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x, y = rand_image(rng), rand_image(rng)
            m_xy, _ = L.ssim(Tensor(x), Tensor(y))
            m_yx, _ = L.ssim(Tensor(y), Tensor(x))
            assert abs(m_xy.item() - m_yx.item()) <= 1e-12

    def test_map_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        x, y = rand_image(rng), rand_image(rng)
        _, smap = L.ssim(Tensor(x), Tensor(y))
        np.testing.assert_allclose(smap.data, ssim_map_loops(x, y), atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            L.ssim(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((3, 5, 4))))


class TestReflectanceLoss:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(4)
        r = rand_image(rng)
        assert L.reflectance_consistency_loss(Tensor(r), Tensor(r)).item() == 0.0

    def test_constant_offset(self):
        r_t = np.full((3, 8, 8), 0.5)
        r_w = np.full((3, 8, 8), 0.25)
        got = L.reflectance_consistency_loss(Tensor(r_t), Tensor(r_w), np.ones((8, 8)))
        assert abs(got.item() - 0.25) <= 1e-15

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            r_t, r_w = rand_image(rng), rand_image(rng)
            validity = (rng.uniform(size=(8, 8)) > 0.3).astype(np.float64)
            got = L.reflectance_consistency_loss(Tensor(r_t), Tensor(r_w), validity).item()
            assert abs(got - reflectance_loss_loops(r_t, r_w, validity)) <= 1e-12

    def test_empty_validity_rejected(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError, match="empty"):
            L.reflectance_consistency_loss(
                Tensor(rand_image(rng)), Tensor(rand_image(rng)), np.zeros((8, 8))
            )


class TestReconstructionLoss:
    def test_perfect_reconstruction_is_zero(self):
        rng = np.random.default_rng(7)
        t, s = rand_image(rng), rand_image(rng)
        got = L.reconstruction_loss(Tensor(t), Tensor(t), Tensor(s), Tensor(s), alpha=0.85)
        assert abs(got.item()) <= 1e-12

    def test_alpha_zero_reduces_to_l1(self):
        rng = np.random.default_rng(8)
        t_hat, t, s_hat, s = (rand_image(rng) for _ in range(4))
        got = L.reconstruction_loss(Tensor(t_hat), Tensor(t), Tensor(s_hat), Tensor(s), alpha=0.0).item()
        l1 = np.mean(np.abs(t_hat - t)) + np.mean(np.abs(s_hat - s))
        assert abs(got - l1) <= 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            t_hat, t, s_hat, s = (rand_image(rng) for _ in range(4))
            got = L.reconstruction_loss(Tensor(t_hat), Tensor(t), Tensor(s_hat), Tensor(s), alpha=0.85).item()
            assert abs(got - reconstruction_loss_loops(t_hat, t, s_hat, s, 0.85)) <= 1e-12


class TestSynthesisLoss:
    def test_equal_frames_is_zero(self):
        rng = np.random.default_rng(10)
        t = rand_image(rng)
        assert abs(L.synthesis_loss(Tensor(t), Tensor(t), alpha=0.85).item()) <= 1e-12

    def test_alpha_one_is_pure_ssim_term(self):
        rng = np.random.default_rng(11)
        a, b = rand_image(rng), rand_image(rng)
        got = L.synthesis_loss(Tensor(a), Tensor(b), alpha=1.0).item()
        mean, _ = L.ssim(Tensor(a), Tensor(b))
        assert abs(got - (1.0 - mean.item()) / 2.0) <= 1e-15

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            a, b = rand_image(rng), rand_image(rng)
            validity = (rng.uniform(size=(8, 8)) > 0.25).astype(np.float64)
            got = L.synthesis_loss(Tensor(a), Tensor(b), alpha=0.85, validity=validity).item()
            assert abs(got - photometric_loss_loops(a, b, 0.85, validity)) <= 1e-12


class TestSmoothnessLoss:
    def test_constant_depth_is_zero(self):
        rng = np.random.default_rng(13)
        img = rand_image(rng)
        masks = SemanticMaskSet(np.zeros((8, 8), dtype=np.int64))
        got = L.masked_smoothness_loss(Tensor(np.full((8, 8), 4.0)), Tensor(img), masks)
        assert got.item() == 0.0

    def test_piecewise_constant_per_mask_is_zero(self):
        rng = np.random.default_rng(14)
        labels = np.zeros((8, 8), dtype=np.int64)
        labels[:, 4:] = 1
        labels[5:, :] = 2
        depth = np.where(labels == 0, 3.0, np.where(labels == 1, 7.0, 11.0))
        img = rand_image(rng)
        got = L.masked_smoothness_loss(Tensor(depth), Tensor(img), SemanticMaskSet(labels))
        assert got.item() == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            depth = rng.uniform(1.0, 9.0, size=(8, 8))
            img = rand_image(rng)
            labels = rng.integers(0, 3, size=(8, 8))
            got = L.masked_smoothness_loss(Tensor(depth), Tensor(img), SemanticMaskSet(labels)).item()
            assert abs(got - smoothness_loss_loops(depth, img, labels)) <= 1e-12

    def test_single_mask_degenerates_to_plain_smoothness(self):
        rng = np.random.default_rng(16)
        depth = rng.uniform(1.0, 9.0, size=(8, 8))
        img = rand_image(rng)
        ones_label = SemanticMaskSet(np.zeros((8, 8), dtype=np.int64))
        got = L.masked_smoothness_loss(Tensor(depth), Tensor(img), ones_label).item()
        # plain edge-aware smoothness: every neighbor pair contributes
        assert abs(got - smoothness_loss_loops(depth, img, np.zeros((8, 8), dtype=int))) <= 1e-15

    def test_homogeneous_in_depth_scale(self):
        rng = np.random.default_rng(17)
        depth = rng.uniform(1.0, 9.0, size=(8, 8))
        img = rand_image(rng)
        labels = rng.integers(0, 2, size=(8, 8))
        masks = SemanticMaskSet(labels)
        base = L.masked_smoothness_loss(Tensor(depth), Tensor(img), masks).item()
        doubled = L.masked_smoothness_loss(Tensor(2.0 * depth), Tensor(img), masks).item()
        assert doubled == 2.0 * base  # exact for a power-of-two factor
        scaled = L.masked_smoothness_loss(Tensor(3.7 * depth), Tensor(img), masks).item()
        assert abs(scaled - 3.7 * base) <= 1e-12 * max(1.0, abs(base))


class TestTotalLoss:
    def test_all_zero_terms(self):
        z = Tensor(0.0)
        got = L.total_loss(z, z, z, z, LossWeights())
        assert got.item() == 0.0

    def test_unit_terms_with_default_weights(self):
        one = Tensor(1.0)
        got = L.total_loss(one, one, one, one, LossWeights())
        assert abs(got.item() - 1.403) <= 1e-12

    def test_nonfinite_term_rejected_by_name(self):
        with pytest.raises(ValueError, match="synthesis"):
            L.total_loss(Tensor(0.0), Tensor(0.0), Tensor(np.nan), Tensor(0.0), LossWeights())

    def test_gradients_flow_through_all_terms(self):
        rng = np.random.default_rng(18)
        d = Tensor(rng.uniform(1, 5, size=(8, 8)), requires_grad=True)
        img = Tensor(rand_image(rng))
        masks = SemanticMaskSet(np.zeros((8, 8), dtype=np.int64))
        smooth = L.masked_smoothness_loss(d, img, masks)
        zero = Tensor(0.0)
        total = L.total_loss(zero, zero, zero, smooth, LossWeights())
        total.backward()
        assert d.grad is not None and np.any(d.grad != 0.0)

    def test_weight_validation(self):
        with pytest.raises(ValueError, match="alpha"):
            LossWeights(alpha=1.5)
        with pytest.raises(ValueError, match="nonnegative"):
            LossWeights(smoothness=-0.1)


class TestDeterminismAndPositivity:
    @given(st.integers(min_value=0, max_value=2**31))
    @settings(deadline=None, max_examples=30)
    def test_losses_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rand_image(rng, h=6, w=6), rand_image(rng, h=6, w=6)
        labels = rng.integers(0, 3, size=(6, 6))
        depth = rng.uniform(0.5, 4.0, size=(6, 6))
        assert L.reflectance_consistency_loss(Tensor(a), Tensor(b)).item() >= 0.0
        assert L.synthesis_loss(Tensor(a), Tensor(b), alpha=0.85).item() >= 0.0
        assert L.masked_smoothness_loss(Tensor(depth), Tensor(a), SemanticMaskSet(labels)).item() >= 0.0
        assert L.reconstruction_loss(Tensor(a), Tensor(b), Tensor(b), Tensor(a), alpha=0.85).item() >= 0.0

    def test_bit_identical_reruns(self):
        rng = np.random.default_rng(19)
        a, b = rand_image(rng), rand_image(rng)
        v1 = L.synthesis_loss(Tensor(a), Tensor(b), alpha=0.85).item()
        v2 = L.synthesis_loss(Tensor(a), Tensor(b), alpha=0.85).item()
        assert v1 == v2
