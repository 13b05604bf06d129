import math

import numpy as np
import pytest

from qbba_lab.defenses import DefenseConfig
from qbba_lab.model import (CLASS_TOKEN, ModelConfig, PatchSequence, TOY_CONFIG,
                            attention_head, embed_patches, init_weights,
                            model_forward, patchify, unpatchify)
from qbba_lab.rng import RngStream


@pytest.fixture(scope="module")
def small_weights():
    cfg = ModelConfig(image_size=8, channels=1, patch_size=4, embed_dim=8,
                      num_heads=2, num_blocks=1, mlp_hidden=12, num_classes=3)
    return init_weights(cfg, RngStream(10).fork("w"))


class TestModelConfig:
    def test_divisibility_checks(self):
        with pytest.raises(ValueError):
            ModelConfig(image_size=10, patch_size=4)
        with pytest.raises(ValueError):
            ModelConfig(embed_dim=30, num_heads=4)

    def test_positivity(self):
        with pytest.raises(ValueError):
            ModelConfig(num_classes=0)

    def test_derived(self):
        cfg = TOY_CONFIG
        assert cfg.n_patches == 16
        assert cfg.head_dim == 16
        assert cfg.patch_dim == 16


class TestPatchify:
    def test_patch_counts(self):
        cfg4 = ModelConfig(image_size=4, channels=1, patch_size=2, embed_dim=4,
                           num_heads=1, num_blocks=1, mlp_hidden=4, num_classes=2)
        assert patchify(np.zeros((4, 4, 1)), cfg4).shape == (4, 4)
        assert patchify(np.zeros((16, 16, 1)), TOY_CONFIG).shape == (16, 16)

    def test_partition_roundtrip(self):
        img = RngStream(1).uniform((16, 16, 1))
        np.testing.assert_array_equal(unpatchify(patchify(img, TOY_CONFIG), TOY_CONFIG), img)

    def test_row_major_order(self):
        img = np.zeros((16, 16, 1))
        img[0:4, 4:8, 0] = 1.0  # second patch of the first row
        patches = patchify(img, TOY_CONFIG)
        assert np.all(patches[1] == 1.0)
        assert np.all(patches[0] == 0.0)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError):
            patchify(np.zeros((15, 16, 1)), TOY_CONFIG)


class TestEmbedPatches:
    def test_identity_perm_default(self, small_weights):
        patches = RngStream(2).uniform((4, 16))
        seq = embed_patches(patches, small_weights)
        seq2 = embed_patches(patches, small_weights, perm=np.arange(4))
        np.testing.assert_array_equal(seq.tokens, seq2.tokens)
        assert seq.origins[0] == CLASS_TOKEN
        assert list(seq.origins[1:]) == [0, 1, 2, 3]

    def test_zeroed_positional_table_ignores_perm(self, small_weights):
        w = small_weights.copy()
        w.pos[:] = 0.0
        patches = RngStream(3).uniform((4, 16))
        a = embed_patches(patches, w, perm=np.array([2, 0, 3, 1]))
        b = embed_patches(patches, w)
        np.testing.assert_array_equal(a.tokens, b.tokens)

    def test_swap_perm_carries_other_positional(self, small_weights):
        patches = np.zeros((4, 16))
        perm = np.array([0, 2, 1, 3])
        seq = embed_patches(patches, small_weights, perm=perm)
        base = small_weights.patch_b
        np.testing.assert_allclose(seq.tokens[2], base + small_weights.pos[3])
        np.testing.assert_allclose(seq.tokens[3], base + small_weights.pos[2])

    def test_invalid_perm_rejected(self, small_weights):
        patches = np.zeros((4, 16))
        with pytest.raises(ValueError, match="permutation"):
            embed_patches(patches, small_weights, perm=np.array([0, 0, 1, 2]))


class TestPatchSequence:
    def test_exactly_one_class_token(self):
        with pytest.raises(ValueError):
            PatchSequence(tokens=np.zeros((2, 4)), origins=np.array([0, 1]))

    def test_distinct_origins(self):
        with pytest.raises(ValueError):
            PatchSequence(tokens=np.zeros((3, 4)),
                          origins=np.array([CLASS_TOKEN, 1, 1]))


class TestAttentionHead:
    def test_single_token_identity(self):
        rng = RngStream(4)
        tokens = rng.gaussian((1, 6))
        wq, wk, wv = (rng.gaussian((3, 6)) for _ in range(3))
        out, attn = attention_head(tokens, wq, wk, wv)
        np.testing.assert_array_equal(attn, [[1.0]])
        np.testing.assert_allclose(out[0], wv @ tokens[0], rtol=1e-12)

    def test_full_index_set_matches_undefended_bitwise(self):
        rng = RngStream(5)
        tokens = rng.gaussian((5, 8))
        wq, wk, wv = (rng.gaussian((4, 8)) for _ in range(3))
        plain_out, plain_attn = attention_head(tokens, wq, wk, wv)
        full_out, full_attn = attention_head(tokens, wq, wk, wv, dims=np.arange(4))
        np.testing.assert_array_equal(plain_out, full_out)
        np.testing.assert_array_equal(plain_attn, full_attn)

    def test_two_token_brute_force(self):
        # direct evaluation of the single-head attention equations
        tokens = np.array([[1.0, -0.5], [0.25, 2.0]])
        wq = np.array([[0.3, -0.2], [0.5, 0.1]])
        wk = np.array([[-0.4, 0.6], [0.2, 0.2]])
        wv = np.array([[1.0, 0.0], [0.0, -1.0]])
        out, attn = attention_head(tokens, wq, wk, wv)

        q = np.array([wq @ t for t in tokens])
        k = np.array([wk @ t for t in tokens])
        v = np.array([wv @ t for t in tokens])
        expect_attn = np.empty((2, 2))
        for i in range(2):
            scores = [np.dot(q[i], k[j]) / math.sqrt(2) for j in range(2)]
            m = max(scores)
            exps = [math.exp(s - m) for s in scores]
            total = sum(exps)
            for j in range(2):
                expect_attn[i, j] = exps[j] / total
        expect_out = expect_attn @ v
        np.testing.assert_allclose(attn, expect_attn, rtol=1e-12)
        np.testing.assert_allclose(out, expect_out, rtol=1e-12)

    def test_rescale_mode_uses_kept_count(self):
        rng = RngStream(6)
        tokens = rng.gaussian((3, 8))
        wq, wk, wv = (rng.gaussian((4, 8)) for _ in range(3))
        dims = np.array([0, 2])
        lit_out, _ = attention_head(tokens, wq, wk, wv, dims=dims, scale_mode="literal")
        res_out, _ = attention_head(tokens, wq, wk, wv, dims=dims, scale_mode="rescale")
        assert not np.array_equal(lit_out, res_out)

    def test_empty_dims_degenerate(self):
        tokens = np.zeros((2, 4))
        w = np.zeros((2, 4))
        with pytest.raises(ValueError, match="degenerate attention"):
            attention_head(tokens, w, w, w, dims=np.array([], dtype=np.int64))


class TestModelForward:
    def test_deterministic_without_defense(self, small_weights):
        img = RngStream(7).uniform((8, 8, 1))
        l1, p1 = model_forward(img, small_weights)
        l2, p2 = model_forward(img, small_weights)
        np.testing.assert_array_equal(l1, l2)
        np.testing.assert_array_equal(p1, p2)

    def test_probs_sum_to_one(self, small_weights):
        rng = RngStream(8)
        for _ in range(20):
            _, probs = model_forward(rng.uniform((8, 8, 1)), small_weights)
            assert abs(probs.sum() - 1.0) <= 1e-9
            assert np.all(probs >= 0)

    def test_zero_strength_prdrop_bit_identical(self, small_weights):
        img = RngStream(9).uniform((8, 8, 1))
        base, _ = model_forward(img, small_weights)
        defended, _ = model_forward(img, small_weights,
                                    DefenseConfig("prdrop", 0.0), RngStream(1))
        np.testing.assert_array_equal(base, defended)

    def test_permutation_invariance_with_zero_positional(self, small_weights):
        w = small_weights.copy()
        w.pos[:] = 0.0
        cfg = w.config
        rng = RngStream(11)
        img = rng.uniform((8, 8, 1))
        base, _ = model_forward(img, w)
        for trial in range(20):
            perm = rng.permutation(cfg.n_patches)
            patches = patchify(img, cfg)
            shuffled = unpatchify(patches[perm], cfg)
            logits, _ = model_forward(shuffled, w)
            assert np.max(np.abs(logits - base)) <= 1e-6

    def test_defended_forward_needs_rng(self, small_weights):
        with pytest.raises(ValueError):
            model_forward(np.zeros((8, 8, 1)), small_weights,
                          DefenseConfig("snd", 0.1), rng=None)
