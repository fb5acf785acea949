"""Tests for the dynamic soft-label contrastive loss.

The reference oracle here is a fully independent re-implementation with
explicit Python loops and math.exp; the production code must match it to
1e-9 on random batches.
"""

import math

import numpy as np
import pytest

from cxralign.loss import (
    BatchEmbeddings,
    ConfigurationError,
    LossConfig,
    build_soft_labels,
    cross_modal_probs,
    direction_loss,
    gradients_given_labels,
    loss_gradients,
    similarity_matrix,
    soft_labels,
    total_loss,
    total_loss_given_labels,
)
from cxralign.numerics import finite_diff_check, l2_normalize_rows
from oracles import naive_total
from cxralign.report_nlp import LABELS


def unit_rows(rng, n, d):
    return l2_normalize_rows(rng.normal(size=(n, d)))[0]


def random_clinical(rng, n):
    clin = np.zeros((n, len(LABELS)))
    for i in range(n):
        k = int(rng.integers(0, 4))
        if k == 0:
            clin[i, -1] = 1.0
        else:
            clin[i, rng.choice(len(LABELS) - 1, size=k, replace=False)] = 1.0
    return clin


def random_batch(rng, b, d, with_graphs=True):
    emb = BatchEmbeddings(
        images=unit_rows(rng, b, d),
        texts=unit_rows(rng, 2 * b, d),
        graphs=unit_rows(rng, 2 * b, d) if with_graphs else None,
    )
    return emb, random_clinical(rng, 2 * b)


# ---------------------------------------------------------------------------


class TestSimilarityMatrix:
    def test_identical_rows(self):
        rows = np.array([[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(similarity_matrix(rows), np.ones((2, 2)), atol=1e-15)

    def test_orthogonal_rows(self):
        np.testing.assert_allclose(similarity_matrix(np.eye(3)), np.eye(3), atol=1e-15)

    def test_clinical_cosine_value(self):
        a = np.zeros(14)
        a[[0, 4, 10]] = 1.0  # three findings
        b = np.zeros(14)
        b[[0, 4]] = 1.0  # two of them
        rows = np.stack([a / np.linalg.norm(a), b / np.linalg.norm(b)])
        s = similarity_matrix(rows)
        assert s[0, 1] == pytest.approx(2.0 / math.sqrt(6.0), abs=1e-12)
        assert f"{s[0, 1]:.5f}" == "0.81650"

    def test_non_unit_rows_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            similarity_matrix(np.array([[2.0, 0.0]]))


class TestSoftLabels:
    def test_worked_row(self):
        s = np.array([[1.0, 0.95, 0.9, 0.2]])
        # Row of a larger matrix in spirit; normalization acts on this row.
        y = soft_labels(s, 0.9)
        np.testing.assert_allclose(y, [[2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]], atol=1e-12)

    def test_strict_threshold_boundary(self):
        s = np.array([[1.0, 0.9], [0.9, 1.0]])
        y = soft_labels(s, 0.9)
        np.testing.assert_array_equal(y, np.eye(2))

    def test_orthogonal_batch_reduces_to_identity(self):
        y = soft_labels(np.eye(4), 0.9)
        np.testing.assert_array_equal(y, np.eye(4))

    def test_moderate_overlap_suppressed(self):
        cos = 1.0 / math.sqrt(2.0)  # 0.70711 < 0.8
        s = np.array([[1.0, cos], [cos, 1.0]])
        y = soft_labels(s, 0.8)
        np.testing.assert_array_equal(y, np.eye(2))

    def test_rows_stochastic_on_random_input(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            rows = unit_rows(rng, 6, 4)
            y = soft_labels(similarity_matrix(rows), float(rng.uniform(0.0, 0.95)))
            np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(y >= 0.0) and np.all(y <= 1.0)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(1)
        rows = unit_rows(rng, 8, 3)
        s = similarity_matrix(rows)
        nonzeros = []
        for tau in (0.0, 0.3, 0.6, 0.9):
            y = soft_labels(s, tau)
            nonzeros.append(int((y > 0.0).sum()))
        assert nonzeros == sorted(nonzeros, reverse=True)

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            soft_labels(np.eye(2), 1.0)


class TestCrossModalProbs:
    def test_paired_probability_with_hard_negatives(self):
        # B=2, K=4: query aligned with its key, everything else orthogonal.
        queries = np.eye(4)[:2]
        keys = np.eye(4)
        p = cross_modal_probs(queries, keys, 0.1)
        expected = math.exp(10.0) / (math.exp(10.0) + 3.0)
        assert p[0, 0] == pytest.approx(expected, abs=1e-9)
        assert f"{p[0, 0]:.6f}" == "0.999864"

    def test_duplicate_keys_split_probability(self):
        queries = np.array([[1.0, 0.0]])
        keys = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        p = cross_modal_probs(queries, keys, 0.1)
        assert p[0, 0] == pytest.approx(p[0, 1], abs=1e-15)
        assert p[0, 0] <= 0.5

    def test_uniform_similarities_give_uniform_rows(self):
        queries = np.array([[1.0, 0.0]])
        keys = np.array([[0.0, 1.0], [0.0, -1.0], [0.0, 1.0], [0.0, -1.0]])
        # all similarities zero
        keys = np.array([[0.0, 1.0]] * 4) * 0.0
        keys[:, 1] = 0.0
        keys = np.zeros((4, 2))
        p = cross_modal_probs(queries, keys, 0.5)
        np.testing.assert_allclose(p, np.full((1, 4), 0.25), atol=1e-15)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            cross_modal_probs(np.ones((2, 3)), np.ones((2, 4)), 0.1)


class TestDirectionLoss:
    def test_matching_distributions_zero(self):
        p = np.array([[0.25, 0.75], [0.6, 0.4]])
        assert direction_loss(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_identity_labels_uniform_probs(self):
        labels = np.eye(4)
        probs = np.full((4, 4), 0.25)
        assert direction_loss(probs, labels) == pytest.approx(math.log(4.0), abs=1e-12)

    def test_duplicate_pair_soft_vs_one_hot(self):
        # Two identical items: shared soft labels cost nothing, one-hot
        # InfoNCE pays ln 2 per item.
        probs = np.array([[0.5, 0.5], [0.5, 0.5]])
        soft = np.array([[0.5, 0.5], [0.5, 0.5]])
        assert direction_loss(probs, soft) == pytest.approx(0.0, abs=1e-15)
        one_hot_nce = -np.log(np.diag(probs))
        np.testing.assert_allclose(one_hot_nce, math.log(2.0), atol=1e-12)


class TestTotalLoss:
    def test_infonce_reduction_on_orthogonal_batch(self):
        # Orthogonal items: soft labels degenerate to the identity, so the
        # text-stream loss equals symmetric InfoNCE exactly.
        b, d = 3, 8
        images = np.eye(d)[:b]
        texts = np.eye(d)[:b]
        emb = BatchEmbeddings(images=images, texts=texts)
        cfg_soft = LossConfig(modalities=("image", "text"), streams=("t",), w_t=1.0,
                              hard_negatives=False)
        cfg_nce = LossConfig(modalities=("image", "text"), streams=(), hard_negatives=False)
        soft_value, _ = total_loss(emb, None, cfg_soft)
        nce_value, nce_terms = total_loss(emb, None, cfg_nce)
        assert soft_value == pytest.approx(nce_value, abs=1e-12)
        # and the InfoNCE value itself is the analytic cross-entropy
        per_dir = -math.log(math.exp(10.0) / (math.exp(10.0) + (b - 1)))
        assert nce_value == pytest.approx(2.0 * per_dir, abs=1e-12)
        assert len(nce_terms) == 2

    def test_18_terms_with_all_modalities_and_streams(self):
        rng = np.random.default_rng(2)
        emb, clin = random_batch(rng, 3, 8)
        cfg = LossConfig(modalities=("image", "text", "graph"), streams=("t", "c", "g"))
        _, terms = total_loss(emb, clin, cfg)
        assert len(terms) == 18

    def test_4_terms_for_text_clinical_image_text(self):
        rng = np.random.default_rng(3)
        emb, clin = random_batch(rng, 3, 8, with_graphs=False)
        cfg = LossConfig(modalities=("image", "text"), streams=("t", "c"))
        _, terms = total_loss(emb, clin, cfg)
        assert len(terms) == 4

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(30):
            b = int(rng.integers(2, 5))
            d = int(rng.integers(4, 9))
            emb, clin = random_batch(rng, b, d)
            cfg = LossConfig(modalities=("image", "text", "graph"), streams=("t", "c", "g"))
            ours, _ = total_loss(emb, clin, cfg)
            naive = naive_total(emb.images, emb.texts, emb.graphs, clin, cfg)
            assert ours == pytest.approx(naive, abs=1e-9), trial

    def test_matches_naive_oracle_without_hard_negatives(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            b = int(rng.integers(2, 5))
            emb = BatchEmbeddings(
                images=unit_rows(rng, b, 6),
                texts=unit_rows(rng, b, 6),
                graphs=unit_rows(rng, b, 6),
            )
            clin = random_clinical(rng, b)
            cfg = LossConfig(
                modalities=("image", "text", "graph"),
                streams=("t", "c", "g"),
                hard_negatives=False,
            )
            ours, _ = total_loss(emb, clin, cfg)
            naive = naive_total(emb.images, emb.texts, emb.graphs, clin, cfg)
            assert ours == pytest.approx(naive, abs=1e-9)

    def test_graph_stream_without_graphs_is_config_error(self):
        rng = np.random.default_rng(6)
        emb, clin = random_batch(rng, 2, 4, with_graphs=False)
        cfg = LossConfig(modalities=("image", "text"), streams=("t", "g"))
        with pytest.raises(ConfigurationError):
            total_loss(emb, clin, cfg)

    def test_clinical_stream_without_labels_is_config_error(self):
        rng = np.random.default_rng(7)
        emb, _ = random_batch(rng, 2, 4, with_graphs=False)
        cfg = LossConfig(modalities=("image", "text"), streams=("c",))
        with pytest.raises(ConfigurationError):
            total_loss(emb, None, cfg)

    def test_block_size_mismatch_is_config_error(self):
        rng = np.random.default_rng(8)
        emb = BatchEmbeddings(images=unit_rows(rng, 2, 4), texts=unit_rows(rng, 2, 4))
        cfg = LossConfig(modalities=("image", "text"), streams=("t",), hard_negatives=True)
        with pytest.raises(ConfigurationError, match="expected 4"):
            total_loss(emb, None, cfg)


class TestDuplicateHandling:
    def test_duplicate_columns_share_labels_exactly(self):
        rng = np.random.default_rng(9)
        rows = unit_rows(rng, 6, 5)
        rows[3] = rows[1]  # exact duplicate
        y = soft_labels(similarity_matrix(rows), 0.7)
        np.testing.assert_array_equal(y[:, 1], y[:, 3])

    def test_total_loss_invariant_under_duplicate_swap(self):
        rng = np.random.default_rng(10)
        b = 3
        emb, clin = random_batch(rng, b, 6)
        # make text items 0 and 2 exact duplicates across every source
        emb.texts[2] = emb.texts[0]
        emb.graphs[2] = emb.graphs[0]
        clin[2] = clin[0]
        cfg = LossConfig(modalities=("image", "text", "graph"), streams=("t", "c", "g"))
        base, _ = total_loss(emb, clin, cfg)

        swap = [2, 1, 0] + list(range(3, 2 * b))
        emb2 = BatchEmbeddings(
            images=emb.images.copy(), texts=emb.texts[swap], graphs=emb.graphs[swap]
        )
        swapped, _ = total_loss(emb2, clin[swap], cfg)
        assert base == swapped  # bitwise equality


class TestGradients:
    def test_single_row_gradient_identity(self):
        # For one query row, d(loss)/d(similarity) = (p - y) / temperature.
        rng = np.random.default_rng(11)
        d = 6
        queries = unit_rows(rng, 1, d)
        keys = unit_rows(rng, 4, d)
        y = np.array([[0.5, 0.5, 0.0, 0.0]])
        tau = 0.1

        def loss_of_sim(params):
            z = params["sim"].ravel() / tau
            z = z - z.max()
            p = np.exp(z) / np.exp(z).sum()
            mask = y[0] > 0
            return float(np.sum(y[0][mask] * np.log(y[0][mask] / p[mask])))

        sim = (queries @ keys.T).reshape(1, 4)
        z = sim.ravel() / tau
        p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        analytic = ((p - y[0]) / tau).reshape(1, 4)
        report = finite_diff_check(loss_of_sim, {"sim": sim}, {"sim": analytic})
        assert report.max_rel_error < 1e-6

    def test_finite_difference_over_all_embeddings(self):
        rng = np.random.default_rng(12)
        emb, clin = random_batch(rng, 4, 8)
        cfg = LossConfig(modalities=("image", "text", "graph"), streams=("t", "c", "g"))
        labels = build_soft_labels(emb, clin, cfg)
        _, _, grads = gradients_given_labels(emb, labels, cfg)

        def loss_fn(blocks):
            e = BatchEmbeddings(
                images=blocks["images"], texts=blocks["texts"], graphs=blocks["graphs"]
            )
            return total_loss_given_labels(e, labels, cfg)[0]

        report = finite_diff_check(
            loss_fn,
            {"images": emb.images, "texts": emb.texts, "graphs": emb.graphs},
            {"images": grads["images"], "texts": grads["texts"], "graphs": grads["graphs"]},
            epsilon=1e-5,
        )
        assert report.max_rel_error < 1e-4

    def test_stop_gradient_semantics(self):
        # The analytic gradient matches finite differences with labels frozen
        # and deviates from finite differences that rebuild the labels, which
        # shows no gradient flows through label construction.
        rng = np.random.default_rng(13)
        emb, clin = random_batch(rng, 3, 6)
        cfg = LossConfig(modalities=("image", "text"), streams=("t",), w_t=1.0)
        labels = build_soft_labels(emb, clin, cfg)
        _, _, grads = gradients_given_labels(emb, labels, cfg)

        eps = 1e-6
        idx = (0, 0)
        frozen_plus = emb.texts.copy()
        frozen_plus[idx] += eps
        frozen_minus = emb.texts.copy()
        frozen_minus[idx] -= eps

        def frozen(texts):
            e = BatchEmbeddings(images=emb.images, texts=texts)
            return total_loss_given_labels(e, labels, cfg)[0]

        def rebuilt(texts):
            texts = l2_normalize_rows(texts)[0]
            e = BatchEmbeddings(images=emb.images, texts=texts)
            return total_loss(e, clin, cfg)[0]

        fd_frozen = (frozen(frozen_plus) - frozen(frozen_minus)) / (2 * eps)
        fd_rebuilt = (rebuilt(frozen_plus) - rebuilt(frozen_minus)) / (2 * eps)
        assert grads["texts"][idx] == pytest.approx(fd_frozen, rel=1e-4)
        assert abs(fd_rebuilt - fd_frozen) > 1e-6

    def test_descent_direction(self):
        rng = np.random.default_rng(14)
        emb, clin = random_batch(rng, 4, 8)
        cfg = LossConfig(modalities=("image", "text", "graph"), streams=("t", "c", "g"))
        labels = build_soft_labels(emb, clin, cfg)
        base, _, grads = gradients_given_labels(emb, labels, cfg)
        step = 1e-3
        moved = BatchEmbeddings(
            images=emb.images - step * grads["images"],
            texts=emb.texts - step * grads["texts"],
            graphs=emb.graphs - step * grads["graphs"],
        )
        after, _ = total_loss_given_labels(moved, labels, cfg)
        assert after < base

    def test_gradient_vanishes_at_saturation(self):
        # Orthonormal aligned batch with a very low temperature: the softmax
        # saturates onto the identity targets and per-row gradients vanish.
        b, d = 3, 8
        images = np.eye(d)[:b]
        texts = np.eye(d)[:b]
        emb = BatchEmbeddings(images=images, texts=texts)
        cfg = LossConfig(
            modalities=("image", "text"), streams=("t",), w_t=1.0,
            temperature=0.01, hard_negatives=False,
        )
        _, _, grads = gradients_given_labels(emb, build_soft_labels(emb, None, cfg), cfg)
        assert np.linalg.norm(grads["images"], axis=1).max() < 1e-6
        assert np.linalg.norm(grads["texts"], axis=1).max() < 1e-6

    def test_loss_gradients_builds_and_freezes_labels(self):
        rng = np.random.default_rng(15)
        emb, clin = random_batch(rng, 3, 6)
        cfg = LossConfig(modalities=("image", "text", "graph"), streams=("t", "c", "g"))
        total_a, terms_a = total_loss(emb, clin, cfg)
        total_b, terms_b, _ = loss_gradients(emb, clin, cfg)
        assert total_a == total_b
        assert terms_a == terms_b


class TestLossConfigValidation:
    def test_requires_image_and_text(self):
        with pytest.raises(ConfigurationError):
            LossConfig(modalities=("image",))

    def test_threshold_range(self):
        with pytest.raises(ConfigurationError):
            LossConfig(tau_t=1.0)

    def test_negative_weight(self):
        with pytest.raises(ConfigurationError):
            LossConfig(w_c=-0.1)

    def test_unknown_stream(self):
        with pytest.raises(ConfigurationError):
            LossConfig(streams=("x",))

    def test_defaults_match_protocol(self):
        cfg = LossConfig()
        assert cfg.temperature == 0.1
        assert (cfg.tau_t, cfg.tau_c, cfg.tau_g) == (0.9, 0.8, 0.7)
        assert (cfg.w_t, cfg.w_c, cfg.w_g) == (0.167, 0.167, 0.167)
