"""Tests for the training objectives and their score-space gradients."""

import math

import numpy as np
import pytest

from milsed.errors import ConfigError
from milsed.losses import (
    LOG_EPS,
    LossConfig,
    bin_ce,
    cos_penalty,
    cosine_sim,
    evaluate_loss,
    fsl_loss,
    mil_max_cos_loss,
    mil_max_loss,
    mmm_loss,
)

LN2 = math.log(2.0)


def fd_score_grad(loss_fn, scores, h=1e-6):
    """Central finite differences of a scalar loss over the score matrix."""
    grad = np.zeros_like(scores)
    for idx in np.ndindex(*scores.shape):
        up = scores.copy()
        down = scores.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (loss_fn(up) - loss_fn(down)) / (2.0 * h)
    return grad


def random_scores(rng, n_frames, n_classes, margin=0.05):
    """Random score matrix whose per-class maxima are unique by ``margin``.

    Keeps finite differencing away from argmax ties and from the log clamp.
    """
    scores = rng.uniform(0.1, 0.8, size=(n_frames, n_classes))
    t_star = scores.argmax(axis=0)
    scores[t_star, np.arange(n_classes)] += margin
    return scores


class TestBinCe:
    def test_perfect_prediction_clamped(self):
        value, grad = bin_ce(1.0, 1.0)
        assert 0.0 <= value <= -math.log1p(-LOG_EPS) + 1e-12
        assert grad == 0.0  # outside the clamp, derivative vanishes

    def test_half_probability_positive(self):
        value, _ = bin_ce(1.0, 0.5)
        assert value == pytest.approx(LN2, abs=1e-12)

    def test_half_probability_negative_gradient(self):
        value, grad = bin_ce(0.0, 0.5)
        assert value == pytest.approx(LN2, abs=1e-12)
        assert grad == pytest.approx(2.0, abs=1e-12)

    def test_elementwise_matches_scalar(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.01, 0.99, size=(3, 4))
        y = rng.integers(0, 2, size=(3, 4)).astype(float)
        values, grads = bin_ce(y, p)
        for idx in np.ndindex(3, 4):
            v, g = bin_ce(y[idx], p[idx])
            assert values[idx] == pytest.approx(v)
            assert grads[idx] == pytest.approx(g)


class TestFslLoss:
    def test_all_negative_near_zero(self):
        scores = np.full((5, 3), LOG_EPS)
        value, _ = fsl_loss(scores, np.zeros(3))
        assert value == pytest.approx(0.0, abs=1e-6)

    def test_constant_half_column(self):
        scores = np.full((7, 1), 0.5)
        value, _ = fsl_loss(scores, np.ones(1))
        assert value == pytest.approx(LN2, abs=1e-12)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(0.05, 0.95, size=(4, 2))
        y = np.array([1.0, 0.0])
        expected = 0.0
        for t in range(4):
            for c in range(2):
                v, _ = bin_ce(y[c], scores[t, c])
                expected += v
        expected /= 8.0
        value, _ = fsl_loss(scores, y)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(0.1, 0.9, size=(5, 3))
        y = np.array([1.0, 0.0, 1.0])
        _, grad = fsl_loss(scores, y)
        fd = fd_score_grad(lambda s: fsl_loss(s, y)[0], scores)
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-9)


class TestMilMaxLoss:
    def test_perfect_bag(self):
        scores = np.full((4, 2), LOG_EPS)
        scores[2, 0] = 1.0 - LOG_EPS
        value, _ = mil_max_loss(scores, np.array([1.0, 0.0]))
        assert value == pytest.approx(0.0, abs=1e-6)

    def test_constant_half(self):
        scores = np.full((6, 1), 0.5)
        value, _ = mil_max_loss(scores, np.ones(1))
        assert value == pytest.approx(LN2, abs=1e-12)

    def test_matches_brute_force_column_maxima(self):
        rng = np.random.default_rng(3)
        scores = rng.uniform(0.05, 0.95, size=(5, 3))
        y = np.array([1.0, 0.0, 1.0])
        expected = sum(
            bin_ce(y[c], max(scores[t, c] for t in range(5)))[0] for c in range(3)
        )
        value, _ = mil_max_loss(scores, y)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_gradient_only_on_argmax_frames(self):
        rng = np.random.default_rng(4)
        scores = random_scores(rng, 6, 3)
        y = np.array([1.0, 1.0, 0.0])
        _, grad = mil_max_loss(scores, y)
        t_star = scores.argmax(axis=0)
        nonzero = np.nonzero(grad)
        assert set(zip(*nonzero)) == {(t_star[c], c) for c in range(3)}

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        scores = random_scores(rng, 5, 3)
        y = np.array([1.0, 0.0, 1.0])
        _, grad = mil_max_loss(scores, y)
        fd = fd_score_grad(lambda s: mil_max_loss(s, y)[0], scores)
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-9)

    def test_tie_breaks_toward_earliest_frame(self):
        scores = np.array([[0.4], [0.7], [0.7], [0.2]])
        _, grad = mil_max_loss(scores, np.ones(1))
        assert grad[1, 0] != 0.0
        assert grad[2, 0] == 0.0


class TestMmmLoss:
    def test_satisfied_positive_class_reaches_floor(self):
        # max ~ 1, min ~ 0, mean = 0.5: only the mean term's ln 2 floor remains.
        scores = np.array([[1.0 - LOG_EPS], [LOG_EPS], [0.5], [0.5]])
        value, _ = mmm_loss(scores, np.ones(1))
        assert value == pytest.approx(LN2, abs=1e-6)

    def test_negative_class_near_zero(self):
        scores = np.full((4, 1), LOG_EPS)
        value, _ = mmm_loss(scores, np.zeros(1))
        assert value == pytest.approx(0.0, abs=1e-6)

    def test_matches_term_by_term_oracle(self):
        rng = np.random.default_rng(6)
        scores = rng.uniform(0.05, 0.95, size=(6, 3))
        y = np.array([1.0, 0.0, 1.0])
        expected = 0.0
        for c in range(3):
            col = scores[:, c]
            expected += bin_ce(y[c], col.max())[0]
            if y[c] > 0:
                expected += bin_ce(0.0, col.min())[0]
                expected += bin_ce(0.5, col.mean())[0]
        value, _ = mmm_loss(scores, y)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        # unique maxima and minima, margins well above the FD step
        scores = random_scores(rng, 6, 2)
        t_min = scores.argmin(axis=0)
        scores[t_min, np.arange(2)] -= 0.05
        y = np.array([1.0, 1.0])
        _, grad = mmm_loss(scores, y)
        fd = fd_score_grad(lambda s: mmm_loss(s, y)[0], scores)
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-9)

    def test_composition_regression_locked(self):
        # the exact max/mean/min composition is fixed; this value is frozen
        scores = np.array([[0.62, 0.31], [0.17, 0.88], [0.45, 0.52],
                           [0.93, 0.07]])
        y = np.array([1.0, 0.0])
        value, _ = mmm_loss(scores, y)
        assert value == pytest.approx(3.0759366011434617, abs=1e-12)


class TestCosineSim:
    def test_identical_vectors(self):
        a = np.array([0.2, 0.5, 0.9])
        assert cosine_sim(a, a) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)

    def test_positive_scaling_invariance(self):
        assert cosine_sim([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(1.0)
        rng = np.random.default_rng(8)
        a = rng.uniform(0.1, 1.0, size=10)
        b = rng.uniform(0.1, 1.0, size=10)
        for lam in (0.5, 3.0, 100.0):
            assert cosine_sim(lam * a, b) == pytest.approx(cosine_sim(a, b))

    def test_zero_norm_defined_as_zero(self):
        assert cosine_sim(np.zeros(5), np.ones(5)) == 0.0


class TestCosPenalty:
    def test_single_positive_class(self):
        rng = np.random.default_rng(9)
        scores = rng.uniform(0.1, 0.9, size=(6, 3))
        value, grad = cos_penalty(scores, np.array([0.0, 1.0, 0.0]), 0.5)
        assert value == 0.0
        assert not grad.any()

    def test_identical_columns_counted_as_ordered_pairs(self):
        col = np.array([0.1, 0.7, 0.3, 0.9])
        scores = np.stack([col, col], axis=1)
        value, _ = cos_penalty(scores, np.ones(2), alpha=0.1)
        assert value == pytest.approx(0.2, abs=1e-12)  # 0.1 * 2 ordered pairs * cos 1

    def test_negative_similarity_clamped(self):
        # raw vectors with a negative dot product exercise the max(0, .) clamp
        scores = np.stack([[1.0, -1.0, 0.5], [-1.0, 1.0, -0.5]], axis=1)
        value, grad = cos_penalty(scores, np.ones(2), alpha=1.0)
        assert value == 0.0
        assert not grad.any()

    def test_clamp_invariant_to_deeper_anticorrelation(self):
        a = np.array([1.0, 0.0, 0.2])
        b = np.array([-0.5, 0.1, -0.4])
        assert np.dot(a, b) < 0
        v1, _ = cos_penalty(np.stack([a, b], axis=1), np.ones(2), alpha=0.7)
        v2, _ = cos_penalty(np.stack([a, 3.0 * b], axis=1), np.ones(2), alpha=0.7)
        assert v1 == v2 == 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        scores = rng.uniform(0.1, 0.9, size=(6, 3))
        y = np.ones(3)
        _, grad = cos_penalty(scores, y, alpha=0.3)
        fd = fd_score_grad(lambda s: cos_penalty(s, y, alpha=0.3)[0], scores)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)


class TestMilMaxCosLoss:
    def test_alpha_zero_reduces_to_mil_max(self):
        rng = np.random.default_rng(11)
        config = LossConfig(variant="mil_max_cos", alpha=0.0)
        for _ in range(50):
            scores = rng.uniform(0.0, 1.0, size=(7, 4))
            y = rng.integers(0, 2, size=4).astype(float)
            v_cos, g_cos = mil_max_cos_loss(scores, y, config)
            v_max, g_max = mil_max_loss(scores, y, config.epsilon)
            assert v_cos == v_max  # bit-for-bit
            assert np.array_equal(g_cos, g_max)

    def test_all_negative_bag(self):
        rng = np.random.default_rng(12)
        scores = rng.uniform(0.1, 0.9, size=(5, 3))
        y = np.zeros(3)
        config = LossConfig(variant="mil_max_cos", alpha=0.5)
        value, _ = mil_max_cos_loss(scores, y, config)
        expected = sum(bin_ce(0.0, scores[:, c].max())[0] for c in range(3))
        assert value == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        scores = random_scores(rng, 6, 3)
        y = np.array([1.0, 1.0, 1.0])
        config = LossConfig(variant="mil_max_cos", alpha=0.1)
        _, grad = mil_max_cos_loss(scores, y, config)
        fd = fd_score_grad(lambda s: mil_max_cos_loss(s, y, config)[0], scores)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)

    def test_gradient_additivity(self):
        rng = np.random.default_rng(14)
        scores = random_scores(rng, 8, 4)
        y = np.array([1.0, 1.0, 0.0, 1.0])
        config = LossConfig(variant="mil_max_cos", alpha=0.25)
        _, grad_total = mil_max_cos_loss(scores, y, config)
        _, grad_max = mil_max_loss(scores, y, config.epsilon)
        _, grad_pen = cos_penalty(scores, y, config.alpha)
        np.testing.assert_allclose(grad_total, grad_max + grad_pen, rtol=1e-12)


class TestLossProperties:
    @pytest.mark.parametrize("variant", ["fsl", "mil_max", "mil_mmm", "mil_max_cos"])
    def test_non_negativity(self, variant):
        rng = np.random.default_rng(15)
        config = LossConfig(variant=variant, alpha=0.1)
        for _ in range(100):
            scores = rng.uniform(0.0, 1.0, size=(6, 3))
            y = rng.integers(0, 2, size=3).astype(float)
            value, _ = evaluate_loss(config, scores, y)
            assert value >= 0.0

    def test_penalty_nullity_for_single_positive(self):
        rng = np.random.default_rng(16)
        for alpha in (0.0, 0.1, 2.0):
            for n_pos in (0, 1):
                y = np.zeros(4)
                y[:n_pos] = 1.0
                scores = rng.uniform(0.0, 1.0, size=(5, 4))
                value, _ = cos_penalty(scores, y, alpha)
                assert value == 0.0

    @pytest.mark.parametrize("variant", ["fsl", "mil_max", "mil_mmm", "mil_max_cos"])
    def test_class_permutation_symmetry(self, variant):
        rng = np.random.default_rng(17)
        config = LossConfig(variant=variant, alpha=0.1)
        scores = rng.uniform(0.05, 0.95, size=(6, 4))
        y = np.array([1.0, 0.0, 1.0, 1.0])
        perm = np.array([2, 0, 3, 1])
        value, grad = evaluate_loss(config, scores, y)
        value_p, grad_p = evaluate_loss(config, scores[:, perm], y[perm])
        assert value_p == pytest.approx(value, rel=1e-12)
        np.testing.assert_allclose(grad_p, grad[:, perm], rtol=1e-12)

    def test_invalid_variant_rejected(self):
        with pytest.raises(ConfigError):
            LossConfig(variant="focal")

    def test_negative_alpha_rejected(self):
        with pytest.raises(ConfigError):
            LossConfig(variant="mil_max_cos", alpha=-0.1)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            mil_max_loss(np.zeros((4, 3)), np.zeros(2))
