"""Tests for the annealed genetic threshold search."""

import numpy as np
import pytest

from milsed.errors import ConfigError, DataError
from milsed.threshold_opt import SearchConfig, fitness, optimize, temperature_at


def separated_fixture(rng, n_files=40, n_classes=3, margin=(0.35, 0.65)):
    """Dev set whose positives and negatives are separated by a margin."""
    tags = rng.integers(0, 2, size=(n_files, n_classes))
    low = rng.uniform(0.05, margin[0], size=tags.shape)
    high = rng.uniform(margin[1], 0.95, size=tags.shape)
    scores = np.where(tags > 0, high, low)
    return scores, tags


def grid_search(scores, tags, step=0.001):
    """Exhaustive single-class threshold search, the optimization oracle."""
    best_fit, best_theta = -1.0, None
    for theta in np.arange(step, 1.0, step):
        fit = fitness(np.array([theta]), scores, tags)
        if fit > best_fit:
            best_fit, best_theta = fit, theta
    return best_fit, best_theta


class TestFitness:
    def test_saturated_thresholds_predict_nothing(self):
        rng = np.random.default_rng(0)
        scores, tags = separated_fixture(rng)
        tags[0, :] = 1  # ensure positives exist
        value = fitness(np.full(3, 1.0 - 1e-9), scores, tags)
        assert value == 0.0

    def test_separated_scores_reach_perfect_fitness(self):
        rng = np.random.default_rng(1)
        scores, tags = separated_fixture(rng)
        assert fitness(np.full(3, 0.5), scores, tags) == pytest.approx(100.0)

    def test_hand_counted_single_class(self):
        scores = np.array([[0.9], [0.8], [0.3], [0.6], [0.2], [0.1]])
        tags = np.array([[1], [1], [1], [0], [0], [0]])
        # theta=0.5: tp=2 (0.9, 0.8), fn=1 (0.3), fp=1 (0.6)
        # P=2/3, R=2/3, F=2/3
        value = fitness(np.array([0.5]), scores, tags)
        assert value == pytest.approx(200.0 / 3.0)

    def test_shape_validation(self):
        with pytest.raises(DataError):
            fitness(np.array([0.5]), np.zeros((3, 1)), np.zeros((4, 1)))
        with pytest.raises(ConfigError):
            fitness(np.array([0.5, 0.5]), np.zeros((3, 1)), np.zeros((3, 1)))


class TestOptimize:
    def test_zero_generations_returns_best_initial(self):
        rng = np.random.default_rng(2)
        scores, tags = separated_fixture(rng, n_classes=2)
        config = SearchConfig(generations=0, seed=3)
        result = optimize(scores, tags, config)
        assert len(result.trace) == 1
        assert result.best_fitness == result.trace[0]

    def test_matches_grid_search_on_unimodal_fixture(self):
        rng = np.random.default_rng(4)
        scores, tags = separated_fixture(rng, n_files=60, n_classes=1)
        grid_fit, _ = grid_search(scores, tags)
        result = optimize(scores, tags, SearchConfig(generations=60, seed=5))
        assert result.best_fitness >= grid_fit - 1e-6

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        scores, tags = separated_fixture(rng)
        a = optimize(scores, tags, SearchConfig(seed=7, generations=20))
        b = optimize(scores, tags, SearchConfig(seed=7, generations=20))
        assert a.trace == b.trace
        np.testing.assert_array_equal(a.thresholds, b.thresholds)

    def test_trace_non_decreasing(self):
        rng = np.random.default_rng(8)
        # noisy, non-separable scores: fitness landscape is rough
        scores = rng.uniform(size=(50, 3))
        tags = rng.integers(0, 2, size=(50, 3))
        result = optimize(scores, tags, SearchConfig(seed=9, generations=40))
        assert all(b >= a for a, b in zip(result.trace, result.trace[1:]))

    def test_never_below_half_uniform_baseline(self):
        rng = np.random.default_rng(10)
        for trial in range(5):
            scores = rng.uniform(size=(30, 4))
            tags = rng.integers(0, 2, size=(30, 4))
            baseline = fitness(np.full(4, 0.5), scores, tags)
            result = optimize(scores, tags,
                              SearchConfig(seed=trial, generations=15))
            assert result.best_fitness >= baseline - 1e-12

    def test_thresholds_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(11)
        scores, tags = separated_fixture(rng)
        result = optimize(scores, tags, SearchConfig(seed=12, generations=30))
        assert np.all(result.thresholds > 0.0)
        assert np.all(result.thresholds < 1.0)

    def test_empty_dev_set_rejected(self):
        with pytest.raises(DataError):
            optimize(np.zeros((0, 2)), np.zeros((0, 2)), SearchConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SearchConfig(population_size=1)
        with pytest.raises(ConfigError):
            SearchConfig(cooling_rate=1.5)
        with pytest.raises(ConfigError):
            SearchConfig(elite_count=24, population_size=24)

    def test_mutation_magnitude_anneals_to_zero(self):
        config = SearchConfig()
        temps = [temperature_at(config, g) for g in range(0, 400, 50)]
        assert temps[0] == config.initial_temperature
        assert all(b < a for a, b in zip(temps, temps[1:]))
        assert temperature_at(config, 1000) < 1e-10
