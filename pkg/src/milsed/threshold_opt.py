"""Class-dependent tagging-threshold search.

A small genetic algorithm whose mutation magnitude anneals over the
generations: tournament selection, uniform crossover, Gaussian mutation
with standard deviation equal to the current temperature, elitism, and a
geometric cooling schedule. The 0.5-uniform vector is injected into the
initial population so the search can never end below that baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .evaluation import tagging_f_score

# Thresholds are clamped strictly inside (0, 1).
THRESHOLD_MARGIN = 1e-6
TOURNAMENT_SIZE = 3


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 24
    generations: int = 100
    initial_temperature: float = 0.25
    cooling_rate: float = 0.97
    elite_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if not 0.0 < self.cooling_rate < 1.0:
            raise ConfigError("cooling_rate must be in (0, 1)")
        if not self.initial_temperature > 0.0:
            raise ConfigError("initial_temperature must be > 0")
        if not 0 <= self.elite_count < self.population_size:
            raise ConfigError("elite_count must be < population_size")


@dataclass
class SearchResult:
    thresholds: np.ndarray
    best_fitness: float
    trace: list  # best-so-far fitness after init and after each generation


def fitness(thresholds, dev_scores, dev_tags) -> float:
    """Macro tagging F-score of (score > threshold) decisions, percent."""
    dev_scores = np.asarray(dev_scores, dtype=float)
    dev_tags = np.asarray(dev_tags)
    thresholds = np.asarray(thresholds, dtype=float)
    if dev_scores.ndim != 2 or dev_scores.shape != dev_tags.shape:
        raise DataError(
            f"dev scores {dev_scores.shape} and tags {dev_tags.shape} must be "
            "matching (files, classes) arrays"
        )
    if thresholds.shape != (dev_scores.shape[1],):
        raise ConfigError(
            f"threshold vector length {thresholds.shape} does not match "
            f"{dev_scores.shape[1]} classes"
        )
    predictions = dev_scores > thresholds[None, :]
    return tagging_f_score(dev_tags, predictions).macro_f_score


def _clamp(vector):
    return np.clip(vector, THRESHOLD_MARGIN, 1.0 - THRESHOLD_MARGIN)


def temperature_at(config: SearchConfig, generation: int) -> float:
    """Mutation standard deviation used in the given generation."""
    return config.initial_temperature * config.cooling_rate ** generation


def _better(fit_a, mean_a, fit_b, mean_b) -> bool:
    """Tie-break equal fitness toward the lower mean threshold (recall)."""
    if fit_a != fit_b:
        return fit_a > fit_b
    return mean_a < mean_b


def optimize(dev_scores, dev_tags, config: SearchConfig = SearchConfig()):
    """Search for per-class thresholds maximizing the dev tagging F-score.

    Deterministic given ``config.seed``; the best-so-far fitness trace is
    non-decreasing by construction (elites survive unchanged). With zero
    generations the best member of the random initial population wins.
    """
    dev_scores = np.asarray(dev_scores, dtype=float)
    dev_tags = np.asarray(dev_tags)
    if dev_scores.size == 0:
        raise DataError("development set is empty")
    n_classes = dev_scores.shape[1]
    rng = np.random.default_rng(config.seed)

    population = _clamp(rng.uniform(0.0, 1.0,
                                    size=(config.population_size, n_classes)))
    population[0] = np.full(n_classes, 0.5)  # baseline injection
    fits = np.array([fitness(p, dev_scores, dev_tags) for p in population])
    means = population.mean(axis=1)

    def best_index():
        idx = 0
        for i in range(1, len(population)):
            if _better(fits[i], means[i], fits[idx], means[idx]):
                idx = i
        return idx

    champion_idx = best_index()
    champion = population[champion_idx].copy()
    champion_fit = float(fits[champion_idx])
    trace = [champion_fit]

    for generation in range(config.generations):
        temperature = temperature_at(config, generation)
        order = sorted(range(len(population)),
                       key=lambda i: (-fits[i], means[i]))
        next_population = [population[i].copy() for i in order[:config.elite_count]]
        while len(next_population) < config.population_size:
            parents = []
            for _ in range(2):
                contenders = rng.integers(0, config.population_size,
                                          size=TOURNAMENT_SIZE)
                winner = contenders[0]
                for i in contenders[1:]:
                    if _better(fits[i], means[i], fits[winner], means[winner]):
                        winner = i
                parents.append(population[winner])
            take_first = rng.random(n_classes) < 0.5
            child = np.where(take_first, parents[0], parents[1])
            child = _clamp(child + rng.normal(0.0, temperature, size=n_classes))
            next_population.append(child)
        population = np.stack(next_population)
        fits = np.array([fitness(p, dev_scores, dev_tags) for p in population])
        means = population.mean(axis=1)
        idx = best_index()
        if _better(fits[idx], means[idx], champion_fit, champion.mean()):
            champion = population[idx].copy()
            champion_fit = float(fits[idx])
        trace.append(champion_fit)

    return SearchResult(thresholds=champion, best_fitness=champion_fit,
                        trace=trace)
