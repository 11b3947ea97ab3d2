"""Class-dependent tagging thresholds: annealed GA versus grid search.

The search mutates a population of threshold vectors with a Gaussian
whose standard deviation cools geometrically; elites and an injected
0.5-uniform baseline make the best-so-far fitness monotone.
"""

import time

import numpy as np

from milsed import SearchConfig, fitness, optimize

rng = np.random.default_rng(3)
n_files, n_classes = 80, 4
tags = rng.integers(0, 2, size=(n_files, n_classes))
# positives concentrate high, negatives low, but with class-specific shifts
offsets = np.array([0.0, 0.15, -0.1, 0.05])
low = np.clip(rng.uniform(0.05, 0.45, size=tags.shape) + offsets, 0.01, 0.95)
high = np.clip(rng.uniform(0.55, 0.95, size=tags.shape) + offsets, 0.05, 0.99)
scores = np.where(tags > 0, high, low)

baseline = fitness(np.full(n_classes, 0.5), scores, tags)
print(f"0.5-uniform baseline fitness: {baseline:.2f}%")

started = time.time()
result = optimize(scores, tags, SearchConfig(generations=60, seed=0))
ga_time = time.time() - started
print(f"GA best fitness: {result.best_fitness:.2f}% in {ga_time*1000:.0f} ms "
      f"-> thresholds {np.round(result.thresholds, 3)}")
print("best-so-far trace (every 10 generations):",
      [round(v, 2) for v in result.trace[::10]])

# exhaustive per-class grid at the same resolution the GA is judged against
started = time.time()
grid = np.arange(0.001, 1.0, 0.001)
best = np.zeros(n_classes)
for c in range(n_classes):
    column_scores = scores[:, c:c + 1]
    column_tags = tags[:, c:c + 1]
    fits = [fitness(np.array([t]), column_scores, column_tags) for t in grid]
    best[c] = grid[int(np.argmax(fits))]
grid_time = time.time() - started
print(f"grid search (0.001 steps, per class): fitness "
      f"{fitness(best, scores, tags):.2f}% in {grid_time*1000:.0f} ms")
