"""Walk through the training objectives on a tiny hand-made bag.

Shows how the max-pooled MIL loss supervises only the best frame per
class, and how the cosine penalty reacts to correlated versus
decorrelated positive-class curves.
"""

import numpy as np

from milsed import LossConfig, cos_penalty, cosine_sim, evaluate_loss

rng = np.random.default_rng(0)

# a 10-frame bag with 3 classes; classes 0 and 1 are tagged positive
scores = np.full((10, 3), 0.05)
scores[2:5, 0] = 0.9        # class 0 fires on frames 2..4
scores[2:5, 1] = 0.85       # class 1 fires on the same frames (correlated!)
scores[:, 2] = 0.02
y = np.array([1.0, 1.0, 0.0])

print("score matrix (T=10, C=3):")
print(np.round(scores, 2))
print(f"weak labels: {y}")
print()

for variant in ("fsl", "mil_max", "mil_mmm", "mil_max_cos"):
    config = LossConfig(variant=variant, alpha=0.1)
    value, grad = evaluate_loss(config, scores, y)
    touched = int(np.count_nonzero(grad.any(axis=1)))
    print(f"{variant:12s} loss = {value:7.4f}   gradient touches "
          f"{touched:2d}/10 frames")
print()

print("cosine similarity between the two positive columns:",
      f"{cosine_sim(scores[:, 0], scores[:, 1]):.4f}")
penalty, _ = cos_penalty(scores, y, alpha=0.1)
print(f"penalty on the correlated pair (alpha=0.1): {penalty:.4f}")

# shift class 1 to different frames: the curves decorrelate
decorrelated = scores.copy()
decorrelated[2:5, 1] = 0.05
decorrelated[6:9, 1] = 0.85
penalty_after, _ = cos_penalty(decorrelated, y, alpha=0.1)
print(f"penalty after moving class 1 to frames 6..8:  {penalty_after:.4f}")
print(f"cosine there: {cosine_sim(decorrelated[:, 0], decorrelated[:, 1]):.4f}")
