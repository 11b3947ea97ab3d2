"""Verify the hand-written backpropagation against finite differences.

Builds a small GLU model, then checks the full model+loss gradient for
every loss variant. MIL losses are only subdifferentiable where a class's
argmax frame ties; the checker flags parameters whose perturbation flips
an argmax instead of failing them.
"""

import numpy as np

from milsed import FrameFeatures, LossConfig, ModelConfig, grad_check, init_params

config = ModelConfig(n_features=5, n_classes=3, dense_widths=(6,),
                     activation="glu", recurrent_units=4, bidirectional=True)
params = init_params(config, seed=42)
print(f"model: {config.activation} dense {config.dense_widths}, "
      f"{config.recurrent_units} recurrent units, {params.n_params} parameters")

rng = np.random.default_rng(7)
bag = FrameFeatures(rng.normal(size=(12, 5)), frame_hop_s=0.04)
y = np.array([1.0, 0.0, 1.0])

for variant, alpha in [("fsl", 0.0), ("mil_max", 0.0), ("mil_mmm", 0.0),
                       ("mil_max_cos", 0.1)]:
    report = grad_check(params, bag, y, LossConfig(variant=variant, alpha=alpha))
    status = "pass" if report.passed else "FAIL"
    print(f"{variant:12s} alpha={alpha}: max rel err = "
          f"{report.max_rel_error:.3e}  "
          f"({report.n_unstable} argmax-unstable skipped)  -> {status}")

print()
print("per-layer worst relative errors for mil_max_cos:")
report = grad_check(params, bag, y, LossConfig(variant="mil_max_cos", alpha=0.1))
for name, err in report.per_array_max().items():
    print(f"  {name:14s} {err:.3e}")
