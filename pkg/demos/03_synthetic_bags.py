"""Generate the confound scenario and inspect what it contains.

The scenario couples a short-event class ("dishes") to a full-length
class ("frying") in 90% of its bags, mimicking the co-occurrence failure
mode that max-pooled MIL training cannot untangle on its own.
"""

import numpy as np

from milsed import confound_scenario, oracle_frame_accuracy

scenario = confound_scenario(seed=0)
spec = scenario.spec
print(f"classes: {spec.class_names}")
print(f"{len(scenario.train_bags)} train bags, {len(scenario.test_bags)} "
      f"test bags, T={spec.n_frames} frames @ {spec.frame_hop_s*1000:.0f} ms")
print()

manifest = scenario.train_manifest
print("per-class bag counts:", dict(zip(manifest["class_names"],
                                        manifest["class_counts"])))
realized = np.asarray(manifest["realized_cooccurrence"])
print(f"realized P(frying | dishes) = {realized[0, 1]:.3f}   (requested 0.9)")
print(f"realized P(speech | dishes) = {realized[0, 2]:.3f}   (requested 0.5)")
print()

bag = next(b for b in scenario.train_bags if b.weak[0] and b.weak[1])
print(f"a dishes+frying bag ({bag.bag_id}): weak = {bag.weak}")
for event in bag.strong:
    print(f"  {event.label:8s} {event.onset:5.2f} .. {event.offset:5.2f} s")
print()

# the per-frame matched-filter oracle confirms the data is learnable
easy = confound_scenario(seed=1, n_train=50, n_test=1, noise_sigma=0.2)
accuracy = oracle_frame_accuracy(easy.train_bags, easy.spec)
print(f"matched-filter oracle frame accuracy at sigma=0.2: {accuracy:.1%}")
