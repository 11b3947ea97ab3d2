"""Train a small model and run the full score-to-events chain.

Uses a reduced slice of the confound scenario so the demo finishes in a
few seconds: train, score the test bags, mask by (oracle) tags, rescale,
smooth, binarize, merge, and finally score events against the hidden
strong labels.
"""

import numpy as np

from milsed import (LossConfig, MatchConfig, ModelConfig, PostprocessConfig,
                    confound_scenario, event_f_score, forward, pipeline, train)

scenario = confound_scenario(seed=0, n_train=300, n_test=40)
spec = scenario.spec

model_config = ModelConfig(n_features=spec.n_features,
                           n_classes=spec.n_classes,
                           dense_widths=(16,), activation="glu",
                           recurrent_units=16, bidirectional=True,
                           dropout=0.1, recurrent_dropout=0.1)
loss_config = LossConfig(variant="mil_max_cos", alpha=0.1)
print("training (mil_max_cos, alpha=0.1, 12 epochs)...")
result = train(scenario.train_bags, loss_config, model_config,
               epochs=12, seed=1, batch_size=5, learning_rate=5e-3)
print("per-epoch loss:", [round(v, 3) for v in result.loss_trace])
print()

post = PostprocessConfig(smooth_window=9, binarize_threshold=0.03,
                         merge_gap_s=0.45, hop_s=spec.frame_hop_s)
reference, predictions = {}, {}
for bag in scenario.test_bags:
    scores = forward(result.params, bag.features)
    reference[bag.bag_id] = bag.strong
    predictions[bag.bag_id] = pipeline(scores, bag.weak, post,
                                       spec.class_names)

bag = scenario.test_bags[0]
print(f"bag {bag.bag_id}: truth vs prediction")
for event in reference[bag.bag_id]:
    print(f"  truth {event.label:8s} {event.onset:5.2f} .. {event.offset:5.2f}")
for event in predictions[bag.bag_id]:
    print(f"  pred  {event.label:8s} {event.onset:5.2f} .. {event.offset:5.2f}")
print()

report = event_f_score(reference, predictions, MatchConfig())
print(report.format_table())
