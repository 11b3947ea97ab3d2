"""End-to-end experiment runs on the synthetic confound scenario.

Trains a model variant on the scenario's train bags, scores the test
bags, and collects the quantities the study cares about: the Pearson
correlation between the confounded pair's prediction curves, the mean
positive off-diagonal correlation, event-based F-scores under oracle and
degraded tags, and the total predicted overlap duration.

Correlations are measured on the rescaled and smoothed prediction curves
(the same per-class curves the event pipeline thresholds), before tag
masking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import (
    MatchConfig,
    correlation_matrix,
    event_f_score,
    mean_positive_correlation,
    overlap_duration,
)
from .losses import LossConfig
from .model import ModelConfig, forward, train
from .postprocess import PostprocessConfig, pipeline, rescale, smooth
from .synthdata import ConfoundScenario

# Post-processing constants matched to the scenario's frame geometry
# (hop 40 ms): a 9-frame window widens events by 160 ms per side, safely
# inside the 200 ms matching collar; the 450 ms merge gap bridges the
# penalty-induced dips that short events carve into full-length curves,
# and the scenario's 24-frame event spacing keeps distinct events from
# fusing under it.
SCENARIO_POSTPROCESS = PostprocessConfig(
    smooth_window=9, binarize_threshold=0.03, merge_gap_s=0.45, hop_s=0.04)

TAG_FLIP_RATE = 0.1


@dataclass
class VariantMetrics:
    """Everything measured for one (variant, seed) training run."""

    variant: str
    alpha: float
    seed: int
    loss_trace: list
    pair_correlation: float
    mean_positive_corr: float
    macro_f_oracle: float
    per_class_f: dict
    macro_f_degraded: float
    overlap_s: float


def degrade_tags(tags, seed, flip_rate: float = TAG_FLIP_RATE):
    """Flip each tag entry independently with the given rate (seeded)."""
    rng = np.random.default_rng([seed, 0xDE6])
    tags = np.asarray(tags)
    flips = rng.random(tags.shape) < flip_rate
    return np.where(flips, 1 - tags, tags)


def processed_curves(scores, smooth_window: int):
    """Rescaled and smoothed per-class curves of one score matrix."""
    matrix = scores.scores if hasattr(scores, "scores") else np.asarray(scores)
    return np.stack(
        [smooth(rescale(matrix[:, c]), smooth_window)
         for c in range(matrix.shape[1])],
        axis=1,
    )


def run_confound_variant(scenario: ConfoundScenario, *, variant: str,
                         activation: str, alpha: float, seed: int,
                         epochs: int = 10, batch_size: int = 5,
                         learning_rate: float = 5e-3,
                         postprocess_config: PostprocessConfig | None = None,
                         match_config: MatchConfig = MatchConfig()) -> VariantMetrics:
    """Train one variant on the scenario and measure it on the test bags."""
    spec = scenario.spec
    loss_config = LossConfig(variant=variant, alpha=alpha)
    model_config = ModelConfig(
        n_features=spec.n_features,
        n_classes=spec.n_classes,
        dense_widths=(16,),
        activation=activation,
        recurrent_units=16,
        bidirectional=True,
        dropout=0.1,
        recurrent_dropout=0.1,
    )
    result = train(scenario.train_bags, loss_config, model_config,
                   epochs=epochs, seed=seed, batch_size=batch_size,
                   learning_rate=learning_rate)

    post = postprocess_config or SCENARIO_POSTPROCESS
    names = spec.class_names
    score_sets = [forward(result.params, bag.features)
                  for bag in scenario.test_bags]

    curves = [processed_curves(s, post.smooth_window) for s in score_sets]
    corr = correlation_matrix(curves)
    pair = float(corr.matrix[scenario.confounded_short,
                             scenario.confounder_full])
    mean_pos = mean_positive_correlation(corr)

    reference = {bag.bag_id: bag.strong for bag in scenario.test_bags}
    oracle_tags = np.stack([bag.weak for bag in scenario.test_bags])
    degraded = degrade_tags(oracle_tags, seed)

    pred_oracle, pred_degraded = {}, {}
    total_overlap = 0.0
    for i, bag in enumerate(scenario.test_bags):
        events = pipeline(score_sets[i], oracle_tags[i], post, names)
        pred_oracle[bag.bag_id] = events
        total_overlap += overlap_duration(events)
        pred_degraded[bag.bag_id] = pipeline(score_sets[i], degraded[i],
                                             post, names)

    report_oracle = event_f_score(reference, pred_oracle, match_config)
    report_degraded = event_f_score(reference, pred_degraded, match_config)
    per_class = {label: s.f_score
                 for label, s in report_oracle.per_class.items()}
    return VariantMetrics(
        variant=f"{activation}-{variant}",
        alpha=alpha,
        seed=seed,
        loss_trace=result.loss_trace,
        pair_correlation=pair,
        mean_positive_corr=mean_pos,
        macro_f_oracle=report_oracle.macro_f_score,
        per_class_f=per_class,
        macro_f_degraded=report_degraded.macro_f_score,
        overlap_s=total_overlap,
    )


def median_over_seeds(runs, attribute):
    return float(np.median([getattr(r, attribute) for r in runs]))
