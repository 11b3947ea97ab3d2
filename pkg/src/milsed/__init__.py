"""Weakly-supervised sound event detection toolkit.

Multiple-instance-learning training objectives (including a cosine
similarity penalty between co-positive class curves), a small
frame-scoring network with exact analytic gradients, the score-to-events
inference chain, event-based evaluation with collars, a threshold search,
and a synthetic bag generator with controllable class co-occurrence.
"""

from .errors import ConfigError, DataError, MilsedError, NumericError
from .evaluation import (
    CorrelationResult,
    EvalReport,
    MatchConfig,
    TaggingReport,
    correlation_matrix,
    event_f_score,
    match_events,
    mean_positive_correlation,
    overlap_duration,
    tagging_f_score,
)
from .events import Event, read_events_tsv, sort_events, write_events_tsv
from .losses import (
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
from .model import (
    EarlyStopping,
    FrameFeatures,
    GradCheckReport,
    ModelConfig,
    ModelParams,
    ScoreMatrix,
    TrainResult,
    adam_step,
    backward,
    forward,
    glu_activation,
    grad_check,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .postprocess import (
    PostprocessConfig,
    binarize_and_segment,
    mask_by_tags,
    merge_gaps,
    pipeline,
    rescale,
    smooth,
)
from .synthdata import (
    ClassSpec,
    ConfoundScenario,
    DatasetSpec,
    SynthBag,
    confound_scenario,
    export_dataset,
    generate,
    import_dataset,
    manifest,
    oracle_frame_accuracy,
    realized_cooccurrence,
)
from .threshold_opt import SearchConfig, SearchResult, fitness, optimize

__version__ = "0.1.0"
