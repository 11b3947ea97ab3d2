"""Experiment configuration: one JSON file validated into typed configs.

Unknown keys are rejected at every level so a typo cannot silently fall
back to a default. The model's feature/class counts are not part of the
file; they are derived from the dataset at train time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .evaluation import MatchConfig
from .losses import LossConfig
from .model import EarlyStopping, ModelConfig
from .postprocess import PostprocessConfig
from .threshold_opt import SearchConfig

SCHEMA_VERSION = 1

_MODEL_KEYS = {"dense_widths", "activation", "recurrent_units", "bidirectional",
               "dropout", "recurrent_dropout"}
_LOSS_KEYS = {"variant", "alpha", "epsilon"}
_POST_KEYS = {"smooth_window", "binarize_threshold", "merge_gap_s", "hop_s"}
_MATCH_KEYS = {"onset_collar_s", "offset_collar_s", "offset_pct"}
_SEARCH_KEYS = {"population_size", "generations", "initial_temperature",
                "cooling_rate", "elite_count", "seed"}
_DATA_KEYS = {"train", "dev", "test"}
_STOP_KEYS = {"patience", "min_delta"}
_TOP_KEYS = {"schema_version", "seed", "epochs", "batch_size", "learning_rate",
             "model", "loss", "postprocess", "match", "search", "data",
             "early_stopping"}


def _check_keys(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    """Validated experiment settings with sub-configs for each stage."""

    seed: int = 0
    epochs: int = 10
    batch_size: int = 5
    learning_rate: float = 5e-3
    model: dict = field(default_factory=dict)  # completed at train time
    loss: LossConfig = field(default_factory=LossConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    data: dict = field(default_factory=dict)
    early_stopping: EarlyStopping | None = None

    def model_config(self, n_features: int, n_classes: int) -> ModelConfig:
        section = dict(self.model)
        if "dense_widths" in section:
            section["dense_widths"] = tuple(section["dense_widths"])
        return ModelConfig(n_features=n_features, n_classes=n_classes,
                           **section)


def experiment_config_from_dict(raw: dict) -> ExperimentConfig:
    _check_keys(raw, _TOP_KEYS, "config")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")

    _check_keys(raw.get("model", {}), _MODEL_KEYS, "config.model")
    _check_keys(raw.get("loss", {}), _LOSS_KEYS, "config.loss")
    _check_keys(raw.get("postprocess", {}), _POST_KEYS, "config.postprocess")
    _check_keys(raw.get("match", {}), _MATCH_KEYS, "config.match")
    _check_keys(raw.get("search", {}), _SEARCH_KEYS, "config.search")
    _check_keys(raw.get("data", {}), _DATA_KEYS, "config.data")
    stopping = None
    if raw.get("early_stopping") is not None:
        _check_keys(raw["early_stopping"], _STOP_KEYS, "config.early_stopping")
        stopping = EarlyStopping(**raw["early_stopping"])

    epochs = raw.get("epochs", 10)
    if not isinstance(epochs, int) or epochs < 1:
        raise ConfigError(f"config.epochs must be a positive integer, got {epochs!r}")
    return ExperimentConfig(
        seed=int(raw.get("seed", 0)),
        epochs=epochs,
        batch_size=int(raw.get("batch_size", 5)),
        learning_rate=float(raw.get("learning_rate", 5e-3)),
        model=dict(raw.get("model", {})),
        loss=LossConfig(**raw.get("loss", {})),
        postprocess=PostprocessConfig(**raw.get("postprocess", {})),
        match=MatchConfig(**raw.get("match", {})),
        search=SearchConfig(**raw.get("search", {})),
        data=dict(raw.get("data", {})),
        early_stopping=stopping,
    )


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}")
    return experiment_config_from_dict(raw)


def load_section(path, section: str):
    """Load one sub-config from a file that is either a full experiment
    config or a bare section object (e.g. just postprocess settings)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}")
    if section in raw:
        raw = {section: raw[section], "schema_version": raw.get(
            "schema_version", SCHEMA_VERSION)}
        return getattr(experiment_config_from_dict(raw), section)
    return getattr(experiment_config_from_dict({section: raw}), section)
