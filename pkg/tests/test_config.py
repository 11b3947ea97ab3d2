"""Tests for experiment-config parsing and validation."""

import json

import pytest

from milsed.config import (experiment_config_from_dict, load_experiment_config,
                           load_section)
from milsed.errors import ConfigError
from milsed.postprocess import PostprocessConfig


class TestExperimentConfig:
    def test_defaults(self):
        config = experiment_config_from_dict({})
        assert config.epochs == 10
        assert config.loss.variant == "mil_max"
        assert config.postprocess.smooth_window == 19
        assert config.match.onset_collar_s == 0.2
        assert config.search.population_size == 24

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="optimizer"):
            experiment_config_from_dict({"optimizer": "sgd"})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="config.model"):
            experiment_config_from_dict({"model": {"layers": 3}})

    def test_invalid_loss_variant_names_field(self):
        with pytest.raises(ConfigError, match="variant"):
            experiment_config_from_dict({"loss": {"variant": "focal"}})

    def test_schema_version_checked(self):
        with pytest.raises(ConfigError, match="schema_version"):
            experiment_config_from_dict({"schema_version": 99})

    def test_model_config_completed_with_data_dims(self):
        config = experiment_config_from_dict(
            {"model": {"dense_widths": [8], "activation": "glu"}})
        model = config.model_config(n_features=5, n_classes=3)
        assert model.n_features == 5
        assert model.n_classes == 3
        assert model.dense_widths == (8,)

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 3, "epochs": 7}))
        config = load_experiment_config(path)
        assert config.seed == 3 and config.epochs == 7

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(tmp_path / "none.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_experiment_config(path)


class TestLoadSection:
    def test_from_full_config(self, tmp_path):
        path = tmp_path / "full.json"
        path.write_text(json.dumps({"postprocess": {"smooth_window": 9}}))
        post = load_section(path, "postprocess")
        assert isinstance(post, PostprocessConfig)
        assert post.smooth_window == 9

    def test_from_bare_section(self, tmp_path):
        path = tmp_path / "bare.json"
        path.write_text(json.dumps({"smooth_window": 5,
                                    "binarize_threshold": 0.1}))
        post = load_section(path, "postprocess")
        assert post.smooth_window == 5
        assert post.binarize_threshold == 0.1

    def test_bad_section_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"window": 5}))
        with pytest.raises(ConfigError):
            load_section(path, "postprocess")
