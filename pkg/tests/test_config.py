"""Config parsing and assembly into validated run settings."""

import pytest

from trivit.config import (
    SCHEMA,
    ConfigError,
    TrainSettings,
    build_run_config,
    default_config,
    load_config,
    parse_config_text,
)
from trivit.synth import SynthError


class TestParse:
    def test_empty_text_gives_defaults(self):
        values = parse_config_text("")
        assert values["task"] == "ef"
        assert values["train.steps"] == 2000
        assert values["model.dim"] == 32
        assert values["proto.enabled"] is False
        assert set(values) == set(SCHEMA)

    def test_comments_blank_lines_whitespace(self):
        text = """
        # a comment
        task = as

        train.lr   =   0.01
        """
        values = parse_config_text(text)
        assert values["task"] == "as"
        assert values["train.lr"] == 0.01

    def test_types_applied(self):
        values = parse_config_text("train.steps=50\nmodel.dropout=0.2\nproto.enabled=true")
        assert values["train.steps"] == 50 and isinstance(values["train.steps"], int)
        assert values["model.dropout"] == 0.2
        assert values["proto.enabled"] is True

    @pytest.mark.parametrize("good,want", [("yes", True), ("1", True), ("FALSE", False), ("no", False)])
    def test_bool_spellings(self, good, want):
        assert parse_config_text(f"proto.enabled={good}")["proto.enabled"] is want

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2.*model\\.depht"):
            parse_config_text("task=ef\nmodel.depht=3")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="key=value"):
            parse_config_text("model.dim 32")

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="train.steps"):
            parse_config_text("train.steps=soon")
        with pytest.raises(ConfigError, match="proto.enabled"):
            parse_config_text("proto.enabled=maybe")

    def test_last_assignment_wins(self):
        assert parse_config_text("seed=1\nseed=2")["seed"] == 2


class TestAssembly:
    def test_geometry_flows_from_data_to_model(self):
        cfg = default_config(**{"data.height": 64, "data.frames": 4, "data.views": 3})
        assert cfg.model.height == 64
        assert cfg.model.frames == 4
        assert cfg.model.views == 3
        assert cfg.data.task == cfg.task == "ef"

    def test_seed_override_wins(self):
        values = parse_config_text("seed=7")
        cfg = build_run_config(values, seed_override=99)
        assert cfg.seed == 99
        assert cfg.proto.seed == 99  # prototype branch follows the run seed

    def test_data_seed_independent_of_run_seed(self):
        cfg = default_config(**{"seed": 5, "data.seed": 17})
        assert cfg.seed == 5 and cfg.data.seed == 17

    def test_subconfig_validation_propagates(self):
        with pytest.raises(SynthError):
            default_config(**{"data.frames": 7})  # odd frames, regression task
        with pytest.raises(SynthError, match="unknown task"):
            default_config(**{"task": "detection"})

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            default_config(**{"train.momentum": 0.9})

    @pytest.mark.parametrize("kw", [
        {"steps": -1}, {"batch": 0}, {"lr": 0.0}, {"eval_every": 0}, {"patience": 0},
    ])
    def test_train_settings_validation(self, kw):
        base = dict(steps=10, batch=2, lr=1e-3, eval_every=5, patience=2)
        base.update(kw)
        with pytest.raises(ConfigError):
            TrainSettings(**base)

    def test_zero_steps_allowed(self):
        assert TrainSettings(steps=0).steps == 0  # eval-only runs are legal


class TestLoad:
    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("task=as\ntrain.steps=25\nmodel.dim=16\nmodel.heads=2\n")
        cfg = load_config(path)
        assert cfg.task == "as"
        assert cfg.train.steps == 25
        assert cfg.model.dim == 16

    def test_load_with_seed_override(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed=3\n")
        assert load_config(path, seed_override=11).seed == 11

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.cfg")
