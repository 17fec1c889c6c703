"""
Tests for run configs, settings and presets
"""

import pytest

from api.routes.common import (
    RESOLVED_CONFIG,
    RunConfig,
    load_run_config,
    network_config,
    network_for,
    write_resolved_config,
)
from api.services.search import UniformEvaluator
from conftest import write_config
from utils.config import DeskConfig, PublishedConstants, Settings
from utils.errors import CheckpointMissing, ConfigError


def test_defaults_are_desk_scale():
    config = RunConfig()
    assert config.curriculum.visit_schedule == DeskConfig.VISIT_SCHEDULE
    assert config.network_config().backbone == "cnn"
    assert config.search.visits >= 1


def test_loads_tiny_config(tiny_run_config):
    config = load_run_config(tiny_run_config)
    assert config.run.name == "smoke"
    assert config.generation.board_size_distribution == {5: 1.0}
    assert config.output_dir().name == "smoke"
    assert config.evaluation.agent("adversary").kind == "amcts"
    with pytest.raises(ConfigError):
        config.evaluation.agent("nobody")


def test_unknown_key_is_rejected(tmp_path):
    path = write_config(tmp_path, {"run": {"name": "x", "colour": "blue"}})
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert info.value.exit_code == 2


def test_unknown_section_is_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, {"metrics": {"enabled": True}}))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\nname = ")
    with pytest.raises(ConfigError):
        load_run_config(bad)


def test_duplicate_agent_names(tmp_path):
    data = {"evaluation": {"agents": [{"name": "a"}, {"name": "a"}]}}
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, data))


def test_network_presets_and_overrides():
    config = network_config({"preset": "desk-vit", "blocks": 1})
    assert config.backbone == "vit"
    assert config.blocks == 1
    with pytest.raises(ValueError):
        network_config({"preset": "b99c1"})
    with pytest.raises(ValueError):
        network_config({"depth": 3})


def test_resolved_config_reloads(tiny_run_config, tmp_path):
    config = load_run_config(tiny_run_config)
    path = write_resolved_config(config, tmp_path / "out")
    assert path.name == RESOLVED_CONFIG
    assert load_run_config(path).model_dump() == config.model_dump()


def test_iteration_plan_carries_budgets(tiny_run_config):
    plan = load_run_config(tiny_run_config).iteration_plan()
    assert plan.attack_budget.max_games == 400
    assert plan.training.games_per_round == 2
    assert plan.attack.generation.board_size_distribution == {5: 1.0}


def test_network_for(tiny_run_config, tmp_path):
    config = load_run_config(tiny_run_config)
    fresh = network_for(None, config)
    assert fresh.fingerprint() == network_for(None, config).fingerprint()
    assert isinstance(network_for("uniform", config), UniformEvaluator)
    with pytest.raises(CheckpointMissing):
        network_for(str(tmp_path / "gone.ckpt"), config)


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("GOLAB_DEFAULT_KOMI", "6.5")
    monkeypatch.setenv("GOLAB_WORKERS", "3")
    settings = Settings()
    assert settings.DEFAULT_KOMI == 6.5
    assert settings.WORKERS == 3


def test_published_constants():
    assert sum(PublishedConstants.BOARD_SIZE_FREQUENCIES.values()) == pytest.approx(100.0, abs=0.5)
    assert PublishedConstants.DEFENSE_ADVERSARY_FRACTION == 0.18
