"""
Adversarial Go Lab - Shared test fixtures
"""

from pathlib import Path

import numpy as np
import pytest
import toml

from api.services import nnet
from api.services.search import SearchConfig, UniformEvaluator
from api.services.selfplay import Agent


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    return nnet.NetworkConfig(backbone="cnn", blocks=1, channels=8, value_hidden=8)


@pytest.fixture(scope="session")
def tiny_vit_config():
    return nnet.NetworkConfig(backbone="vit", blocks=1, channels=16, heads=2, patch_size=2, mlp_dim=32,
                              value_hidden=8)


@pytest.fixture
def tiny_net(tiny_config):
    return nnet.create_network(tiny_config, seed=0)


@pytest.fixture
def uniform_agent():
    return Agent("uniform", UniformEvaluator(), SearchConfig.victim_defaults(visits=2))


def write_config(directory: Path, data: dict, name: str = "run.toml") -> Path:
    path = directory / name
    path.write_text(toml.dumps(data))
    return path


@pytest.fixture
def tiny_run_config(tmp_path):
    """Smallest config that still plays complete games"""
    data = {
        "run": {"name": "smoke", "seed": 7, "output_dir": str(tmp_path / "runs"), "workers": 1, "games": 2},
        "network": {"backbone": "cnn", "blocks": 1, "channels": 8, "value_hidden": 8},
        "search": {"visits": 2},
        "adversary_search": {"visits": 2},
        "generation": {"board_size_distribution": {"5": 1.0}, "adversary_visits": 2, "victim_visits": 1,
                       "selfplay_visits": 2, "move_limit_factor": 400.0},
        "training": {"batch_size": 8, "games_per_round": 2, "steps_per_round": 1, "m0": 50},
        "evaluation": {
            "games": 2, "board_size": 5, "visit_grid": [1, 2], "victim": "victim",
            "agents": [
                {"name": "victim", "checkpoint": "uniform", "search": {"visits": 1}},
                {"name": "adversary", "checkpoint": "uniform", "kind": "amcts", "search": {"visits": 2}},
            ],
        },
    }
    return write_config(tmp_path, data)
