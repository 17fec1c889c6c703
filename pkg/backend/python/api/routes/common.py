"""
Adversarial Go Lab - Run Configuration
TOML experiment configs shared by every command
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import structlog
import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from api.services import nnet
from api.services.curriculum import AttackPlan, Budget, DefensePlan, IterationPlan, TrainingPlan
from api.services.evaluation import UNIFORM_CHECKPOINT, AgentSpec, load_net
from api.services.search import SearchConfig
from api.services.selfplay import GenConfig
from utils.config import DeskConfig, settings
from utils.errors import CheckpointMissing, ConfigError, StorageError

logger = structlog.get_logger(__name__)

RESOLVED_CONFIG = "resolved_config.toml"


class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "run"
    seed: int = 0
    output_dir: Path = Field(default_factory=lambda: settings.OUTPUT_DIR)
    workers: int = Field(default_factory=lambda: settings.WORKERS, ge=1)
    games: int = Field(default=20, ge=1)
    max_steps: Optional[int] = Field(default=None, ge=0)
    train: bool = False
    target_win_rate: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    init_seed: int = 0
    victim_checkpoint: Optional[str] = None
    adversary_checkpoint: Optional[str] = None


class CurriculumSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(default=1, ge=0)
    seed_victim: Optional[str] = None
    seed_adversary: Optional[str] = None
    visit_schedule: List[int] = Field(default_factory=lambda: list(DeskConfig.VISIT_SCHEDULE))
    start_visits: int = Field(default=1, ge=1)
    target_visits: Optional[int] = None
    high_visit_cutoff: int = DeskConfig.HIGH_VISIT_CUTOFF
    win_window: int = Field(default=DeskConfig.WIN_TRACKER_WINDOW, ge=1)
    attack_games: Optional[int] = Field(default=400, ge=0)
    attack_steps: Optional[int] = Field(default=None, ge=0)
    defense_games: Optional[int] = Field(default=400, ge=0)
    defense_steps: Optional[int] = Field(default=None, ge=0)
    defend: DefensePlan = Field(default_factory=DefensePlan)


class EvaluationSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    agents: List[AgentSpec] = Field(default_factory=list)
    games: int = Field(default=20, ge=1)
    board_size: int = Field(default=DeskConfig.BOARD_SIZES[-1], ge=5, le=19)
    komi: float = 7.5
    alternate_colors: bool = True
    anchor: Optional[str] = None
    victim: Optional[str] = None
    visit_grid: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16])
    baseline_visits: int = Field(default=1, ge=1)

    def agent(self, name: str) -> AgentSpec:
        for spec in self.agents:
            if spec.name == name:
                return spec
        raise ConfigError(f"no agent named {name!r} in [evaluation]")


class RunConfig(BaseModel):
    """Every section of an experiment file; unknown keys are rejected"""

    model_config = ConfigDict(extra="forbid")

    run: RunSection = Field(default_factory=RunSection)
    network: Dict[str, Any] = Field(default_factory=lambda: {"preset": "desk-cnn"})
    search: SearchConfig = Field(default_factory=SearchConfig.victim_defaults)
    adversary_search: SearchConfig = Field(default_factory=SearchConfig.adversary_defaults)
    generation: GenConfig = Field(default_factory=GenConfig)
    training: TrainingPlan = Field(default_factory=TrainingPlan)
    curriculum: CurriculumSection = Field(default_factory=CurriculumSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)

    @field_validator("network")
    @classmethod
    def _check_network(cls, value: Dict[str, Any]) -> Dict[str, Any]:
        network_config(value)
        return value

    @model_validator(mode="after")
    def _check_agents(self) -> "RunConfig":
        names = [a.name for a in self.evaluation.agents]
        if len(set(names)) != len(names):
            raise ValueError("agent names in [evaluation] must be unique")
        return self

    def network_config(self) -> nnet.NetworkConfig:
        return network_config(self.network)

    def iteration_plan(self) -> IterationPlan:
        c = self.curriculum
        attack = AttackPlan(visit_schedule=c.visit_schedule, start_visits=c.start_visits,
                            target_visits=c.target_visits, high_visit_cutoff=c.high_visit_cutoff,
                            win_window=c.win_window, adversary_visits=self.generation.adversary_visits,
                            generation=self.generation)
        return IterationPlan(
            attack=attack, defend=c.defend, training=self.training,
            victim_search=self.search, adversary_search=self.adversary_search,
            attack_budget=Budget(max_games=c.attack_games, max_steps=c.attack_steps),
            defense_budget=Budget(max_games=c.defense_games, max_steps=c.defense_steps),
        )

    def output_dir(self) -> Path:
        return Path(self.run.output_dir) / self.run.name


def network_config(section: Dict[str, Any]) -> nnet.NetworkConfig:
    """[network] may name a preset and override individual fields"""
    values = dict(section)
    preset = values.pop("preset", None)
    try:
        if preset is None:
            return nnet.NetworkConfig(**values)
        base = nnet.NetworkConfig.preset(preset)
        return nnet.NetworkConfig(**{**base.model_dump(), **values})
    except (ValidationError, KeyError, TypeError) as e:
        raise ValueError(f"invalid [network]: {e}") from e


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = settings.resolve_config_path(str(path))
    try:
        raw = toml.load(path)
    except FileNotFoundError as e:
        raise ConfigError(f"config file {path} not found") from e
    except toml.TomlDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    except OSError as e:
        raise StorageError(f"cannot read config {path}: {e}") from e
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        logger.error("Invalid run config", path=str(path), error=str(e))
        raise ConfigError(f"{path}: {e}") from e
    logger.info("Run config loaded", path=str(path), name=config.run.name)
    return config


def write_resolved_config(config: RunConfig, directory: Path) -> Path:
    """Fully-defaulted config next to the outputs it produced"""
    path = Path(directory) / RESOLVED_CONFIG
    data = config.model_dump(mode="json", exclude_none=True)
    data["generation"]["board_size_distribution"] = {
        str(k): v for k, v in data["generation"]["board_size_distribution"].items()}
    data["curriculum"]["defend"]["board_size_distribution"] = {
        str(k): v for k, v in data["curriculum"]["defend"]["board_size_distribution"].items()}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(toml.dumps(data))
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e
    return path


def network_for(checkpoint: Optional[str], config: RunConfig, seed_offset: int = 0):
    """Load a checkpoint, or build a fresh network from [network] when none is given"""
    if checkpoint is None:
        return nnet.create_network(config.network_config(), seed=config.run.init_seed + seed_offset)
    if checkpoint == UNIFORM_CHECKPOINT:
        return load_net(checkpoint)
    if not Path(checkpoint).exists():
        raise CheckpointMissing(f"checkpoint {checkpoint} does not exist")
    return nnet.load_checkpoint(checkpoint, expected=None)
