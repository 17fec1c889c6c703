"""
Configuration management for the Adversarial Go Lab
"""

import os
from pathlib import Path
from typing import Dict, List

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings, read from GOLAB_* environment variables or .env"""

    model_config = SettingsConfigDict(
        env_prefix="GOLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Paths
    CONFIG_DIR: Path = Field(default=Path("./configs"))
    OUTPUT_DIR: Path = Field(default=Path("./runs"))

    # Logging
    LOG_LEVEL: str = Field(default="info")
    LOG_JSON: bool = Field(default=False)

    # Workers
    WORKERS: int = Field(default_factory=lambda: os.cpu_count() or 1)

    # Game defaults
    DEFAULT_KOMI: float = Field(default=7.5)
    DEFAULT_BOARD_SIZE: int = Field(default=7)

    def resolve_config_path(self, name: str) -> Path:
        """Resolve a config name against CONFIG_DIR unless it is already a path"""
        path = Path(name)
        if path.exists() or path.is_absolute():
            return path
        return self.CONFIG_DIR / path


# Global settings instance
settings = Settings()


class PublishedConstants:
    """Constants reproduced from the published training runs"""

    # Percentage of training games per board size (7..19)
    BOARD_SIZE_FREQUENCIES: Dict[int, float] = {
        7: 0.7, 8: 0.7, 9: 2.9, 10: 1.4, 11: 2.1, 12: 2.9, 13: 7.1,
        14: 4.2, 15: 5.0, 16: 5.7, 17: 6.4, 18: 7.1, 19: 53.6,
    }

    # Sliding window
    WINDOW_M0 = 250_000
    BASE_VICTIM_ROWS = 2_898_845_681

    # Move limit: factor * area / 361
    DEFAULT_MOVE_LIMIT_FACTOR = 1600.0
    REDUCED_MOVE_LIMIT_FACTOR = 900.0
    MOVE_LIMIT_UTILITY = -1.6

    # Curriculum thresholds
    LOW_VISIT_THRESHOLD = 0.75
    HIGH_VISIT_THRESHOLD = 0.90
    HIGH_VISIT_CUTOFF = 512
    PASS_ALIVE_DEFENSE_BELOW_VISITS = 100

    # Iterated adversarial training
    DEFENSE_ADVERSARY_FRACTION = 0.18
    DEFENSE_VICTIM_VISITS = 300
    DEFENSE_ADVERSARY_VISITS = 600

    # KataGo compute estimate
    COMPUTE_BASE_GPU_DAYS = 6730.0
    COMPUTE_BASE_ROWS = 1_229_425_124
    COMPUTE_BREAKPOINT_ROWS = 3_211_000_000
    COMPUTE_SEGMENT_GPU_DAYS = 5451.0
    COMPUTE_SEGMENT_ROWS = 760_807_175
    COMPUTE_COST_EARLY = 1.25
    COMPUTE_COST_LATE = 1.75
    ADVERSARIAL_TRAINING_START_ROWS = 3_057_177_418

    # V100 GPU-days per GPU-day of each card, bookkeeping only
    GPU_DAY_CONVERSIONS: Dict[str, float] = {
        "V100": 1.0,
        "A6000": 1.704,
        "A100": 1.873 * 1.704,
        "H100": 0.369 * 1.704,
    }

    # ViT hyperparameters that trained well at full scale
    VIT_PATCH_SIZE = 2
    VIT_HEADS = 6
    VIT_EMBED = 384
    VIT_MLP = 1536


class DeskConfig:
    """Desk-scale defaults"""

    BOARD_SIZES: List[int] = [5, 7]
    VISIT_SCHEDULE: List[int] = [1, 2, 4, 8, 16, 32, 64, 128, 256]
    HIGH_VISIT_CUTOFF = 256
    WIN_TRACKER_WINDOW = 200
    VALUE_LOSS_WEIGHT = 1.5
    DEFENSE_VICTIM_VISITS = 16
    DEFENSE_ADVERSARY_VISITS = 32
    PLATEAU_MIN_IMPROVEMENT = 0.01
    PLATEAU_EVALUATIONS = 3