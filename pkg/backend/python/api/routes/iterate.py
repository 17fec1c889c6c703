"""
Adversarial Go Lab - Iterated Training Command
"""

from pathlib import Path
from typing import Optional

import structlog
import typer
from rich.console import Console
from rich.table import Table

from api.middleware import logged_command
from api.routes.common import load_run_config, write_resolved_config
from api.routes.selfplay import write_manifest
from api.services.curriculum import run_iterated
from utils.errors import CheckpointMissing, ConfigError

logger = structlog.get_logger(__name__)
console = Console(stderr=True)


def _require(checkpoint: Optional[str], role: str) -> str:
    if not checkpoint:
        raise ConfigError(f"[curriculum] needs seed_{role}")
    if not Path(checkpoint).exists():
        logger.error("Seed checkpoint missing", role=role, checkpoint=checkpoint)
        raise CheckpointMissing(f"seed {role} checkpoint {checkpoint} does not exist")
    return checkpoint


@logged_command("iterate")
def cmd_iterate(
    config_path: Path = typer.Argument(..., help="Run config (TOML)"),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Output directory of an interrupted run"),
):
    """Alternate defense and attack phases for [curriculum].iterations rounds"""
    config = load_run_config(config_path)
    out = resume if resume is not None else config.output_dir()
    if resume is not None and not (resume / "lineage.json").exists():
        raise ConfigError(f"{resume} holds no lineage.json to resume from")
    write_resolved_config(config, out)
    curriculum = config.curriculum
    seed_victim = _require(curriculum.seed_victim, "victim")
    seed_adversary = _require(curriculum.seed_adversary, "adversary")

    report = run_iterated(config.iteration_plan(), seed_victim, seed_adversary, curriculum.iterations, out,
                          seed=config.run.seed, workers=config.run.workers)
    write_manifest(out, "iterate", config, {"lineage": report.model_dump(mode="json")})

    table = Table(title="Lineage")
    for column in ("name", "parent", "stop", "win rate", "checkpoint"):
        table.add_column(column)
    for entry in report.entries:
        rate = "" if entry.win_rate is None else f"{entry.win_rate:.3f}"
        table.add_row(entry.name, entry.parent or "", entry.stop_reason or "", rate, entry.checkpoint or "")
    console.print(table)
