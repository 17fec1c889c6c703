"""
Adversarial Go Lab - GTP Command
"""

import sys
from pathlib import Path
from typing import Optional

import structlog
import typer

from api.middleware import logged_command
from api.routes.common import load_run_config
from api.services.evaluation import UNIFORM_CHECKPOINT, load_net
from api.services.gtp import GtpEngine
from api.services.search import SearchConfig
from api.services.selfplay import Agent
from utils.config import settings

logger = structlog.get_logger(__name__)


@logged_command("gtp")
def cmd_gtp(
    checkpoint: str = typer.Argument(UNIFORM_CHECKPOINT, help="Network checkpoint, or 'uniform'"),
    config_path: Optional[Path] = typer.Option(None, "--config", help="Run config whose [search] is used"),
    visits: Optional[int] = typer.Option(None, "--visits", help="Override the search visit count"),
    size: int = typer.Option(19, "--size", help="Initial board size"),
):
    """Speak GTP on stdin/stdout with a single agent"""
    search = load_run_config(config_path).search if config_path is not None else SearchConfig.victim_defaults()
    if visits is not None:
        search = search.model_copy(update={"visits": visits})
    agent = Agent(Path(checkpoint).stem, load_net(checkpoint), search)
    engine = GtpEngine(agent, size=size, komi=settings.DEFAULT_KOMI)
    logger.info("GTP session started", checkpoint=checkpoint, visits=search.visits)
    engine.serve(sys.stdin, sys.stdout)
