"""
Adversarial Go Lab - Command Line
Typer application wiring every experiment command
"""

import structlog
import typer

from api.routes import (
    cmd_elo,
    cmd_gtp,
    cmd_heatmap,
    cmd_iterate,
    cmd_match,
    cmd_robustness,
    cmd_selfplay,
    cmd_victimplay,
)
from utils.config import settings
from utils.logging_config import setup_logging

logger = structlog.get_logger(__name__)

app = typer.Typer(
    name="golab",
    help="Desk-scale adversarial Go lab: self-play, victim-play, iterated defense and evaluation",
    no_args_is_help=True,
    add_completion=False,
)


@app.callback()
def main(
    log_level: str = typer.Option(settings.LOG_LEVEL, "--log-level", help="debug, info, warning or error"),
    log_json: bool = typer.Option(settings.LOG_JSON, "--log-json/--no-log-json", help="JSON log lines"),
):
    """Configure logging before any command runs"""
    setup_logging(log_level, log_json)


app.command("selfplay")(cmd_selfplay)
app.command("victimplay")(cmd_victimplay)
app.command("iterate")(cmd_iterate)
app.command("match")(cmd_match)
app.command("elo")(cmd_elo)
app.command("robustness")(cmd_robustness)
app.command("heatmap")(cmd_heatmap)
app.command("gtp")(cmd_gtp)


if __name__ == "__main__":
    app()
