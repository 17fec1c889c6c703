"""
Adversarial Go Lab - Heatmap Command
"""

from pathlib import Path
from typing import Optional

import structlog
import typer
from rich.console import Console

from api.middleware import logged_command
from api.services.analysis import MIN_CYCLE_SIZE, accumulate_heatmaps, analyze_games, emit, emit_difference, load_sgf
from api.services.rules import BLACK, WHITE
from utils.config import settings
from utils.errors import ConfigError, MixedSizes

logger = structlog.get_logger(__name__)
console = Console(stderr=True)

VICTIM_COLORS = {"auto": None, "black": BLACK, "white": WHITE}


@logged_command("heatmap")
def cmd_heatmap(
    sgf_dir: Path = typer.Argument(..., help="Directory of SGF games"),
    output: Path = typer.Option(Path("heatmaps"), "--output", "-o", help="Where grids are written"),
    size: Optional[int] = typer.Option(None, "--size", help="Board size when the directory holds no events"),
    victim: str = typer.Option("auto", "--victim", help="Victim colour: auto, black or white"),
    min_group: int = typer.Option(MIN_CYCLE_SIZE, "--min-group", help="Smallest captured group counted"),
    compare: Optional[Path] = typer.Option(None, "--compare", help="Second SGF directory to difference against"),
):
    """Cyclic-capture heatmaps over a directory of games"""
    if victim not in VICTIM_COLORS:
        raise ConfigError(f"--victim must be one of {sorted(VICTIM_COLORS)}")
    if not sgf_dir.is_dir():
        raise ConfigError(f"{sgf_dir} is not a directory")

    paths = sorted(sgf_dir.glob("*.sgf"))
    sizes = sorted({load_sgf(p).size for p in paths})
    if len(sizes) > 1:
        raise MixedSizes(f"{sgf_dir} mixes board sizes {sizes}")
    events = analyze_games(paths, victim=VICTIM_COLORS[victim], min_size=min_group)
    if size is None and not events:
        size = sizes[0] if sizes else settings.DEFAULT_BOARD_SIZE
    heatmap = accumulate_heatmaps(events, size)
    written = emit(heatmap, output)

    if compare is not None:
        if not compare.is_dir():
            raise ConfigError(f"{compare} is not a directory")
        other_events = analyze_games(sorted(compare.glob("*.sgf")), victim=VICTIM_COLORS[victim],
                                     min_size=min_group)
        other = accumulate_heatmaps(other_events, heatmap.size)
        written += emit_difference(heatmap, other, output)
    console.print(f"[green]{heatmap.event_count} cyclic events[/green], {len(written)} files in {output}")
