"""
Adversarial Go Lab - Game Generation Commands
Self-play and victim-play data generation, with optional training
"""

import json
from pathlib import Path
from typing import Any, Dict, List

import structlog
import typer
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn

from api.middleware import logged_command
from api.routes.common import RunConfig, load_run_config, network_for, write_resolved_config
from api.services import nnet
from api.services.curriculum import (
    Budget,
    PhaseContext,
    PhaseResult,
    phase_name,
    reset_phase_outputs,
    run_attack_iteration,
    run_selfplay_training,
)
from api.services.rules import BLACK, WHITE
from api.services.selfplay import Agent, DataWindow, GameRecord, GameTask, GenerationService
from utils.errors import ConfigError, StorageError

logger = structlog.get_logger(__name__)
console = Console(stderr=True)

MANIFEST = "manifest.json"


def write_manifest(directory: Path, command: str, config: RunConfig, body: Dict[str, Any]) -> Path:
    """Deterministic record of what a command produced; no timestamps"""
    path = directory / MANIFEST
    manifest = {"command": command, "seed": config.run.seed, "config": config.model_dump(mode="json")}
    manifest.update(body)
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    except OSError as e:
        raise StorageError(f"cannot write manifest {path}: {e}") from e
    return path


def _progress() -> Progress:
    return Progress(TextColumn("[bold blue]{task.description}"), BarColumn(), MofNCompleteColumn(),
                    console=console, transient=True)


def _generate(service: GenerationService, tasks: List[GameTask], description: str) -> List[GameRecord]:
    records = []
    with _progress() as progress:
        bar = progress.add_task(description, total=len(tasks))
        for record in service.generate(tasks):
            records.append(record)
            progress.advance(bar)
    return records


def _phase_summary(result: PhaseResult) -> Dict[str, Any]:
    return {
        "stop_reason": result.stop_reason,
        "checkpoints": [c.model_dump() for c in result.checkpoints],
        "trace": result.trace,
        "window": result.window.get_stats(),
    }


@logged_command("selfplay")
def cmd_selfplay(config_path: Path = typer.Argument(..., help="Run config (TOML)")):
    """Generate self-play games; with run.train, train the network on them"""
    config = load_run_config(config_path)
    out = config.output_dir()
    write_resolved_config(config, out)
    net = network_for(config.run.victim_checkpoint, config)

    if config.run.train:
        for phase in ("selfplay00", phase_name("victim", 0)):
            reset_phase_outputs(out, phase)
        if not isinstance(net, nnet.NetworkParameters):
            raise ConfigError("training needs a network checkpoint, not the uniform evaluator")
        plan = config.iteration_plan()
        budget = Budget(max_games=config.run.games, max_steps=config.run.max_steps)
        context = PhaseContext(output_dir=out, seed=config.run.seed, workers=config.run.workers)
        result = run_selfplay_training(net, plan, budget, context, target_win_rate=config.run.target_win_rate)
        write_manifest(out, "selfplay", config, _phase_summary(result))
        console.print(f"[green]Self-play training finished[/green]: {result.stop_reason}, "
                      f"{result.state.games_played} games, {result.state.steps_taken} steps")
        return

    reset_phase_outputs(out, "selfplay")
    genconfig = config.generation.model_copy(update={"mode": "selfplay"})
    player = Agent("selfplay", net, config.search.model_copy(update={"visits": genconfig.selfplay_visits}))
    tasks = [GameTask(index=i, black=player, white=player, genconfig=genconfig, seed=(config.run.seed, i),
                      mode="selfplay") for i in range(config.run.games)]
    service = GenerationService(out, DataWindow(m0=config.training.m0), config.run.workers, phase="selfplay")
    records = _generate(service, tasks, "Self-play")
    write_manifest(out, "selfplay", config, {"games": [r.to_manifest() for r in records],
                                             "stats": service.get_stats()})
    console.print(f"[green]Self-play finished[/green]: {len(records)} games, {service.rows_written} rows")


@logged_command("victimplay")
def cmd_victimplay(config_path: Path = typer.Argument(..., help="Run config (TOML)")):
    """Adversary versus frozen victim with A-MCTS; only adversary moves become rows"""
    config = load_run_config(config_path)
    out = config.output_dir()
    write_resolved_config(config, out)
    victim_net = network_for(config.run.victim_checkpoint, config, seed_offset=0)
    adversary_net = network_for(config.run.adversary_checkpoint, config, seed_offset=1)

    if config.run.train:
        reset_phase_outputs(out, phase_name("adversary", 0))
        if not isinstance(adversary_net, nnet.NetworkParameters):
            raise ConfigError("training needs a network checkpoint, not the uniform evaluator")
        plan = config.iteration_plan()
        budget = Budget(max_games=config.run.games, max_steps=config.run.max_steps)
        context = PhaseContext(output_dir=out, seed=config.run.seed, workers=config.run.workers)
        result = run_attack_iteration(adversary_net, victim_net, plan, budget, context)
        write_manifest(out, "victimplay", config, _phase_summary(result))
        console.print(f"[green]Victim-play training finished[/green]: {result.stop_reason}, "
                      f"victim visits {result.state.victim_visits}, win rate {result.state.win_rate:.3f}")
        return

    reset_phase_outputs(out, "victimplay")
    genconfig = config.generation.model_copy(update={"mode": "victimplay"})
    adversary = Agent("adversary", adversary_net,
                      config.adversary_search.model_copy(update={"visits": genconfig.adversary_visits}),
                      victim_net=victim_net)
    victim = Agent("victim", victim_net, config.search.model_copy(update={"visits": genconfig.victim_visits}))
    tasks = []
    for i in range(config.run.games):
        adversary_black = i % 2 == 0
        black, white = (adversary, victim) if adversary_black else (victim, adversary)
        tasks.append(GameTask(index=i, black=black, white=white, genconfig=genconfig, seed=(config.run.seed, i),
                              mode="victimplay", trainee_color=BLACK if adversary_black else WHITE))
    service = GenerationService(out, DataWindow(m0=config.training.m0), config.run.workers, phase="victimplay")
    records = _generate(service, tasks, "Victim-play")
    wins = sum(1 for r in records if r.utilities.get(r.adversary_color, 0.0) > 0)
    write_manifest(out, "victimplay", config, {"games": [r.to_manifest() for r in records],
                                               "adversary_wins": wins, "stats": service.get_stats()})
    console.print(f"[green]Victim-play finished[/green]: adversary won {wins}/{len(records)}")
