"""
Adversarial Go Lab - Evaluation Commands
Matches, Elo tables and robustness grids written as CSV
"""

from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
import structlog
import typer
from rich.console import Console
from rich.table import Table

from api.middleware import logged_command
from api.routes.common import RunConfig, load_run_config, write_resolved_config
from api.routes.selfplay import write_manifest
from api.services.evaluation import (
    AgentSpec,
    MatchSpec,
    PairTally,
    cross_play_matrix,
    fit_elo,
    inference_compute_robustness,
    load_net,
    play_match,
    run_match,
    win_rate_grid,
    write_table,
)
from api.services.selfplay import Agent
from utils.errors import ConfigError

logger = structlog.get_logger(__name__)
console = Console(stderr=True)


def _agent(spec: AgentSpec, victim: Optional[Agent] = None) -> Agent:
    net = load_net(spec.checkpoint)
    victim_net = victim.net if spec.kind == "amcts" and victim is not None else None
    return Agent(spec.name, net, spec.search, victim_net=victim_net)


def _pick_pair(config: RunConfig, a: Optional[str], b: Optional[str]):
    agents = config.evaluation.agents
    if a is None or b is None:
        if len(agents) < 2:
            raise ConfigError("[evaluation] needs at least two agents")
        return agents[0], agents[1]
    return config.evaluation.agent(a), config.evaluation.agent(b)


@logged_command("match")
def cmd_match(
    config_path: Path = typer.Argument(..., help="Run config (TOML)"),
    agent_a: Optional[str] = typer.Option(None, "--a", help="Agent name for side A"),
    agent_b: Optional[str] = typer.Option(None, "--b", help="Agent name for side B"),
):
    """Play a seeded match between two configured agents"""
    config = load_run_config(config_path)
    out = config.output_dir()
    write_resolved_config(config, out)
    ev = config.evaluation
    spec_a, spec_b = _pick_pair(config, agent_a, agent_b)
    spec = MatchSpec(agent_a=spec_a, agent_b=spec_b, games=ev.games, board_size=ev.board_size, komi=ev.komi,
                     alternate_colors=ev.alternate_colors, seed=config.run.seed)
    result = run_match(spec, workers=config.run.workers)
    ci = result.interval()

    write_table(result.to_frame(), out / "match_games.csv")
    summary = pd.DataFrame([{
        "agent_a": spec_a.name, "agent_b": spec_b.name, "games": result.games, "a_wins": result.a_wins,
        "b_wins": result.b_wins, "draws": result.draws, "a_win_rate": result.win_rate_a,
        "lower": ci.lower, "upper": ci.upper,
    }])
    write_table(summary, out / "match.csv")
    write_manifest(out, "match", config, {"summary": summary.to_dict(orient="records")})
    console.print(f"[bold]{spec_a.name}[/bold] vs [bold]{spec_b.name}[/bold]: "
                  f"{result.win_rate_a:.3f} [{ci.lower:.3f}, {ci.upper:.3f}] over {result.games} games")


@logged_command("elo")
def cmd_elo(config_path: Path = typer.Argument(..., help="Run config (TOML)")):
    """Round-robin every configured agent and fit an anchored Elo table"""
    config = load_run_config(config_path)
    out = config.output_dir()
    write_resolved_config(config, out)
    ev = config.evaluation
    if len(ev.agents) < 2:
        raise ConfigError("[evaluation] needs at least two agents for an Elo table")

    tallies: List[PairTally] = []
    for pair_index, (spec_a, spec_b) in enumerate(combinations(ev.agents, 2)):
        agent_a = _agent(spec_a)
        agent_b = _agent(spec_b)
        if spec_a.kind == "amcts":
            agent_a.victim_net = agent_b.net
        if spec_b.kind == "amcts":
            agent_b.victim_net = agent_a.net
        result = play_match(agent_a, agent_b, ev.games, ev.board_size, ev.komi, ev.alternate_colors,
                            seed=config.run.seed + 1000 * pair_index, workers=config.run.workers)
        tallies.append(PairTally(spec_a.name, spec_b.name, result.a_wins, result.b_wins, result.draws))

    model = fit_elo(tallies, anchor=ev.anchor or ev.agents[0].name)
    write_table(model.to_frame(), out / "elo.csv")
    pairs = pd.DataFrame([{"a": t.a, "b": t.b, "a_wins": t.a_wins, "b_wins": t.b_wins, "draws": t.draws}
                          for t in tallies])
    write_table(pairs, out / "elo_pairs.csv")
    write_manifest(out, "elo", config, {"ratings": model.ratings, "anchor": model.anchor})

    table = Table(title="Elo")
    table.add_column("agent")
    table.add_column("elo", justify="right")
    for _, row in model.to_frame().iterrows():
        table.add_row(row["agent"], f"{row['elo']:.1f}")
    console.print(table)


@logged_command("robustness")
def cmd_robustness(config_path: Path = typer.Argument(..., help="Run config (TOML)")):
    """Win rate against the victim across its visit grid, plus the cross-play matrix"""
    config = load_run_config(config_path)
    out = config.output_dir()
    write_resolved_config(config, out)
    ev = config.evaluation
    if ev.victim is None:
        raise ConfigError("[evaluation] needs victim = <agent name>")
    victim = _agent(ev.agent(ev.victim))
    opponents: Dict[str, Agent] = {spec.name: _agent(spec, victim) for spec in ev.agents if spec.name != ev.victim}
    if not opponents:
        raise ConfigError("[evaluation] needs at least one opponent besides the victim")
    seed = config.run.seed
    workers = config.run.workers

    grid = win_rate_grid(victim, opponents, ev.visit_grid, ev.games, ev.board_size, ev.komi, seed, workers)
    frame = grid.T
    frame.index.name = "adversary"
    frame.columns = [str(v) for v in ev.visit_grid]
    write_table(frame, out / "visit_grid.csv", index=True)

    reports = {}
    for name, opponent in opponents.items():
        report = inference_compute_robustness(victim, opponent, ev.visit_grid, ev.games, ev.board_size,
                                              ev.baseline_visits, ev.komi, seed, workers)
        write_table(report.to_frame(), out / f"robustness_{name}.csv")
        reports[name] = report.above_baseline

    victims = {spec.name: _agent(spec) for spec in ev.agents if spec.kind == "mcts"}
    adversaries = {spec.name: _agent(spec) for spec in ev.agents if spec.kind == "amcts"}
    if adversaries:
        matrix = cross_play_matrix(victims, adversaries, ev.games, ev.board_size, ev.komi, seed, workers)
        matrix.index.name = "victim"
        write_table(matrix, out / "cross_play.csv", index=True)
    write_manifest(out, "robustness", config, {"visit_grid": ev.visit_grid, "above_baseline": reports})
    console.print(f"[green]Robustness tables written[/green] to {out}")
