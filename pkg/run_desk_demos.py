#!/usr/bin/env python3
"""
Adversarial Go Lab - Desk Demo Runner
Trains a small victim, attacks it, defends it, and checks each result against its pass mark
"""

import sys
from pathlib import Path
from typing import List, Optional

sys.path.insert(0, str(Path(__file__).parent / "backend" / "python"))

import structlog  # noqa: E402
import typer  # noqa: E402
from rich.console import Console  # noqa: E402
from rich.table import Table  # noqa: E402

from api.routes.common import RunConfig, load_run_config, write_resolved_config  # noqa: E402
from api.services import nnet  # noqa: E402
from api.services.curriculum import (  # noqa: E402
    Budget,
    PhaseContext,
    reset_phase_outputs,
    run_attack_iteration,
    run_defense_iteration,
    run_selfplay_training,
)
from api.services.evaluation import MatchResult, play_match, write_table  # noqa: E402
from api.services.search import UniformEvaluator  # noqa: E402
from api.services.selfplay import Agent  # noqa: E402
from utils.errors import GoLabError  # noqa: E402
from utils.logging_config import setup_logging  # noqa: E402

logger = structlog.get_logger(__name__)
console = Console()

DEFAULT_CONFIG = Path(__file__).parent / "configs" / "desk.toml"


class DemoOutcome:
    def __init__(self, name: str, requirement: str, result: MatchResult, passed: bool):
        self.name = name
        self.requirement = requirement
        self.result = result
        self.passed = passed


class DemoRunner:
    """Runs the three desk demos in order; each one feeds the next its checkpoint"""

    def __init__(self, config: RunConfig, eval_games: int):
        self.config = config
        self.eval_games = eval_games
        self.out = config.output_dir()
        self.seeds = self.out / "seeds"
        self.plan = config.iteration_plan()
        self.board_size = config.evaluation.board_size
        self.komi = config.evaluation.komi
        self.outcomes: List[DemoOutcome] = []

    def _context(self, iteration: int) -> PhaseContext:
        return PhaseContext(output_dir=self.out, iteration=iteration, seed=self.config.run.seed,
                            workers=self.config.run.workers)

    def _victim(self, params, visits: int = 1) -> Agent:
        return Agent("victim", params, self.config.search.model_copy(update={"visits": visits}))

    def _adversary(self, params, victim_params) -> Agent:
        search = self.config.adversary_search.model_copy(update={"visits": self.config.generation.adversary_visits})
        return Agent("adversary", params, search, victim_net=victim_params)

    def _match(self, a: Agent, b: Agent, seed: int) -> MatchResult:
        return play_match(a, b, self.eval_games, self.board_size, self.komi, seed=seed,
                          workers=self.config.run.workers)

    def _record(self, name: str, requirement: str, result: MatchResult, passed: bool):
        self.outcomes.append(DemoOutcome(name, requirement, result, passed))
        write_table(result.to_frame(), self.out / "demos" / f"{name}.csv")
        colour = "green" if passed else "red"
        console.print(f"[{colour}]{name}[/{colour}]: A won {result.a_wins}/{result.games} "
                      f"({result.win_rate_a:.3f}), needs {requirement}")

    def selfplay_victim(self, max_games: Optional[int]) -> nnet.NetworkParameters:
        console.rule("Self-play victim")
        reset_phase_outputs(self.out, "defend00")
        net = nnet.create_network(self.config.network_config(), seed=self.config.run.init_seed)
        budget = Budget(max_games=max_games)
        result = run_selfplay_training(net, self.plan, budget, self._context(0), target_win_rate=0.95)
        nnet.save_checkpoint(result.params, self.seeds / "victim.ckpt")
        baseline = Agent("uniform@1", UniformEvaluator(), self.config.search.model_copy(update={"visits": 1}))
        match = self._match(self._victim(result.params), baseline, seed=9)
        self._record("selfplay_vs_uniform", ">= 0.90", match, match.win_rate_a >= 0.90)
        return result.params

    def attack(self, victim: nnet.NetworkParameters, max_games: Optional[int]) -> nnet.NetworkParameters:
        console.rule("Victim-play attack")
        reset_phase_outputs(self.out, "attack01")
        adversary = nnet.create_network(self.config.network_config(), seed=self.config.run.init_seed + 1)
        plan = self.plan.model_copy(deep=True)
        plan.attack.visit_schedule = [1]
        plan.attack.target_visits = 1
        result = run_attack_iteration(adversary, victim, plan, Budget(max_games=max_games), self._context(1))
        nnet.save_checkpoint(result.params, self.seeds / "adversary.ckpt")
        match = self._match(self._adversary(result.params, victim), self._victim(victim), seed=10)
        self._record("adversary_vs_victim", "> 0.50", match, match.win_rate_a > 0.50)
        return result.params

    def defend(self, victim: nnet.NetworkParameters, adversary: nnet.NetworkParameters, max_games: Optional[int]):
        console.rule("Defense iteration")
        reset_phase_outputs(self.out, "defend01")
        result = run_defense_iteration(victim, adversary, self.plan, Budget(max_games=max_games), self._context(1))
        nnet.save_checkpoint(result.params, self.seeds / "victim_defended.ckpt")
        match = self._match(self._victim(result.params), self._adversary(adversary, result.params), seed=11)
        self._record("defended_vs_adversary", ">= 0.95", match, match.win_rate_a >= 0.95)

    def summary(self) -> bool:
        table = Table(title="Desk demos")
        for column in ("demo", "wins", "games", "win rate", "95% CI", "needs", "status"):
            table.add_column(column)
        for outcome in self.outcomes:
            ci = outcome.result.interval()
            table.add_row(outcome.name, str(outcome.result.a_wins), str(outcome.result.games),
                          f"{outcome.result.win_rate_a:.3f}", f"[{ci.lower:.3f}, {ci.upper:.3f}]",
                          outcome.requirement, "PASS" if outcome.passed else "FAIL")
        console.print(table)
        return all(o.passed for o in self.outcomes)


def main(
    config_path: Path = typer.Argument(DEFAULT_CONFIG, help="Run config (TOML)"),
    eval_games: int = typer.Option(200, "--eval-games", min=1, help="Games per pass/fail match"),
    selfplay_games: int = typer.Option(4000, "--selfplay-games", min=1),
    attack_games: int = typer.Option(2000, "--attack-games", min=1),
    defense_games: int = typer.Option(2000, "--defense-games", min=1),
    log_level: str = typer.Option("info", "--log-level"),
):
    """Desk demos: self-play beats uniform search, victim-play beats the victim, defense recovers it"""
    setup_logging(log_level)
    try:
        config = load_run_config(config_path)
        write_resolved_config(config, config.output_dir())
        runner = DemoRunner(config, eval_games)
        victim = runner.selfplay_victim(selfplay_games)
        adversary = runner.attack(victim, attack_games)
        runner.defend(victim, adversary, defense_games)
    except GoLabError as e:
        logger.error("Desk demo failed", error=str(e))
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(e.exit_code)
    if not runner.summary():
        raise typer.Exit(1)


if __name__ == "__main__":
    typer.run(main)
