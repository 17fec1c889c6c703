"""
Adversarial Go Lab - Evaluation
Match running, Clopper-Pearson intervals, Bayesian Elo, robustness metrics
and compute bookkeeping
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize, sparse, special
from scipy.sparse.csgraph import connected_components

from api.services.nnet import load_checkpoint
from api.services.rules import BLACK, WHITE
from api.services.search import SearchConfig, UniformEvaluator
from api.services.selfplay import Agent, GameRecord, GenConfig, GameTask, play_game_task
from utils.config import PublishedConstants
from utils.errors import CheckpointMissing, DisconnectedGraph, DomainError, NeverAchieved, StorageError

logger = structlog.get_logger(__name__)

ELO_K = math.log(10.0) / 400.0
UNIFORM_CHECKPOINT = "uniform"


# Match specs ----------------------------------------------------------------

class AgentSpec(BaseModel):
    """A checkpoint reference plus the search it plays with"""

    model_config = ConfigDict(extra="forbid")

    name: str
    checkpoint: str = UNIFORM_CHECKPOINT
    kind: Literal["mcts", "amcts"] = "mcts"
    search: SearchConfig = Field(default_factory=SearchConfig.victim_defaults)


class MatchSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    agent_a: AgentSpec
    agent_b: AgentSpec
    games: int = Field(default=100, ge=1)
    board_size: int = Field(default=7, ge=5, le=19)
    komi: float = 7.5
    alternate_colors: bool = True
    seed: int = 0
    move_limit_factor: float = Field(default=PublishedConstants.DEFAULT_MOVE_LIMIT_FACTOR, gt=0.0)
    pass_alive_defense: bool = False


def load_net(checkpoint: str):
    if checkpoint == UNIFORM_CHECKPOINT:
        return UniformEvaluator()
    path = Path(checkpoint)
    if not path.exists():
        logger.error("Checkpoint not found", checkpoint=checkpoint)
        raise CheckpointMissing(f"checkpoint {checkpoint} does not exist")
    return load_checkpoint(path)


def build_agents(spec: MatchSpec) -> Tuple[Agent, Agent]:
    net_a = load_net(spec.agent_a.checkpoint)
    net_b = load_net(spec.agent_b.checkpoint)
    if spec.agent_a.kind == "amcts" and spec.agent_b.kind == "amcts":
        raise DomainError("only one side of a match may use A-MCTS")
    agent_a = Agent(spec.agent_a.name, net_a, spec.agent_a.search,
                    victim_net=net_b if spec.agent_a.kind == "amcts" else None)
    agent_b = Agent(spec.agent_b.name, net_b, spec.agent_b.search,
                    victim_net=net_a if spec.agent_b.kind == "amcts" else None)
    return agent_a, agent_b


# Match results --------------------------------------------------------------

@dataclass
class WinRateCI:
    wins: int
    losses: int
    point: float
    lower: float
    upper: float
    confidence: float = 0.95


@dataclass
class MatchResult:
    records: List[GameRecord] = field(default_factory=list)
    a_colors: List[int] = field(default_factory=list)
    a_wins: int = 0
    b_wins: int = 0
    draws: int = 0

    @property
    def games(self) -> int:
        return len(self.records)

    @property
    def win_rate_a(self) -> float:
        """Draws count half"""
        return (self.a_wins + 0.5 * self.draws) / self.games if self.games else 0.0

    def outcomes(self) -> List[float]:
        """Per-game score for agent A: 1, 0.5 or 0"""
        scores = []
        for record, color in zip(self.records, self.a_colors):
            scores.append(0.5 if record.winner is None else float(record.winner == color))
        return scores

    def interval(self, confidence: float = 0.95) -> WinRateCI:
        """Exact interval for A's share of the decisive games; draws are left out.

        With no decisive game the interval is the whole of [0, 1].
        """
        decisive = self.a_wins + self.b_wins
        if decisive == 0:
            return WinRateCI(0, 0, 0.5, 0.0, 1.0, confidence)
        return clopper_pearson(self.a_wins, decisive, confidence)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "game": range(self.games),
            "a_color": ["black" if c == BLACK else "white" for c in self.a_colors],
            "size": [r.size for r in self.records],
            "plies": [r.plies for r in self.records],
            "result": [r.result for r in self.records],
            "a_score": self.outcomes(),
        })


def play_match(agent_a: Agent, agent_b: Agent, games: int, board_size: int, komi: float = 7.5,
               alternate_colors: bool = True, seed: int = 0, workers: int = 1,
               move_limit_factor: float = PublishedConstants.DEFAULT_MOVE_LIMIT_FACTOR,
               pass_alive_defense: bool = False) -> MatchResult:
    """Independent seeded games; with alternation agent A takes black in the even games"""
    if games < 1:
        raise DomainError("a match needs at least one game")
    genconfig = GenConfig(mode="victimplay", board_size_distribution={board_size: 1.0}, komi=komi,
                          move_limit_factor=move_limit_factor, move_limit_policy="score_as_is",
                          pass_alive_defense=pass_alive_defense)
    tasks = []
    colors = []
    for i in range(games):
        a_black = (i % 2 == 0) if alternate_colors else True
        black, white = (agent_a, agent_b) if a_black else (agent_b, agent_a)
        colors.append(BLACK if a_black else WHITE)
        tasks.append(GameTask(index=i, black=black, white=white, genconfig=genconfig, seed=(seed, i), mode="match"))

    if workers > 1:
        records = Parallel(n_jobs=workers, return_as="generator")(delayed(play_game_task)(t) for t in tasks)
    else:
        records = (play_game_task(t) for t in tasks)

    result = MatchResult()
    for record, color in zip(records, colors):
        result.records.append(record)
        result.a_colors.append(color)
        if record.winner is None:
            result.draws += 1
        elif record.winner == color:
            result.a_wins += 1
        else:
            result.b_wins += 1
    logger.info("Match completed", a=agent_a.name, b=agent_b.name, games=games,
                a_wins=result.a_wins, b_wins=result.b_wins, draws=result.draws)
    return result


def run_match(spec: MatchSpec, workers: int = 1) -> MatchResult:
    agent_a, agent_b = build_agents(spec)
    return play_match(agent_a, agent_b, spec.games, spec.board_size, spec.komi, spec.alternate_colors,
                      spec.seed, workers, spec.move_limit_factor, spec.pass_alive_defense)


# Confidence intervals -------------------------------------------------------

def clopper_pearson(wins: int, n: int, confidence: float = 0.95) -> WinRateCI:
    """Exact binomial interval from beta quantiles, inverted by bisection"""
    if n < 1 or wins < 0 or wins > n:
        raise DomainError(f"need 0 <= wins <= n and n >= 1, got wins={wins}, n={n}")
    if not 0.0 < confidence < 1.0:
        raise DomainError("confidence must lie in (0, 1)")
    alpha = 1.0 - confidence
    if wins == 0:
        lower = 0.0
    else:
        lower = optimize.bisect(lambda x: special.betainc(wins, n - wins + 1, x) - alpha / 2, 0.0, 1.0, xtol=1e-10)
    if wins == n:
        upper = 1.0
    else:
        upper = optimize.bisect(lambda x: special.betainc(wins + 1, n - wins, x) - (1 - alpha / 2), 0.0, 1.0,
                                xtol=1e-10)
    point = wins / n
    return WinRateCI(wins, n - wins, point, min(lower, point), max(upper, point), confidence)


# Elo ------------------------------------------------------------------------

@dataclass
class PairTally:
    a: str
    b: str
    a_wins: float
    b_wins: float
    draws: float = 0.0

    @property
    def games(self) -> float:
        return self.a_wins + self.b_wins + self.draws


@dataclass
class EloModel:
    ratings: Dict[str, float]
    anchor: str
    iterations: int = 0

    def expected_score(self, a: str, b: str) -> float:
        return expected_score(self.ratings[a] - self.ratings[b])

    def to_frame(self) -> pd.DataFrame:
        names = sorted(self.ratings, key=lambda n: -self.ratings[n])
        return pd.DataFrame({"agent": names, "elo": [self.ratings[n] for n in names],
                             "anchor": [n == self.anchor for n in names]})


def expected_score(delta: float) -> float:
    """P(a beats b) when a is rated `delta` above b"""
    return 1.0 / (1.0 + 10.0 ** (-delta / 400.0))


def fit_elo(results: Sequence[PairTally], anchor: Optional[str] = None, prior_sigma: float = 1200.0,
            damping: float = 0.5, tolerance: float = 1e-8, max_iterations: int = 10_000) -> EloModel:
    """MAP ratings under the logistic model with a Gaussian prior, anchor fixed at 0"""
    names: List[str] = []
    for tally in results:
        for name in (tally.a, tally.b):
            if name not in names:
                names.append(name)
    if not names:
        raise DomainError("no results to fit")
    anchor = anchor or names[0]
    if anchor not in names:
        raise DomainError(f"anchor {anchor} played no games")
    index = {name: i for i, name in enumerate(names)}
    n = len(names)

    wins = np.zeros((n, n))
    for tally in results:
        i, j = index[tally.a], index[tally.b]
        wins[i, j] += tally.a_wins + 0.5 * tally.draws
        wins[j, i] += tally.b_wins + 0.5 * tally.draws
    games = wins + wins.T
    graph = sparse.csr_matrix((games > 0).astype(np.int8))
    components, _ = connected_components(graph, directed=False)
    if components > 1:
        raise DisconnectedGraph(f"game graph has {components} components")

    free = [i for i in range(n) if i != index[anchor]]
    ratings = np.zeros(n)
    inv_var = 1.0 / prior_sigma ** 2
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        diff = ratings[:, None] - ratings[None, :]
        p = 1.0 / (1.0 + np.exp(-ELO_K * diff))
        grad = ELO_K * (wins - games * p).sum(axis=1) - ratings * inv_var
        curvature = ELO_K ** 2 * games * p * (1.0 - p)
        hessian = curvature - np.diag(curvature.sum(axis=1)) - inv_var * np.eye(n)
        g = grad[free]
        if np.linalg.norm(g) < tolerance:
            break
        step = np.linalg.solve(hessian[np.ix_(free, free)], -g)
        ratings[free] += damping * step
    logger.debug("Elo fit converged", agents=n, iterations=iterations)
    return EloModel({name: float(ratings[index[name]]) for name in names}, anchor, iterations)


# Robustness -----------------------------------------------------------------

@dataclass
class ComputePoint:
    compute: float
    wins: int
    games: int


@dataclass
class AttackRun:
    name: str
    points: List[ComputePoint]


@dataclass
class TrainingRobustnessReport:
    p_level: float
    compute_to_exploit: float
    run: str
    relative: Optional[float] = None


def training_compute_robustness(runs: Sequence[AttackRun], p: float, victim_compute: Optional[float] = None,
                                strict: bool = False, confidence: float = 0.95) -> TrainingRobustnessReport:
    """Least compute at which any run wins at least 1 - p of its games"""
    if not 0.0 <= p <= 1.0:
        raise DomainError("p must lie in [0, 1]")
    best: Optional[Tuple[float, str]] = None
    for run in runs:
        for point in sorted(run.points, key=lambda pt: pt.compute):
            if point.games < 1:
                continue
            rate = clopper_pearson(point.wins, point.games, confidence).lower if strict else point.wins / point.games
            if rate >= 1.0 - p:
                if best is None or point.compute < best[0]:
                    best = (point.compute, run.name)
                break
    if best is None:
        raise NeverAchieved(f"no run reached a win rate of {1.0 - p:.3f}")
    relative = None
    if victim_compute:
        # the victim's own training compute is a trivial upper bound
        relative = min(best[0] / victim_compute, 1.0)
    return TrainingRobustnessReport(p, best[0], best[1], relative)


@dataclass
class RobustnessReport:
    visit_grid: List[int]
    adversary_win_rates: List[float]
    baseline_win_rates: List[float]
    adversary_intervals: List[WinRateCI]
    baseline_intervals: List[WinRateCI]
    baseline_visits: int

    @property
    def above_baseline(self) -> List[bool]:
        return [a > b for a, b in zip(self.adversary_win_rates, self.baseline_win_rates)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "victim_visits": self.visit_grid,
            "adversary_win_rate": self.adversary_win_rates,
            "adversary_lower": [ci.lower for ci in self.adversary_intervals],
            "adversary_upper": [ci.upper for ci in self.adversary_intervals],
            "baseline_win_rate": self.baseline_win_rates,
            "baseline_lower": [ci.lower for ci in self.baseline_intervals],
            "baseline_upper": [ci.upper for ci in self.baseline_intervals],
            "above_baseline": self.above_baseline,
        })


def inference_compute_robustness(victim: Agent, adversary: Agent, visit_grid: Sequence[int], games: int,
                                 board_size: int, baseline_visits: int = 1, komi: float = 7.5,
                                 seed: int = 0, workers: int = 1) -> RobustnessReport:
    """Opponent win rates against the victim across its visit budgets, for the adversary
    and for a fixed-budget copy of the victim"""
    baseline = victim.with_visits(baseline_visits)
    baseline.name = f"{victim.name}@{baseline_visits}"
    adversary_rates, baseline_rates, adversary_cis, baseline_cis = [], [], [], []
    for visits in visit_grid:
        scaled = victim.with_visits(visits)
        for opponent, rates, cis in ((adversary, adversary_rates, adversary_cis),
                                     (baseline, baseline_rates, baseline_cis)):
            match = play_match(opponent, scaled, games, board_size, komi, True, seed + visits, workers)
            rates.append(match.win_rate_a)
            cis.append(match.interval())
        logger.info("Robustness point measured", visits=visits, adversary=adversary_rates[-1],
                    baseline=baseline_rates[-1])
    return RobustnessReport(list(visit_grid), adversary_rates, baseline_rates, adversary_cis, baseline_cis,
                            baseline_visits)


def cross_play_matrix(victims: Dict[str, Agent], adversaries: Dict[str, Agent], games: int, board_size: int,
                      komi: float = 7.5, seed: int = 0, workers: int = 1) -> pd.DataFrame:
    """Victim win rate for every (victim, adversary) pair; rows victims, columns adversaries"""
    table = pd.DataFrame(index=list(victims), columns=list(adversaries), dtype=float)
    for vi, (victim_name, victim) in enumerate(victims.items()):
        for ai, (adversary_name, adversary) in enumerate(adversaries.items()):
            attacker = Agent(adversary.name, adversary.net, adversary.search, victim_net=victim.net)
            match = play_match(victim, attacker, games, board_size, komi, True, seed + 1000 * vi + ai, workers)
            table.loc[victim_name, adversary_name] = match.win_rate_a
    return table


def win_rate_grid(victim: Agent, adversaries: Dict[str, Agent], visit_grid: Sequence[int], games: int,
                  board_size: int, komi: float = 7.5, seed: int = 0, workers: int = 1) -> pd.DataFrame:
    """Adversary win rate against the victim at each visit count (visits x adversary)"""
    table = pd.DataFrame(index=pd.Index(list(visit_grid), name="victim_visits"), columns=list(adversaries),
                         dtype=float)
    for visits in visit_grid:
        scaled = victim.with_visits(visits)
        for name, adversary in adversaries.items():
            match = play_match(adversary, scaled, games, board_size, komi, True, seed + visits, workers)
            table.loc[visits, name] = match.win_rate_a
    return table


# Compute bookkeeping --------------------------------------------------------

def estimate_katago_compute(rows: float) -> float:
    """V100 GPU-days to train a victim on `rows` data rows"""
    c = PublishedConstants
    if rows < c.COMPUTE_BASE_ROWS:
        raise DomainError(f"{rows} rows is below the {c.COMPUTE_BASE_ROWS} base")
    early = (min(rows, c.COMPUTE_BREAKPOINT_ROWS) - c.COMPUTE_BASE_ROWS) * c.COMPUTE_COST_EARLY
    late = max(rows - c.COMPUTE_BREAKPOINT_ROWS, 0.0) * c.COMPUTE_COST_LATE
    return c.COMPUTE_BASE_GPU_DAYS + (early + late) * (c.COMPUTE_SEGMENT_GPU_DAYS / c.COMPUTE_SEGMENT_ROWS)


def adversarial_training_ratio(rows: float, reference_rows: float,
                               start_rows: float = PublishedConstants.ADVERSARIAL_TRAINING_START_ROWS) -> float:
    """Adversarial-training data of one victim relative to another, counted from the start of adversarial training"""
    if reference_rows <= start_rows:
        raise DomainError("reference must lie after the start of adversarial training")
    return (rows - start_rows) / (reference_rows - start_rows)


def v100_gpu_days(days: float, card: str) -> float:
    try:
        return days * PublishedConstants.GPU_DAY_CONVERSIONS[card]
    except KeyError:
        raise DomainError(f"unknown card {card!r}; known: {sorted(PublishedConstants.GPU_DAY_CONVERSIONS)}")


def write_table(frame: pd.DataFrame, path: Union[str, Path], index: bool = False) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=index)
    except OSError as e:
        logger.error("Failed to write table", path=str(path), error=str(e))
        raise StorageError(f"cannot write {path}: {e}") from e
    return path
