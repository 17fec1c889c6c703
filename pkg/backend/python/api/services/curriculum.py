"""
Adversarial Go Lab - Curriculum
Victim-play curricula and iterated adversarial training as a resumable state machine
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from api.services import nnet
from api.services.evaluation import play_match
from api.services.rules import BLACK, WHITE
from api.services.search import SearchConfig, UniformEvaluator
from api.services.selfplay import (
    Agent,
    DataWindow,
    GameTask,
    GenConfig,
    GenerationService,
    is_adversarial_game,
    load_segments,
    sample_batch,
    warm_start,
)
from utils.config import DeskConfig, PublishedConstants
from utils.errors import (
    BudgetExhausted,
    DomainError,
    InsufficientData,
    ScheduleExhausted,
    StorageError,
)

logger = structlog.get_logger(__name__)

ATTACK_PHASE = 1
DEFENSE_PHASE = 2


# Curriculum state -----------------------------------------------------------

class CurriculumState(BaseModel):
    """Victim-visit ladder plus the rolling record of adversary results at the current rung"""

    phase: Literal["attack", "defend"] = "attack"
    iteration: int = 0
    victim_visits: int = 1
    visit_schedule: List[int] = Field(default_factory=lambda: list(DeskConfig.VISIT_SCHEDULE))
    high_visit_cutoff: int = DeskConfig.HIGH_VISIT_CUTOFF
    low_threshold: float = PublishedConstants.LOW_VISIT_THRESHOLD
    high_threshold: float = PublishedConstants.HIGH_VISIT_THRESHOLD
    window: int = Field(default=DeskConfig.WIN_TRACKER_WINDOW, ge=1)
    win_tracker: List[float] = Field(default_factory=list)
    games_played: int = 0
    steps_taken: int = 0
    advancements: List[Dict[str, Any]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if not self.visit_schedule or any(b <= a for a, b in zip(self.visit_schedule, self.visit_schedule[1:])):
            raise ValueError("visit_schedule must be non-empty and strictly increasing")
        if self.victim_visits not in self.visit_schedule:
            raise ValueError(f"victim_visits {self.victim_visits} is not on the schedule")
        return self

    @property
    def threshold(self) -> float:
        return self.high_threshold if self.victim_visits >= self.high_visit_cutoff else self.low_threshold

    @property
    def win_rate(self) -> float:
        return sum(self.win_tracker) / len(self.win_tracker) if self.win_tracker else 0.0

    def record(self, won: float):
        self.win_tracker.append(float(won))
        if len(self.win_tracker) > self.window:
            del self.win_tracker[: len(self.win_tracker) - self.window]

    def save(self, path: Path):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.model_dump_json(indent=2))
        except OSError as e:
            raise StorageError(f"cannot write curriculum state {path}: {e}") from e

    @classmethod
    def load(cls, path: Path) -> "CurriculumState":
        try:
            return cls.model_validate_json(Path(path).read_text())
        except OSError as e:
            raise StorageError(f"cannot read curriculum state {path}: {e}") from e


def should_advance(state: CurriculumState) -> bool:
    if len(state.win_tracker) < state.window:
        raise InsufficientData(f"{len(state.win_tracker)} of {state.window} outcomes at {state.victim_visits} visits")
    return state.win_rate >= state.threshold


def advance(state: CurriculumState) -> CurriculumState:
    """Next rung of the schedule with an empty tracker"""
    position = state.visit_schedule.index(state.victim_visits)
    if position + 1 >= len(state.visit_schedule):
        raise ScheduleExhausted(f"{state.victim_visits} visits is the last rung")
    snapshot = {
        "from_visits": state.victim_visits,
        "to_visits": state.visit_schedule[position + 1],
        "wins": sum(state.win_tracker),
        "games": len(state.win_tracker),
        "win_rate": state.win_rate,
        "threshold": state.threshold,
        "games_played": state.games_played,
    }
    logger.info("Curriculum advanced", **snapshot)
    return state.model_copy(update={
        "victim_visits": state.visit_schedule[position + 1],
        "win_tracker": [],
        "advancements": state.advancements + [snapshot],
    }, deep=True)


# Plans and budgets ----------------------------------------------------------

class Budget(BaseModel):
    """Compute allowance in games and optimizer steps"""

    max_games: Optional[int] = Field(default=None, ge=0)
    max_steps: Optional[int] = Field(default=None, ge=0)
    games: int = 0
    steps: int = 0

    def exhausted(self) -> bool:
        return ((self.max_games is not None and self.games >= self.max_games)
                or (self.max_steps is not None and self.steps >= self.max_steps))

    def check(self):
        if self.exhausted():
            raise BudgetExhausted(f"budget spent: {self.games} games, {self.steps} steps")

    def charge_games(self, n: int = 1):
        self.games += n

    def charge_steps(self, n: int = 1):
        self.steps += n


class TrainingPlan(BaseModel):
    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    value_weight: float = DeskConfig.VALUE_LOSS_WEIGHT
    games_per_round: int = Field(default=20, ge=1)
    steps_per_round: int = Field(default=20, ge=0)
    m0: int = Field(default=2_000, ge=1)


class AttackPlan(BaseModel):
    model_config = ConfigDict(extra="forbid")

    visit_schedule: List[int] = Field(default_factory=lambda: list(DeskConfig.VISIT_SCHEDULE))
    start_visits: int = 1
    target_visits: Optional[int] = None
    high_visit_cutoff: int = DeskConfig.HIGH_VISIT_CUTOFF
    win_window: int = Field(default=DeskConfig.WIN_TRACKER_WINDOW, ge=1)
    adversary_visits: int = Field(default=32, ge=1)
    generation: GenConfig = Field(default_factory=GenConfig)

    def target(self) -> int:
        return self.target_visits if self.target_visits is not None else self.visit_schedule[-1]


class DefensePlan(BaseModel):
    model_config = ConfigDict(extra="forbid")

    adversary_fraction: float = Field(default=PublishedConstants.DEFENSE_ADVERSARY_FRACTION, ge=0.0, le=1.0)
    victim_visits: int = Field(default=DeskConfig.DEFENSE_VICTIM_VISITS, ge=1)
    adversary_visits: int = Field(default=DeskConfig.DEFENSE_ADVERSARY_VISITS, ge=1)
    selfplay_visits: int = Field(default=16, ge=1)
    eval_games: int = Field(default=20, ge=1)
    plateau_min_improvement: float = DeskConfig.PLATEAU_MIN_IMPROVEMENT
    plateau_evaluations: int = Field(default=DeskConfig.PLATEAU_EVALUATIONS, ge=1)
    board_size_distribution: Dict[int, float] = Field(default_factory=lambda: {5: 0.5, 7: 0.5})
    komi: float = 7.5


class IterationPlan(BaseModel):
    model_config = ConfigDict(extra="forbid")

    attack: AttackPlan = Field(default_factory=AttackPlan)
    defend: DefensePlan = Field(default_factory=DefensePlan)
    training: TrainingPlan = Field(default_factory=TrainingPlan)
    victim_search: SearchConfig = Field(default_factory=SearchConfig.victim_defaults)
    adversary_search: SearchConfig = Field(default_factory=SearchConfig.adversary_defaults)
    attack_budget: Budget = Field(default_factory=lambda: Budget(max_games=400))
    defense_budget: Budget = Field(default_factory=lambda: Budget(max_games=400))


# Phase plumbing -------------------------------------------------------------

class CheckpointRecord(BaseModel):
    path: str
    role: Literal["adversary", "victim"]
    iteration: int
    step_count: int
    games: int
    win_rate: float
    victim_visits: int


@dataclass
class PhaseContext:
    output_dir: Path
    iteration: int = 0
    seed: int = 0
    workers: int = 1
    window: Optional[DataWindow] = None
    resume_state: Optional[CurriculumState] = None


@dataclass
class PhaseResult:
    role: str
    params: nnet.NetworkParameters
    checkpoints: List[CheckpointRecord]
    state: CurriculumState
    window: DataWindow
    stop_reason: str
    trace: List[Dict[str, Any]] = field(default_factory=list)

    def compute_points(self) -> List[Dict[str, Any]]:
        return [{"games": t["games"], "steps": t["steps"], "victim_visits": t["victim_visits"],
                 "win_rate": t["win_rate"]} for t in self.trace]


def phase_name(role: str, iteration: int) -> str:
    return f"{'attack' if role == 'adversary' else 'defend'}{iteration:02d}"


def _phase_tag(role: str, iteration: int) -> int:
    return 2 * iteration + (1 if role == "adversary" else 0)


def train_steps(params: nnet.NetworkParameters, window: DataWindow, plan: TrainingPlan, steps: int,
                rng: np.random.Generator, budget: Budget) -> int:
    """SGD on uniform window samples; returns the number of steps taken"""
    if not len(window):
        return 0
    taken = 0
    for _ in range(steps):
        budget.check()
        batch = sample_batch(window, plan.batch_size, rng)
        grads = nnet.gradients(params, batch, plan.value_weight)
        nnet.sgd_step(params, grads, plan.learning_rate, plan.momentum)
        budget.charge_steps(1)
        taken += 1
    return taken


def _save(params: nnet.NetworkParameters, context: PhaseContext, role: str, state: CurriculumState,
          win_rate: float) -> CheckpointRecord:
    name = phase_name(role, context.iteration)
    path = context.output_dir / "checkpoints" / f"{name}_step{params.step_count:07d}.ckpt"
    nnet.save_checkpoint(params, path)
    return CheckpointRecord(path=str(path), role=role, iteration=context.iteration, step_count=params.step_count,
                            games=state.games_played, win_rate=win_rate, victim_visits=state.victim_visits)


def _fingerprint(net) -> Optional[int]:
    return net.fingerprint() if isinstance(net, nnet.NetworkParameters) else None


def _assert_frozen(net, before: Optional[int], role: str):
    if before is not None and _fingerprint(net) != before:
        logger.error("Frozen network changed", role=role)
        raise DomainError(f"frozen {role} was modified during training")


class _DataExitWatch:
    """Logs once when rows of an earlier phase have all left the window"""

    def __init__(self, window: DataWindow, tag: Optional[int]):
        self.window = window
        self.tag = tag
        self.reported = tag is None or tag not in window.tags()

    def poll(self, games_played: int):
        if not self.reported and self.tag not in self.window.tags():
            self.reported = True
            logger.info("Previous iteration data left window", tag=self.tag, games_played=games_played,
                        total_rows=self.window.total_rows)


# Attack ---------------------------------------------------------------------

def run_attack_iteration(adversary_params: nnet.NetworkParameters, frozen_victim, plan: IterationPlan,
                         budget: Budget, context: PhaseContext) -> PhaseResult:
    """Victim-play with A-MCTS, climbing the victim-visit ladder until the target rung is beaten or the budget ends"""
    attack = plan.attack
    params = adversary_params.clone()
    victim_print = _fingerprint(frozen_victim)
    state = context.resume_state or CurriculumState(
        phase="attack", iteration=context.iteration, victim_visits=attack.start_visits,
        visit_schedule=attack.visit_schedule, high_visit_cutoff=attack.high_visit_cutoff, window=attack.win_window,
    )
    window = context.window or DataWindow(m0=plan.training.m0)
    name = phase_name("adversary", context.iteration)
    service = GenerationService(context.output_dir, window, context.workers, phase=name,
                                tag=_phase_tag("adversary", context.iteration))
    watch = _DataExitWatch(window, _phase_tag("adversary", context.iteration - 1) if context.iteration else None)
    rng = np.random.default_rng([context.seed, ATTACK_PHASE, context.iteration, state.games_played])
    checkpoints: List[CheckpointRecord] = []
    trace: List[Dict[str, Any]] = []
    stop_reason = ""
    logger.info("Attack iteration started", iteration=context.iteration, victim_visits=state.victim_visits,
                target=attack.target())

    try:
        while not stop_reason:
            budget.check()
            genconfig = attack.generation.model_copy(update={
                "mode": "victimplay", "victim_visits": state.victim_visits, "adversary_visits": attack.adversary_visits,
            })
            adversary = Agent(name, params, plan.adversary_search.model_copy(update={"visits": attack.adversary_visits}),
                              victim_net=frozen_victim)
            victim = Agent(f"victim@{state.victim_visits}", frozen_victim,
                           plan.victim_search.model_copy(update={"visits": state.victim_visits}))
            tasks = []
            for g in range(plan.training.games_per_round):
                index = state.games_played + g
                adversary_black = index % 2 == 0
                black, white = (adversary, victim) if adversary_black else (victim, adversary)
                tasks.append(GameTask(index=index, black=black, white=white, genconfig=genconfig,
                                      seed=(context.seed, ATTACK_PHASE, context.iteration, index), mode="victimplay",
                                      trainee_color=BLACK if adversary_black else WHITE))
            for record in service.generate(tasks):
                state.record(1.0 if record.utilities.get(record.adversary_color, 0.0) > 0 else 0.0)
                state.games_played += 1
                budget.charge_games(1)
            watch.poll(state.games_played)

            state.steps_taken += train_steps(params, window, plan.training, plan.training.steps_per_round, rng, budget)
            if not checkpoints or params.step_count > checkpoints[-1].step_count:
                checkpoints.append(_save(params, context, "adversary", state, state.win_rate))
            trace.append({"games": state.games_played, "steps": state.steps_taken,
                          "victim_visits": state.victim_visits, "win_rate": state.win_rate})
            logger.info("Attack round completed", iteration=context.iteration, games=state.games_played,
                        victim_visits=state.victim_visits, win_rate=round(state.win_rate, 3))

            try:
                if should_advance(state):
                    if state.victim_visits >= attack.target():
                        stop_reason = "target_reached"
                    else:
                        state = advance(state)
            except InsufficientData:
                pass
            except ScheduleExhausted:
                stop_reason = "schedule_exhausted"
            state.save(context.output_dir / "state" / f"{name}.json")
    except BudgetExhausted as e:
        stop_reason = "budget"
        logger.info("Attack budget exhausted", iteration=context.iteration, detail=str(e))

    _assert_frozen(frozen_victim, victim_print, "victim")
    if not checkpoints or params.step_count > checkpoints[-1].step_count:
        checkpoints.append(_save(params, context, "adversary", state, state.win_rate))
    state.save(context.output_dir / "state" / f"{name}.json")
    logger.info("Attack iteration finished", iteration=context.iteration, stop_reason=stop_reason,
                victim_visits=state.victim_visits, checkpoints=len(checkpoints))
    return PhaseResult("adversary", params, checkpoints, state, window, stop_reason, trace)


# Defense --------------------------------------------------------------------

def plateaued(evaluations: Sequence[float], min_improvement: float, points: int) -> bool:
    """True when the last `points` evaluations improve on the earlier best by less than min_improvement"""
    if len(evaluations) <= points:
        return False
    return max(evaluations[-points:]) - max(evaluations[:-points]) < min_improvement


def run_defense_iteration(victim_params: nnet.NetworkParameters, frozen_adversary, plan: IterationPlan,
                          budget: Budget, context: PhaseContext) -> PhaseResult:
    """Victim self-play mixed with games against a frozen adversary, stopping on plateau or budget"""
    defend = plan.defend
    params = victim_params.clone()
    adversary_print = _fingerprint(frozen_adversary)
    state = context.resume_state or CurriculumState(
        phase="defend", iteration=context.iteration, victim_visits=defend.victim_visits,
        visit_schedule=[defend.victim_visits],
    )
    window = context.window or DataWindow(m0=plan.training.m0)
    name = phase_name("victim", context.iteration)
    service = GenerationService(context.output_dir, window, context.workers, phase=name,
                                tag=_phase_tag("victim", context.iteration))
    watch = _DataExitWatch(window, _phase_tag("victim", context.iteration - 1) if context.iteration else None)
    rng = np.random.default_rng([context.seed, DEFENSE_PHASE, context.iteration, state.games_played])
    selfplay_config = GenConfig(mode="selfplay", board_size_distribution=defend.board_size_distribution,
                                komi=defend.komi, move_limit_policy="score_as_is",
                                selfplay_visits=defend.selfplay_visits)
    versus_config = GenConfig(mode="victimplay", board_size_distribution=defend.board_size_distribution,
                              komi=defend.komi, move_limit_policy="score_as_is", victim_visits=defend.victim_visits,
                              adversary_visits=defend.adversary_visits)
    checkpoints: List[CheckpointRecord] = []
    evaluations: List[float] = []
    trace: List[Dict[str, Any]] = []
    stop_reason = ""
    logger.info("Defense iteration started", iteration=context.iteration,
                adversary_fraction=defend.adversary_fraction)

    try:
        while not stop_reason:
            budget.check()
            selfplayer = Agent(name, params, plan.victim_search.model_copy(
                update={"visits": defend.selfplay_visits, "root_noise": True}))
            victim = Agent(name, params, plan.victim_search.model_copy(update={"visits": defend.victim_visits}))
            adversary = Agent("frozen-adversary", frozen_adversary,
                              plan.adversary_search.model_copy(update={"visits": defend.adversary_visits}),
                              victim_net=params)
            tasks = []
            for g in range(plan.training.games_per_round):
                index = state.games_played + g
                seed = (context.seed, DEFENSE_PHASE, context.iteration, index)
                if is_adversarial_game(index, defend.adversary_fraction):
                    victim_black = math.floor((index + 1) * defend.adversary_fraction) % 2 == 1
                    black, white = (victim, adversary) if victim_black else (adversary, victim)
                    tasks.append(GameTask(index=index, black=black, white=white, genconfig=versus_config, seed=seed,
                                          mode="victimplay", trainee_color=BLACK if victim_black else WHITE))
                else:
                    tasks.append(GameTask(index=index, black=selfplayer, white=selfplayer, genconfig=selfplay_config,
                                          seed=seed, mode="selfplay"))
            for _ in service.generate(tasks):
                state.games_played += 1
                budget.charge_games(1)
            watch.poll(state.games_played)

            state.steps_taken += train_steps(params, window, plan.training, plan.training.steps_per_round, rng, budget)
            evaluated = Agent(name, params, plan.victim_search.model_copy(update={"visits": defend.victim_visits}))
            match = play_match(evaluated, Agent("frozen-adversary", frozen_adversary, adversary.search,
                                                victim_net=params),
                               defend.eval_games, _largest(defend.board_size_distribution), defend.komi,
                               seed=context.seed + state.games_played, workers=context.workers)
            win_rate = match.win_rate_a
            evaluations.append(win_rate)
            if not checkpoints or params.step_count > checkpoints[-1].step_count:
                checkpoints.append(_save(params, context, "victim", state, win_rate))
            trace.append({"games": state.games_played, "steps": state.steps_taken,
                          "victim_visits": defend.victim_visits, "win_rate": win_rate})
            logger.info("Defense round completed", iteration=context.iteration, games=state.games_played,
                        victim_win_rate=round(win_rate, 3))
            if plateaued(evaluations, defend.plateau_min_improvement, defend.plateau_evaluations):
                stop_reason = "plateau"
            state.save(context.output_dir / "state" / f"{name}.json")
    except BudgetExhausted as e:
        stop_reason = "budget"
        logger.info("Defense budget exhausted", iteration=context.iteration, detail=str(e))

    _assert_frozen(frozen_adversary, adversary_print, "adversary")
    if not checkpoints or params.step_count > checkpoints[-1].step_count:
        checkpoints.append(_save(params, context, "victim", state, evaluations[-1] if evaluations else 0.0))
    state.save(context.output_dir / "state" / f"{name}.json")
    logger.info("Defense iteration finished", iteration=context.iteration, stop_reason=stop_reason,
                checkpoints=len(checkpoints))
    return PhaseResult("victim", params, checkpoints, state, window, stop_reason, trace)


def _largest(distribution: Dict[int, float]) -> int:
    return max(distribution)


# Self-play from scratch -----------------------------------------------------

def run_selfplay_training(params: nnet.NetworkParameters, plan: IterationPlan, budget: Budget,
                          context: PhaseContext, baseline_visits: int = 1,
                          target_win_rate: Optional[float] = None) -> PhaseResult:
    """Plain self-play training, evaluated each round against a uniform-prior searcher"""
    defend = plan.defend
    params = params.clone()
    state = context.resume_state or CurriculumState(phase="defend", iteration=context.iteration,
                                                    victim_visits=defend.selfplay_visits,
                                                    visit_schedule=[defend.selfplay_visits])
    window = context.window or DataWindow(m0=plan.training.m0)
    name = f"selfplay{context.iteration:02d}"
    service = GenerationService(context.output_dir, window, context.workers, phase=name,
                                tag=_phase_tag("victim", context.iteration))
    rng = np.random.default_rng([context.seed, DEFENSE_PHASE, context.iteration, state.games_played, 0])
    genconfig = GenConfig(mode="selfplay", board_size_distribution=defend.board_size_distribution,
                          komi=defend.komi, move_limit_policy="score_as_is", selfplay_visits=defend.selfplay_visits)
    baseline = Agent(f"uniform@{baseline_visits}", UniformEvaluator(),
                     plan.victim_search.model_copy(update={"visits": baseline_visits}))
    checkpoints: List[CheckpointRecord] = []
    trace: List[Dict[str, Any]] = []
    stop_reason = ""
    try:
        while not stop_reason:
            budget.check()
            player = Agent(name, params, plan.victim_search.model_copy(
                update={"visits": defend.selfplay_visits, "root_noise": True}))
            tasks = [GameTask(index=state.games_played + g, black=player, white=player, genconfig=genconfig,
                              seed=(context.seed, 0, context.iteration, state.games_played + g), mode="selfplay")
                     for g in range(plan.training.games_per_round)]
            for _ in service.generate(tasks):
                state.games_played += 1
                budget.charge_games(1)
            state.steps_taken += train_steps(params, window, plan.training, plan.training.steps_per_round, rng, budget)
            evaluated = Agent(name, params, plan.victim_search.model_copy(update={"visits": defend.victim_visits}))
            match = play_match(evaluated, baseline, defend.eval_games, _largest(defend.board_size_distribution),
                               defend.komi, seed=context.seed + state.games_played, workers=context.workers)
            if not checkpoints or params.step_count > checkpoints[-1].step_count:
                checkpoints.append(_save(params, context, "victim", state, match.win_rate_a))
            trace.append({"games": state.games_played, "steps": state.steps_taken,
                          "victim_visits": defend.victim_visits, "win_rate": match.win_rate_a})
            logger.info("Self-play round completed", games=state.games_played, win_rate=round(match.win_rate_a, 3))
            if target_win_rate is not None and match.win_rate_a >= target_win_rate:
                stop_reason = "target_reached"
    except BudgetExhausted:
        stop_reason = "budget"
    if not checkpoints or params.step_count > checkpoints[-1].step_count:
        checkpoints.append(_save(params, context, "victim", state, trace[-1]["win_rate"] if trace else 0.0))
    return PhaseResult("victim", params, checkpoints, state, window, stop_reason, trace)


# Checkpoint selection -------------------------------------------------------

def select_checkpoint(series: Sequence[CheckpointRecord], points: int = 3) -> CheckpointRecord:
    """First checkpoint of the best forward moving-average window; ties go to the earliest"""
    if len(series) < points:
        raise InsufficientData(f"need {points} evaluated checkpoints, have {len(series)}")
    rates = np.array([c.win_rate for c in series], dtype=np.float64)
    smoothed = np.convolve(rates, np.ones(points) / points, mode="valid")
    best = int(np.argmax(np.round(smoothed, 12)))
    return series[best]


# Iterated training ----------------------------------------------------------

class LineageEntry(BaseModel):
    name: str
    role: Literal["adversary", "victim"]
    iteration: int
    parent: Optional[str] = None
    checkpoint: Optional[str] = None
    total_rows: int = 0
    phase: Optional[str] = None
    stop_reason: Optional[str] = None
    win_rate: Optional[float] = None


class LineageReport(BaseModel):
    entries: List[LineageEntry] = Field(default_factory=list)
    completed_phases: List[str] = Field(default_factory=list)

    def latest(self, role: str) -> LineageEntry:
        return [e for e in self.entries if e.role == role][-1]

    def victims(self) -> Dict[str, str]:
        return {e.name: e.checkpoint for e in self.entries if e.role == "victim" and e.checkpoint}

    def adversaries(self) -> Dict[str, str]:
        return {e.name: e.checkpoint for e in self.entries if e.role == "adversary" and e.checkpoint}

    def ancestry(self, entry: LineageEntry) -> List[LineageEntry]:
        """The entry and its parents, oldest first"""
        by_name = {e.name: e for e in self.entries}
        chain = [entry]
        while chain[-1].parent is not None:
            parent = by_name.get(chain[-1].parent)
            if parent is None:
                raise DomainError(f"lineage entry {chain[-1].name} names unknown parent {chain[-1].parent}")
            chain.append(parent)
        return chain[::-1]

    def is_chain(self) -> bool:
        for role in ("victim", "adversary"):
            chain = [e for e in self.entries if e.role == role]
            for parent, child in zip(chain, chain[1:]):
                if child.parent != parent.name or child.iteration != parent.iteration + 1:
                    return False
        return True

    def save(self, path: Path):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.model_dump_json(indent=2))
        except OSError as e:
            raise StorageError(f"cannot write lineage {path}: {e}") from e

    @classmethod
    def load(cls, path: Path) -> "LineageReport":
        try:
            return cls.model_validate_json(Path(path).read_text())
        except OSError as e:
            raise StorageError(f"cannot read lineage {path}: {e}") from e


def reset_phase_outputs(output_dir: Path, phase: str):
    """Drop partial files of a phase that is about to be rerun"""
    for sub in ("segments", "games", "checkpoints"):
        directory = output_dir / sub
        if directory.exists():
            for path in directory.glob(f"{phase}_*"):
                path.unlink()
    state = output_dir / "state" / f"{phase}.json"
    if state.exists():
        state.unlink()


def _warm_window(output_dir: Path, lineage: List[LineageEntry], m0: int) -> DataWindow:
    """Seed from the newest rows along the whole lineage, reading phases newest first until full"""
    parent = lineage[-1]
    capacity = DataWindow(m0=m0, total_rows=parent.total_rows).capacity
    rows: List[Any] = []
    for entry in reversed(lineage):
        if len(rows) >= capacity:
            break
        if entry.phase:
            rows = load_segments(output_dir / "segments", entry.phase) + rows
    return warm_start(DataWindow(m0=m0), rows, parent.total_rows)


def _pick(result: PhaseResult) -> CheckpointRecord:
    try:
        return select_checkpoint(result.checkpoints)
    except InsufficientData:
        return result.checkpoints[-1]


def run_iterated(plan: IterationPlan, seed_victim: str, seed_adversary: str, iterations: int,
                 output_dir: Path, seed: int = 0, workers: int = 1) -> LineageReport:
    """Alternate defense and attack phases; each agent is fine-tuned from its own previous iteration"""
    output_dir = Path(output_dir)
    lineage_path = output_dir / "lineage.json"
    if lineage_path.exists():
        report = LineageReport.load(lineage_path)
        logger.info("Resuming iterated training", completed=report.completed_phases)
    else:
        report = LineageReport(entries=[
            LineageEntry(name="victim0", role="victim", iteration=0, checkpoint=seed_victim),
            LineageEntry(name="adversary0", role="adversary", iteration=0, checkpoint=seed_adversary),
        ])
        report.save(lineage_path)

    for n in range(1, iterations + 1):
        for role in ("victim", "adversary"):
            name = phase_name(role, n)
            if name in report.completed_phases:
                continue
            reset_phase_outputs(output_dir, name)
            parent = report.latest(role)
            opponent = report.latest("adversary" if role == "victim" else "victim")
            params = nnet.load_checkpoint(parent.checkpoint)
            frozen = nnet.load_checkpoint(opponent.checkpoint)
            window = _warm_window(output_dir, report.ancestry(parent), plan.training.m0)
            context = PhaseContext(output_dir=output_dir, iteration=n, seed=seed, workers=workers, window=window)
            if role == "victim":
                result = run_defense_iteration(params, frozen, plan, plan.defense_budget.model_copy(), context)
            else:
                result = run_attack_iteration(params, frozen, plan, plan.attack_budget.model_copy(), context)
            chosen = _pick(result)
            report.entries.append(LineageEntry(
                name=f"{role}{n}", role=role, iteration=n, parent=parent.name, checkpoint=chosen.path,
                total_rows=result.window.total_rows, phase=name, stop_reason=result.stop_reason,
                win_rate=chosen.win_rate,
            ))
            report.completed_phases.append(name)
            report.save(lineage_path)
            logger.info("Phase completed", phase=name, chosen=chosen.path, win_rate=chosen.win_rate,
                        total_rows=result.window.total_rows)
    return report


def write_run_manifest(path: Path, plan: IterationPlan, seed: int, extra: Optional[Dict[str, Any]] = None):
    manifest = {"seed": seed, "plan": json.loads(plan.model_dump_json())}
    manifest.update(extra or {})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as e:
        raise StorageError(f"cannot write manifest {path}: {e}") from e
