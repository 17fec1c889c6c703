"""
Adversarial Go Lab - Game Generation
Self-play and victim-play games, training rows, the sliding data window,
and the on-disk data segments
"""

import json
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, Iterable, Iterator, List, Literal, Optional, Sequence, Union

import numpy as np
import structlog
import torch
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator

from api.services.analysis import SgfGame, SgfMove, write_sgf
from api.services.features import NUM_GLOBALS, NUM_PLANES, encode
from api.services.nnet import TrainingBatch, BatchGroup
from api.services.rules import (
    BLACK,
    COLOR_NAMES,
    MAX_SIZE,
    MIN_SIZE,
    WHITE,
    BoardState,
    Move,
    apply_move,
    new_game,
    opponent,
    score_tromp_taylor,
    unsettled_vacant_regions,
)
from api.services.search import SearchConfig, SearchResult, run_amcts, run_mcts
from utils.config import PublishedConstants
from utils.errors import ConfigError, DomainError, EmptyWindow, StorageError

logger = structlog.get_logger(__name__)

PASS_ALIVE_VACANCY_LIMIT = 4


# Window sizing --------------------------------------------------------------

def window_size(total_rows: float, m0: float) -> int:
    """Power-law window: (0.4 m0^0.35 / 0.65)(N^0.65 - m0^0.65) + m0"""
    if m0 <= 0:
        raise DomainError(f"m0 must be positive, got {m0}")
    if total_rows < m0:
        raise DomainError(f"N={total_rows} is below m0={m0}")
    scale = 0.4 * m0 ** 0.35 / 0.65
    return int(round(scale * (total_rows ** 0.65 - m0 ** 0.65) + m0))


# Board sizes and move limits ------------------------------------------------

def default_board_size_distribution() -> Dict[int, float]:
    total = sum(PublishedConstants.BOARD_SIZE_FREQUENCIES.values())
    return {size: pct / total for size, pct in PublishedConstants.BOARD_SIZE_FREQUENCIES.items()}


def restrict_distribution(table: Dict[int, float], min_size: int, max_size: int) -> Dict[int, float]:
    """Keep sizes in [min_size, max_size] and renormalise"""
    kept = {s: p for s, p in table.items() if min_size <= s <= max_size and p > 0}
    total = sum(kept.values())
    if total <= 0:
        raise ConfigError(f"no board sizes with mass in {min_size}..{max_size}")
    return {s: p / total for s, p in sorted(kept.items())}


def scale_distribution(table: Dict[int, float], sizes: Sequence[int]) -> Dict[int, float]:
    """Map a size table linearly onto a smaller range, snapping to the nearest allowed size"""
    sizes = sorted(sizes)
    lo, hi = min(table), max(table)
    out = {s: 0.0 for s in sizes}
    for size, p in table.items():
        pos = sizes[0] + (size - lo) / max(hi - lo, 1) * (sizes[-1] - sizes[0])
        nearest = min(sizes, key=lambda s: (abs(s - pos), -s))
        out[nearest] += p
    total = sum(out.values())
    return {s: p / total for s, p in out.items() if p > 0}


def sample_board_size(distribution: Dict[int, float], rng: np.random.Generator) -> int:
    sizes = sorted(distribution)
    probs = np.array([distribution[s] for s in sizes], dtype=np.float64)
    return int(sizes[rng.choice(len(sizes), p=probs / probs.sum())])


def move_limit(size: int, factor: float) -> int:
    return max(1, int(round(factor * size * size / 361.0)))


def is_adversarial_game(index: int, fraction: float) -> bool:
    """Low-discrepancy interleave: floor((i+1)f) > floor(i f)"""
    return math.floor((index + 1) * fraction) > math.floor(index * fraction)


# Config ---------------------------------------------------------------------

class GenConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["selfplay", "victimplay", "mixed"] = "victimplay"
    adversary_fraction: float = Field(default=PublishedConstants.DEFENSE_ADVERSARY_FRACTION, ge=0.0, le=1.0)
    adversary_visits: int = Field(default=32, ge=1)
    victim_visits: int = Field(default=1, ge=1)
    selfplay_visits: int = Field(default=16, ge=1)
    board_size_distribution: Dict[int, float] = Field(default_factory=lambda: {5: 0.5, 7: 0.5})
    komi: float = 7.5
    move_limit_factor: float = Field(default=PublishedConstants.REDUCED_MOVE_LIMIT_FACTOR, gt=0.0)
    move_limit_policy: Literal["score_as_is", "zero_score_loss", "utility"] = "utility"
    move_limit_utility: float = PublishedConstants.MOVE_LIMIT_UTILITY
    pass_alive_defense: Union[bool, Literal["auto"]] = "auto"

    @field_validator("board_size_distribution")
    @classmethod
    def _check_distribution(cls, value: Dict[int, float]) -> Dict[int, float]:
        if not value:
            raise ValueError("board_size_distribution is empty")
        for size, p in value.items():
            if not MIN_SIZE <= size <= MAX_SIZE:
                raise ValueError(f"board size {size} outside {MIN_SIZE}..{MAX_SIZE}")
            if p < 0:
                raise ValueError("probabilities must be non-negative")
        if abs(sum(value.values()) - 1.0) > 1e-6:
            raise ValueError("board_size_distribution must sum to 1")
        return value

    def pass_alive_defense_active(self) -> bool:
        if self.pass_alive_defense == "auto":
            return self.victim_visits < PublishedConstants.PASS_ALIVE_DEFENSE_BELOW_VISITS
        return bool(self.pass_alive_defense)


# Agents ---------------------------------------------------------------------

@dataclass
class Agent:
    """A network plus search settings; `victim_net` switches the agent to A-MCTS"""

    name: str
    net: Any
    search: SearchConfig
    victim_net: Any = None

    @property
    def is_adversary(self) -> bool:
        return self.victim_net is not None

    def think(self, state: BoardState, seed: int = 0, forbid_pass: bool = False) -> SearchResult:
        config = self.search.model_copy(update={"deterministic_seed": seed})
        if self.victim_net is not None:
            return run_amcts(state, self.net, self.victim_net, config, forbid_pass=forbid_pass)
        return run_mcts(state, self.net, config, forbid_pass=forbid_pass)

    def with_visits(self, visits: int) -> "Agent":
        return Agent(self.name, self.net, self.search.model_copy(update={"visits": visits}), self.victim_net)


# Records and rows -----------------------------------------------------------

@dataclass
class GameRecord:
    size: int
    komi: float
    moves: List[Move] = field(default_factory=list)
    policy_targets: List[np.ndarray] = field(default_factory=list)
    result: str = "draw"  # black | white | draw | move_limit
    winner: Optional[int] = None
    margin: float = 0.0
    utilities: Dict[int, float] = field(default_factory=dict)
    trainee_color: Optional[int] = None
    adversary_color: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def plies(self) -> int:
        return len(self.moves)

    @property
    def utility(self) -> float:
        """Utility for the trained side (black in self-play)"""
        return self.utilities.get(self.trainee_color if self.trainee_color is not None else BLACK, 0.0)

    def movers(self) -> List[int]:
        return [BLACK if i % 2 == 0 else WHITE for i in range(len(self.moves))]

    def to_sgf(self) -> SgfGame:
        if self.winner is None:
            result = "0"
        else:
            result = f"{'B' if self.winner == BLACK else 'W'}+{self.margin:g}"
        game = SgfGame.new(
            self.size, self.komi,
            black=self.metadata.get("black", ""), white=self.metadata.get("white", ""),
            result=result,
        )
        if self.result == "move_limit":
            game.set_property("C", "move_limit")
        for color, move in zip(self.movers(), self.moves):
            game.moves.append(SgfMove(color, move))
        return game

    def to_manifest(self) -> Dict[str, Any]:
        return {
            "size": self.size,
            "komi": self.komi,
            "moves": [m.index(self.size) for m in self.moves],
            "result": self.result,
            "winner": COLOR_NAMES.get(self.winner),
            "margin": self.margin,
            "utilities": {COLOR_NAMES[c]: u for c, u in self.utilities.items()},
            "trainee": COLOR_NAMES.get(self.trainee_color),
            "adversary": COLOR_NAMES.get(self.adversary_color),
            "metadata": self.metadata,
        }


@dataclass
class DataRow:
    size: int
    planes: np.ndarray  # uint8 (P, size, size)
    globals_: np.ndarray
    policy_target: np.ndarray  # (area + 1,)
    value_target: float
    weight: float = 1.0
    tag: int = 0


def to_rows(record: GameRecord, mode: str, tag: int = 0) -> List[DataRow]:
    """Training rows from the stored side's moves (both sides in self-play)"""
    rows = []
    state = new_game(record.size, record.komi)
    stored = None if mode == "selfplay" else record.trainee_color
    for mover, move, target in zip(record.movers(), record.moves, record.policy_targets):
        if stored is None or mover == stored:
            planes, globals_ = encode(state)
            rows.append(DataRow(
                size=record.size,
                planes=planes.planes.astype(np.uint8),
                globals_=globals_.values.astype(np.float32),
                policy_target=np.asarray(target, dtype=np.float32),
                value_target=float(record.utilities.get(mover, 0.0)),
                tag=tag,
            ))
        state = apply_move(state, move)
    return rows


# Game play ------------------------------------------------------------------

def _adversary_may_not_pass(state: BoardState) -> bool:
    return any(len(region) > PASS_ALIVE_VACANCY_LIMIT for region in unsettled_vacant_regions(state))


def _utilities(record: GameRecord, score, hit_limit: bool, genconfig: GenConfig) -> Dict[int, float]:
    outcome = {BLACK: score.outcome_for(BLACK), WHITE: score.outcome_for(WHITE)}
    if not hit_limit or genconfig.move_limit_policy == "score_as_is":
        return outcome
    if record.adversary_color is None:
        return {BLACK: 0.0, WHITE: 0.0}
    adversary_value = -1.0 if genconfig.move_limit_policy == "zero_score_loss" else genconfig.move_limit_utility
    return {record.adversary_color: adversary_value, opponent(record.adversary_color): 0.0}


def play_training_game(black: Agent, white: Agent, genconfig: GenConfig, rng: np.random.Generator,
                       trainee_color: Optional[int] = None, size: Optional[int] = None) -> GameRecord:
    """Play one game to two passes or the move limit and score it"""
    if black.is_adversary and white.is_adversary:
        raise ConfigError("at most one side may search with A-MCTS")
    adversary_color = BLACK if black.is_adversary else WHITE if white.is_adversary else None
    size = size or sample_board_size(genconfig.board_size_distribution, rng)
    seed = int(rng.integers(0, 2 ** 31 - 1))
    defense = adversary_color is not None and genconfig.pass_alive_defense_active()

    record = GameRecord(size=size, komi=genconfig.komi, trainee_color=trainee_color,
                        adversary_color=adversary_color,
                        metadata={"black": black.name, "white": white.name, "seed": seed,
                                  "black_visits": black.search.visits, "white_visits": white.search.visits})
    state = new_game(size, genconfig.komi)
    limit = move_limit(size, genconfig.move_limit_factor)
    while not state.is_over and state.move_count < limit:
        agent = black if state.to_move == BLACK else white
        forbid_pass = defense and state.to_move == adversary_color and _adversary_may_not_pass(state)
        result = agent.think(state, seed=seed, forbid_pass=forbid_pass)
        record.moves.append(result.chosen_move)
        record.policy_targets.append(result.visit_distribution.astype(np.float32))
        state = apply_move(state, result.chosen_move)

    hit_limit = not state.is_over
    score = score_tromp_taylor(state)
    record.winner = score.winner
    record.margin = score.margin
    if hit_limit:
        record.result = "move_limit"
    else:
        record.result = "draw" if score.winner is None else COLOR_NAMES[score.winner]
    record.utilities = _utilities(record, score, hit_limit, genconfig)
    return record


@dataclass
class GameTask:
    """Everything a worker needs to play one game"""

    index: int
    black: Agent
    white: Agent
    genconfig: GenConfig
    seed: Sequence[int]
    mode: str
    trainee_color: Optional[int] = None


def play_game_task(task: GameTask) -> GameRecord:
    torch.set_num_threads(1)
    rng = np.random.default_rng(list(task.seed))
    record = play_training_game(task.black, task.white, task.genconfig, rng, task.trainee_color)
    record.metadata.update({"index": task.index, "mode": task.mode, "task_seed": list(task.seed)})
    return record


# Data window ----------------------------------------------------------------

class DataWindow:
    """Most recent rows up to window_size(max(N, m0), m0); oldest evicted first"""

    def __init__(self, m0: int = PublishedConstants.WINDOW_M0, total_rows: int = 0):
        if m0 <= 0:
            raise DomainError("m0 must be positive")
        self.m0 = m0
        self.total_rows = total_rows
        self._rows: Deque[Any] = deque()
        self._lock = threading.RLock()

    @property
    def capacity(self) -> int:
        return window_size(max(self.total_rows, self.m0), self.m0)

    def __len__(self) -> int:
        with self._lock:
            return len(self._rows)

    def _evict(self):
        capacity = self.capacity
        while len(self._rows) > capacity:
            self._rows.popleft()

    def append(self, rows: Iterable[Any]) -> int:
        rows = list(rows)
        with self._lock:
            self._rows.extend(rows)
            self.total_rows += len(rows)
            self._evict()
        return len(rows)

    def snapshot(self) -> List[Any]:
        with self._lock:
            return list(self._rows)

    def tags(self) -> set:
        with self._lock:
            return {getattr(r, "tag", None) for r in self._rows}

    def get_stats(self) -> Dict[str, int]:
        with self._lock:
            return {"rows": len(self._rows), "total_rows": self.total_rows,
                    "capacity": self.capacity, "m0": self.m0}


def warm_start(window: DataWindow, history_rows: Iterable[Any], history_n: int) -> DataWindow:
    """Pre-seed an empty window with a parent's history count and its newest rows"""
    if len(window):
        raise DomainError("warm start requires an empty window")
    if history_n == 0:
        return window
    with window._lock:
        window.total_rows += history_n
        newest: Deque[Any] = deque(history_rows, maxlen=window.capacity)
        window._rows.extend(newest)
    logger.info("Window warm-started", history_n=history_n, rows=len(newest), capacity=window.capacity)
    return window


def sample_rows(window: DataWindow, count: int, rng: np.random.Generator) -> List[Any]:
    """Uniform draw with replacement from the current pool"""
    if count == 0:
        return []
    with window._lock:
        if not window._rows:
            raise EmptyWindow("cannot sample from an empty window")
        picks = rng.integers(0, len(window._rows), size=count)
        return [window._rows[int(i)] for i in picks]


def rows_to_batch(rows: Sequence[DataRow]) -> TrainingBatch:
    by_size: Dict[int, List[DataRow]] = {}
    for row in rows:
        by_size.setdefault(row.size, []).append(row)
    groups = []
    for size in sorted(by_size):
        group = by_size[size]
        groups.append(BatchGroup(
            planes=np.stack([r.planes for r in group]).astype(np.float32),
            globals_=np.stack([r.globals_ for r in group]),
            policy_targets=np.stack([r.policy_target for r in group]),
            value_targets=np.array([r.value_target for r in group], dtype=np.float32),
            weights=np.array([r.weight for r in group], dtype=np.float32),
        ))
    return TrainingBatch(groups)


def sample_batch(window: DataWindow, batch_size: int, rng: np.random.Generator) -> TrainingBatch:
    return rows_to_batch(sample_rows(window, batch_size, rng))


# Data segments --------------------------------------------------------------
# Append-only files, one per (phase, board size): a little-endian header
# followed by fixed-width rows.

SEGMENT_MAGIC = b"GLDS"
SEGMENT_VERSION = 1
HEADER_DTYPE = np.dtype([("magic", "S4"), ("version", "<u2"), ("board_size", "<u2"),
                         ("planes", "<u2"), ("globals", "<u2")])


def row_dtype(size: int) -> np.dtype:
    return np.dtype([
        ("planes", "u1", (NUM_PLANES, size, size)),
        ("globals", "<f4", (NUM_GLOBALS,)),
        ("policy", "<f4", (size * size + 1,)),
        ("value", "<f4"),
        ("weight", "<f4"),
        ("tag", "<i8"),
    ])


def append_segment(path: Path, rows: Sequence[DataRow]):
    if not rows:
        return
    size = rows[0].size
    records = np.zeros(len(rows), dtype=row_dtype(size))
    for i, row in enumerate(rows):
        if row.size != size:
            raise StorageError("a segment holds a single board size")
        records[i] = (row.planes, row.globals_, row.policy_target, row.value_target, row.weight, row.tag)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not path.exists()
        with path.open("ab") as handle:
            if fresh:
                header = np.array([(SEGMENT_MAGIC, SEGMENT_VERSION, size, NUM_PLANES, NUM_GLOBALS)], dtype=HEADER_DTYPE)
                handle.write(header.tobytes())
            handle.write(records.tobytes())
    except OSError as e:
        logger.error("Failed to append data segment", path=str(path), error=str(e))
        raise StorageError(f"cannot write {path}: {e}") from e


def read_segment(path: Path) -> List[DataRow]:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    if len(raw) < HEADER_DTYPE.itemsize:
        raise StorageError(f"{path} is too short for a segment header")
    header = np.frombuffer(raw[:HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    if header["magic"] != SEGMENT_MAGIC or header["version"] != SEGMENT_VERSION:
        raise StorageError(f"{path} is not a version {SEGMENT_VERSION} data segment")
    if header["planes"] != NUM_PLANES or header["globals"] != NUM_GLOBALS:
        raise StorageError(f"{path} was written with a different feature layout")
    size = int(header["board_size"])
    dtype = row_dtype(size)
    body = raw[HEADER_DTYPE.itemsize:]
    if len(body) % dtype.itemsize:
        raise StorageError(f"{path} ends with a partial row")
    records = np.frombuffer(body, dtype=dtype)
    return [DataRow(size, r["planes"].copy(), r["globals"].copy(), r["policy"].copy(),
                    float(r["value"]), float(r["weight"]), int(r["tag"])) for r in records]


# Generation service ---------------------------------------------------------

class GenerationService:
    """Farms games to workers and ingests finished records with a single writer"""

    def __init__(self, output_dir: Path, window: DataWindow, workers: int = 1, phase: str = "phase0", tag: int = 0):
        self.output_dir = Path(output_dir)
        self.window = window
        self.workers = max(1, workers)
        self.phase = phase
        self.tag = tag
        self.games_played = 0
        self.rows_written = 0

    def generate(self, tasks: Sequence[GameTask]) -> Iterator[GameRecord]:
        """Yield records in task order while their rows enter the window"""
        if self.workers == 1:
            results: Iterable[GameRecord] = (play_game_task(t) for t in tasks)
        else:
            results = Parallel(n_jobs=self.workers, return_as="generator")(delayed(play_game_task)(t) for t in tasks)
        for record in results:
            self.ingest(record)
            yield record

    def ingest(self, record: GameRecord):
        mode = record.metadata.get("mode", "victimplay")
        rows = to_rows(record, mode, tag=self.tag)
        self.window.append(rows)
        append_segment(self.output_dir / "segments" / f"{self.phase}_size{record.size}.bin", rows)
        index = record.metadata.get("index", self.games_played)
        games_dir = self.output_dir / "games"
        try:
            games_dir.mkdir(parents=True, exist_ok=True)
            (games_dir / f"{self.phase}_{index:06d}.sgf").write_text(write_sgf(record.to_sgf()))
            (games_dir / f"{self.phase}_{index:06d}.json").write_text(json.dumps(record.to_manifest(), indent=2))
        except OSError as e:
            logger.error("Failed to write game files", index=index, error=str(e))
            raise StorageError(f"cannot write game {index}: {e}") from e
        self.games_played += 1
        self.rows_written += len(rows)
        logger.debug("Game ingested", phase=self.phase, index=index, result=record.result, rows=len(rows))

    def get_stats(self) -> Dict[str, Any]:
        return {"phase": self.phase, "games_played": self.games_played,
                "rows_written": self.rows_written, "window": self.window.get_stats()}


def load_segments(directory: Path, phase_prefix: Optional[str] = None) -> List[DataRow]:
    """All rows under a segments directory, in file-name order"""
    rows: List[DataRow] = []
    for path in sorted(Path(directory).glob("*.bin")):
        if phase_prefix is None or path.name.startswith(phase_prefix):
            rows.extend(read_segment(path))
    return rows
