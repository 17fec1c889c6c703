"""
Adversarial Go Lab - Rules Engine
Tromp-Taylor rules on square boards 5x5..19x19 with positional superko,
suicide forbidden, and Benson pass-alive analysis
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import structlog

from utils.errors import GameOver, IllegalMove, OccupiedVertex, SuicideMove, SuperkoViolation

logger = structlog.get_logger(__name__)

EMPTY, BLACK, WHITE = 0, 1, 2
COLOR_NAMES = {BLACK: "black", WHITE: "white"}

MIN_SIZE = 5
MAX_SIZE = 19
DEFAULT_KOMI = 7.5

# Fixed seed so position hashes agree across runs and platforms
ZOBRIST_SEED = 0x5EED_60_0D

Vertex = Tuple[int, int]


def opponent(color: int) -> int:
    return 3 - color


@dataclass(frozen=True)
class Move:
    """A play at (row, col), row 0 at the top, or a pass when vertex is None"""

    vertex: Optional[Vertex] = None

    @classmethod
    def play(cls, row: int, col: int) -> "Move":
        return cls((row, col))

    @classmethod
    def pass_move(cls) -> "Move":
        return cls(None)

    @property
    def is_pass(self) -> bool:
        return self.vertex is None

    @property
    def kind(self) -> str:
        return "pass" if self.vertex is None else "play"

    def index(self, size: int) -> int:
        """Policy index: row-major plays, then pass at size*size"""
        if self.vertex is None:
            return size * size
        return self.vertex[0] * size + self.vertex[1]

    @classmethod
    def from_index(cls, index: int, size: int) -> "Move":
        if index == size * size:
            return PASS
        return cls((index // size, index % size))

    def __str__(self) -> str:
        return "pass" if self.vertex is None else f"({self.vertex[0]},{self.vertex[1]})"


PASS = Move(None)


@dataclass(frozen=True)
class ScoreResult:
    """Tromp-Taylor area score; winner None only for an exact tie under integral komi"""

    black_points: float
    white_points: float
    neutral_points: int
    winner: Optional[int]
    margin: float

    def outcome_for(self, color: int) -> float:
        """+1 win, -1 loss, 0 tie from the perspective of `color`"""
        if self.winner is None:
            return 0.0
        return 1.0 if self.winner == color else -1.0


# Board geometry -------------------------------------------------------------

@lru_cache(maxsize=None)
def neighbor_table(size: int) -> Tuple[Tuple[int, ...], ...]:
    """Orthogonal neighbors of every flat vertex index"""
    table = []
    for idx in range(size * size):
        row, col = divmod(idx, size)
        nbrs = []
        if row > 0:
            nbrs.append(idx - size)
        if row < size - 1:
            nbrs.append(idx + size)
        if col > 0:
            nbrs.append(idx - 1)
        if col < size - 1:
            nbrs.append(idx + 1)
        table.append(tuple(nbrs))
    return tuple(table)


@lru_cache(maxsize=1)
def _zobrist_tables() -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(ZOBRIST_SEED)
    top = np.iinfo(np.uint64).max
    stones = rng.integers(0, top, size=(3, MAX_SIZE * MAX_SIZE), dtype=np.uint64, endpoint=True)
    sizes = rng.integers(0, top, size=MAX_SIZE + 1, dtype=np.uint64, endpoint=True)
    return stones, sizes


@lru_cache(maxsize=None)
def _zobrist_for(size: int) -> Tuple[int, Tuple[Tuple[int, ...], ...]]:
    """(size key, per-color per-flat-index keys) for one board size"""
    stones, sizes = _zobrist_tables()
    keys = []
    for color in (EMPTY, BLACK, WHITE):
        keys.append(tuple(
            int(stones[color, (idx // size) * MAX_SIZE + idx % size]) if color != EMPTY else 0
            for idx in range(size * size)
        ))
    return int(sizes[size]), tuple(keys)


def compute_hash(size: int, grid: Sequence[int]) -> int:
    """64-bit hash of (size, grid) recomputed from scratch"""
    size_key, keys = _zobrist_for(size)
    h = size_key
    for idx, color in enumerate(grid):
        if color != EMPTY:
            h ^= keys[color][idx]
    return h


def _flood_chain(grid: Sequence[int], start: int, nbrs) -> Tuple[Set[int], Set[int]]:
    """Stones of the chain containing `start` and its liberties"""
    color = grid[start]
    stones = {start}
    liberties: Set[int] = set()
    stack = [start]
    while stack:
        v = stack.pop()
        for n in nbrs[v]:
            c = grid[n]
            if c == color:
                if n not in stones:
                    stones.add(n)
                    stack.append(n)
            elif c == EMPTY:
                liberties.add(n)
    return stones, liberties


# State ----------------------------------------------------------------------

class BoardState:
    """Immutable Go position; successor states come from apply_move"""

    __slots__ = (
        "size", "grid", "to_move", "komi", "consecutive_passes",
        "position_hashes", "move_count", "last_moves", "_hash_set",
    )

    def __init__(self,
                 size: int,
                 grid: Tuple[int, ...],
                 to_move: int,
                 komi: float,
                 consecutive_passes: int,
                 position_hashes: Tuple[int, ...],
                 move_count: int,
                 last_moves: Tuple[Move, ...] = (),
                 hash_set: Optional[FrozenSet[int]] = None):
        self.size = size
        self.grid = grid
        self.to_move = to_move
        self.komi = komi
        self.consecutive_passes = consecutive_passes
        self.position_hashes = position_hashes
        self.move_count = move_count
        # Most recent move last; at most two kept
        self.last_moves = last_moves
        self._hash_set = hash_set if hash_set is not None else frozenset(position_hashes)

    @property
    def hash(self) -> int:
        return self.position_hashes[-1]

    @property
    def is_over(self) -> bool:
        return self.consecutive_passes >= 2

    @property
    def area(self) -> int:
        return self.size * self.size

    def seen(self, position_hash: int) -> bool:
        return position_hash in self._hash_set

    def at(self, row: int, col: int) -> int:
        return self.grid[row * self.size + col]

    def to_array(self) -> np.ndarray:
        return np.asarray(self.grid, dtype=np.int8).reshape(self.size, self.size)

    def stones(self, color: int) -> FrozenSet[Vertex]:
        size = self.size
        return frozenset(divmod(i, size) for i, c in enumerate(self.grid) if c == color)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoardState):
            return NotImplemented
        return (self.size == other.size and self.grid == other.grid and self.to_move == other.to_move
                and self.komi == other.komi and self.consecutive_passes == other.consecutive_passes
                and self.position_hashes == other.position_hashes and self.move_count == other.move_count)

    def __hash__(self) -> int:
        return hash((self.hash, self.to_move, self.consecutive_passes, self.move_count))

    def __repr__(self) -> str:
        return (f"BoardState(size={self.size}, to_move={COLOR_NAMES[self.to_move]}, "
                f"moves={self.move_count}, passes={self.consecutive_passes})")

    def render(self) -> str:
        symbols = {EMPTY: ".", BLACK: "X", WHITE: "O"}
        rows = []
        for r in range(self.size):
            rows.append(" ".join(symbols[self.grid[r * self.size + c]] for c in range(self.size)))
        return "\n".join(rows)


def _check_size(size: int):
    if not MIN_SIZE <= size <= MAX_SIZE:
        raise IllegalMove(f"board size {size} outside {MIN_SIZE}..{MAX_SIZE}")


def new_game(size: int, komi: float = DEFAULT_KOMI, to_move: int = BLACK) -> BoardState:
    """Empty board with black to move"""
    _check_size(size)
    grid = (EMPTY,) * (size * size)
    return BoardState(size, grid, to_move, komi, 0, (compute_hash(size, grid),), 0)


def from_array(array, to_move: int = BLACK, komi: float = DEFAULT_KOMI,
               history: Iterable[int] = ()) -> BoardState:
    """Build a position from a size x size array of EMPTY/BLACK/WHITE.

    `history` supplies earlier position hashes for superko; the current
    grid's hash is appended last.
    """
    array = np.asarray(array, dtype=np.int64)
    size = array.shape[0]
    _check_size(size)
    if array.shape != (size, size):
        raise IllegalMove("board must be square")
    grid = tuple(int(x) for x in array.reshape(-1))
    nbrs = neighbor_table(size)
    seen: Set[int] = set()
    for idx, color in enumerate(grid):
        if color != EMPTY and idx not in seen:
            stones, libs = _flood_chain(grid, idx, nbrs)
            if not libs:
                raise IllegalMove("position contains a chain without liberties")
            seen |= stones
    current = compute_hash(size, grid)
    hashes = tuple(h for h in history if h != current) + (current,)
    return BoardState(size, grid, to_move, komi, 0, hashes, 0)


def with_to_move(state: BoardState, color: int) -> BoardState:
    """Same position with a different side to move"""
    return BoardState(state.size, state.grid, color, state.komi, state.consecutive_passes,
                      state.position_hashes, state.move_count, state.last_moves, state._hash_set)


# Moves ----------------------------------------------------------------------

@dataclass(frozen=True)
class PlayOutcome:
    grid: Tuple[int, ...]
    position_hash: int
    captured: Tuple[int, ...]


def _vertex_index(state: BoardState, move: Move) -> int:
    row, col = move.vertex
    if not (0 <= row < state.size and 0 <= col < state.size):
        raise IllegalMove(f"vertex {move} is off a {state.size}x{state.size} board")
    return row * state.size + col


def _play(state: BoardState, idx: int) -> PlayOutcome:
    """Place a stone for the side to move; raises OccupiedVertex or SuicideMove"""
    if state.grid[idx] != EMPTY:
        raise OccupiedVertex(f"vertex {divmod(idx, state.size)} is occupied")
    color = state.to_move
    opp = opponent(color)
    nbrs = neighbor_table(state.size)
    _, keys = _zobrist_for(state.size)

    grid = list(state.grid)
    grid[idx] = color
    h = state.hash ^ keys[color][idx]
    captured: List[int] = []
    for n in nbrs[idx]:
        if grid[n] == opp:
            stones, libs = _flood_chain(grid, n, nbrs)
            if not libs:
                for s in stones:
                    grid[s] = EMPTY
                    h ^= keys[opp][s]
                captured.extend(sorted(stones))
    if not captured:
        _, libs = _flood_chain(grid, idx, nbrs)
        if not libs:
            raise SuicideMove(f"vertex {divmod(idx, state.size)} is suicide")
    return PlayOutcome(tuple(grid), h, tuple(captured))


def play_outcome(state: BoardState, move: Move) -> PlayOutcome:
    """Resulting grid, hash and captured stones of a play, with superko checked"""
    if state.is_over:
        raise GameOver("game already ended with two passes")
    outcome = _play(state, _vertex_index(state, move))
    if state.seen(outcome.position_hash):
        raise SuperkoViolation(f"{move} repeats an earlier position")
    return outcome


def _recent(state: BoardState, move: Move) -> Tuple[Move, ...]:
    return (state.last_moves + (move,))[-2:]


def apply_move(state: BoardState, move: Move) -> BoardState:
    """Successor state after `move`, or an IllegalMove/GameOver error"""
    if state.is_over:
        raise GameOver("game already ended with two passes")
    if move.is_pass:
        return BoardState(state.size, state.grid, opponent(state.to_move), state.komi,
                          state.consecutive_passes + 1, state.position_hashes,
                          state.move_count + 1, _recent(state, move), state._hash_set)
    outcome = play_outcome(state, move)
    return BoardState(state.size, outcome.grid, opponent(state.to_move), state.komi, 0,
                      state.position_hashes + (outcome.position_hash,), state.move_count + 1,
                      _recent(state, move), state._hash_set | {outcome.position_hash})


def captured_by(state: BoardState, move: Move) -> Tuple[Vertex, ...]:
    """Vertices captured by a legal play (empty for pass)"""
    if move.is_pass:
        return ()
    return tuple(divmod(i, state.size) for i in play_outcome(state, move).captured)


def is_legal(state: BoardState, move: Move) -> bool:
    try:
        if move.is_pass:
            return not state.is_over
        play_outcome(state, move)
        return True
    except IllegalMove:
        return False


def legal_moves(state: BoardState) -> List[Move]:
    """All moves apply_move accepts, plays in row-major order then pass"""
    if state.is_over:
        raise GameOver("game already ended with two passes")
    moves = []
    size = state.size
    for idx, color in enumerate(state.grid):
        if color != EMPTY:
            continue
        try:
            outcome = _play(state, idx)
        except IllegalMove:
            continue
        if not state.seen(outcome.position_hash):
            moves.append(Move(divmod(idx, size)))
    moves.append(PASS)
    return moves


def legal_mask(state: BoardState) -> np.ndarray:
    """Boolean vector over policy indices (area + 1)"""
    mask = np.zeros(state.area + 1, dtype=bool)
    for move in legal_moves(state):
        mask[move.index(state.size)] = True
    return mask


def superko_vertices(state: BoardState) -> List[Vertex]:
    """Empty vertices whose play fails only because of positional superko"""
    result = []
    for idx, color in enumerate(state.grid):
        if color != EMPTY:
            continue
        try:
            outcome = _play(state, idx)
        except IllegalMove:
            continue
        if state.seen(outcome.position_hash):
            result.append(divmod(idx, state.size))
    return result


def position_hash(state: BoardState) -> int:
    """Deterministic 64-bit hash of (size, grid)"""
    return compute_hash(state.size, state.grid)


# Chains and scoring ---------------------------------------------------------

def chains(state: BoardState) -> List[Tuple[int, FrozenSet[int], FrozenSet[int]]]:
    """(color, stones, liberties) for every chain, as flat indices"""
    nbrs = neighbor_table(state.size)
    seen: Set[int] = set()
    result = []
    for idx, color in enumerate(state.grid):
        if color == EMPTY or idx in seen:
            continue
        stones, libs = _flood_chain(state.grid, idx, nbrs)
        seen |= stones
        result.append((color, frozenset(stones), frozenset(libs)))
    return result


def liberty_map(state: BoardState) -> np.ndarray:
    """Per-vertex liberty count of the chain occupying it (0 on empty points)"""
    counts = np.zeros(state.area, dtype=np.int64)
    for _, stones, libs in chains(state):
        for s in stones:
            counts[s] = len(libs)
    return counts.reshape(state.size, state.size)


def _regions(grid: Sequence[int], nbrs, member) -> List[Tuple[Set[int], Set[int]]]:
    """Connected components of vertices satisfying `member`, with their border vertices"""
    seen: Set[int] = set()
    regions = []
    for idx in range(len(grid)):
        if idx in seen or not member(grid[idx]):
            continue
        region = {idx}
        border: Set[int] = set()
        stack = [idx]
        while stack:
            v = stack.pop()
            for n in nbrs[v]:
                if member(grid[n]):
                    if n not in region:
                        region.add(n)
                        stack.append(n)
                else:
                    border.add(n)
        seen |= region
        regions.append((region, border))
    return regions


def score_tromp_taylor(state: BoardState) -> ScoreResult:
    """Stones plus empty regions reaching only one color; komi to white"""
    nbrs = neighbor_table(state.size)
    grid = state.grid
    black = sum(1 for c in grid if c == BLACK)
    white = sum(1 for c in grid if c == WHITE)
    neutral = 0
    for region, border in _regions(grid, nbrs, lambda c: c == EMPTY):
        colors = {grid[b] for b in border}
        if colors == {BLACK}:
            black += len(region)
        elif colors == {WHITE}:
            white += len(region)
        else:
            neutral += len(region)
    white_points = white + state.komi
    if black > white_points:
        winner: Optional[int] = BLACK
    elif white_points > black:
        winner = WHITE
    else:
        winner = None
    return ScoreResult(float(black), float(white_points), neutral, winner, abs(black - white_points))


# Benson pass-alive ----------------------------------------------------------

def pass_alive_regions(state: BoardState, color: int) -> FrozenSet[Vertex]:
    """Unconditionally alive chains of `color` plus the regions vital to them.

    Regions are the maximal components of non-`color` vertices. A region is
    vital to a chain when every empty vertex in it is a liberty of that chain.
    Chains with fewer than two vital regions are dropped, then regions bordered
    by a dropped chain, until nothing changes.
    """
    size = state.size
    grid = state.grid
    nbrs = neighbor_table(size)

    chain_of: Dict[int, int] = {}
    chain_stones: List[FrozenSet[int]] = []
    chain_libs: List[FrozenSet[int]] = []
    for c, stones, libs in chains(state):
        if c != color:
            continue
        cid = len(chain_stones)
        chain_stones.append(stones)
        chain_libs.append(libs)
        for s in stones:
            chain_of[s] = cid
    if not chain_stones:
        return frozenset()

    regions = []
    for region, border in _regions(grid, nbrs, lambda c: c != color):
        empties = frozenset(v for v in region if grid[v] == EMPTY)
        bordering = frozenset(chain_of[b] for b in border)
        vital_to = frozenset(cid for cid in bordering if empties <= chain_libs[cid])
        regions.append((frozenset(region), bordering, vital_to))

    alive = set(range(len(chain_stones)))
    live_regions = list(range(len(regions)))
    while True:
        vital_count = {cid: 0 for cid in alive}
        for rid in live_regions:
            for cid in regions[rid][2]:
                if cid in vital_count:
                    vital_count[cid] += 1
        next_alive = {cid for cid, n in vital_count.items() if n >= 2}
        next_regions = [rid for rid in live_regions if regions[rid][1] <= next_alive]
        if next_alive == alive and next_regions == live_regions:
            break
        alive, live_regions = next_alive, next_regions

    result: Set[int] = set()
    for cid in alive:
        result |= chain_stones[cid]
    for rid in live_regions:
        region, _, vital_to = regions[rid]
        if vital_to & alive:
            result |= region
    return frozenset(divmod(v, size) for v in result)


def unsettled_vacant_regions(state: BoardState) -> List[FrozenSet[Vertex]]:
    """Connected empty regions outside both colors' pass-alive areas"""
    settled = pass_alive_regions(state, BLACK) | pass_alive_regions(state, WHITE)
    size = state.size
    settled_idx = {r * size + c for r, c in settled}
    nbrs = neighbor_table(size)
    open_grid = [1 if (c == EMPTY and i not in settled_idx) else 0 for i, c in enumerate(state.grid)]
    return [frozenset(divmod(v, size) for v in region)
            for region, _ in _regions(open_grid, nbrs, lambda c: c == 1)]
