"""
Adversarial Go Lab - Game Analysis
SGF I/O and the cyclic-capture heatmap pipeline
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from api.services.features import D4_ELEMENTS, transform_vertex
from api.services.rules import (
    BLACK,
    EMPTY,
    WHITE,
    BoardState,
    Move,
    Vertex,
    apply_move,
    chains,
    neighbor_table,
    new_game,
    opponent,
    with_to_move,
)
from utils.errors import DomainError, IllegalMove, MixedSizes, ParseError, ReplayError, StorageError

logger = structlog.get_logger(__name__)

Property = Tuple[str, List[str]]

MIN_CYCLE_SIZE = 6
HEATMAP_CATEGORIES = (
    "cyclic_group",
    "adversary_stones",
    "victim_other_stones",
    "interior_adversary",
    "interior_victim",
)


# SGF ------------------------------------------------------------------------

@dataclass
class SgfMove:
    color: int  # EMPTY for a node without a move
    move: Optional[Move] = None
    comment: Optional[str] = None
    extra: List[Property] = field(default_factory=list)
    order: List[str] = field(default_factory=list)  # identifiers as parsed; written back in this order


@dataclass
class SgfGame:
    root: List[Property] = field(default_factory=list)
    moves: List[SgfMove] = field(default_factory=list)

    @classmethod
    def new(cls, size: int, komi: float, rules: str = "Tromp-Taylor", black: str = "", white: str = "",
            result: Optional[str] = None) -> "SgfGame":
        root = [("GM", ["1"]), ("FF", ["4"]), ("SZ", [str(size)]), ("KM", [f"{komi:g}"]), ("RU", [rules])]
        if black:
            root.append(("PB", [black]))
        if white:
            root.append(("PW", [white]))
        if result is not None:
            root.append(("RE", [result]))
        return cls(root)

    def get(self, ident: str) -> Optional[str]:
        for key, values in self.root:
            if key == ident:
                return values[0] if values else ""
        return None

    def set_property(self, ident: str, value: str):
        for i, (key, _) in enumerate(self.root):
            if key == ident:
                self.root[i] = (ident, [value])
                return
        self.root.append((ident, [value]))

    @property
    def size(self) -> int:
        value = self.get("SZ")
        return int(value) if value else 19

    @property
    def komi(self) -> float:
        value = self.get("KM")
        return float(value) if value else 0.0

    @property
    def rules(self) -> Optional[str]:
        return self.get("RU")

    @property
    def black_player(self) -> Optional[str]:
        return self.get("PB")

    @property
    def white_player(self) -> Optional[str]:
        return self.get("PW")

    @property
    def result(self) -> Optional[str]:
        return self.get("RE")

    def winner(self) -> Optional[int]:
        result = (self.result or "").upper()
        if result.startswith("B+"):
            return BLACK
        if result.startswith("W+"):
            return WHITE
        return None


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("]", "\\]")


def _coord(move: Move) -> str:
    if move.is_pass:
        return ""
    row, col = move.vertex
    return chr(ord("a") + col) + chr(ord("a") + row)


def _parse_coord(value: str, size: int, line: int, column: int) -> Move:
    if value == "" or (value == "tt" and size <= 19):
        return Move(None)
    if len(value) != 2 or not value.isalpha():
        raise ParseError(f"bad move coordinate {value!r}", line, column)
    col = ord(value[0].lower()) - ord("a")
    row = ord(value[1].lower()) - ord("a")
    if not (0 <= row < size and 0 <= col < size):
        raise ParseError(f"coordinate {value!r} is off the board", line, column)
    return Move((row, col))


def _format_props(props: Iterable[Property]) -> str:
    return "".join(key + "".join(f"[{_escape(v)}]" for v in values) for key, values in props)


def _node_props(node: SgfMove) -> List[Property]:
    props: List[Property] = []
    if node.color != EMPTY:
        props.append(("B" if node.color == BLACK else "W", [_coord(node.move)]))
    if node.comment is not None:
        props.append(("C", [node.comment]))
    props.extend(node.extra)
    ordered: List[Property] = []
    for ident in node.order:
        for i, (key, _) in enumerate(props):
            if key == ident:
                ordered.append(props.pop(i))
                break
    return ordered + props


def write_sgf(game: SgfGame) -> str:
    parts = ["(;" + _format_props(game.root)]
    for node in game.moves:
        parts.append(";" + _format_props(_node_props(node)))
    return "\n".join(parts) + ")\n"


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.column = 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def advance(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.column = 1
        else:
            self.column += 1
        return ch

    def skip_space(self):
        while self.peek() and self.peek().isspace():
            self.advance()

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.line, self.column)

    def expect(self, ch: str):
        self.skip_space()
        if self.peek() != ch:
            raise self.error(f"expected {ch!r}, found {self.peek() or 'end of input'!r}")
        self.advance()

    def value(self) -> str:
        self.expect("[")
        chars = []
        while True:
            if not self.peek():
                raise self.error("unterminated property value")
            ch = self.advance()
            if ch == "\\":
                if not self.peek():
                    raise self.error("dangling escape")
                chars.append(self.advance())
            elif ch == "]":
                return "".join(chars)
            else:
                chars.append(ch)

    def node(self) -> List[Tuple[str, List[str], int, int]]:
        self.expect(";")
        props = []
        while True:
            self.skip_space()
            start_line, start_col = self.line, self.column
            ident = []
            while self.peek().isalpha() and self.peek().isupper():
                ident.append(self.advance())
            if not ident:
                if self.peek().isalpha():
                    raise self.error("property identifiers must be upper case")
                return props
            values = [self.value()]
            self.skip_space()
            while self.peek() == "[":
                values.append(self.value())
                self.skip_space()
            props.append(("".join(ident), values, start_line, start_col))

    def tree(self) -> list:
        """Nodes of a game tree's main line; later variations are parsed and dropped"""
        self.expect("(")
        nodes = []
        self.skip_space()
        while self.peek() == ";":
            nodes.append(self.node())
            self.skip_space()
        first = True
        while self.peek() == "(":
            branch = self.tree()
            if first:
                nodes.extend(branch)
                first = False
            self.skip_space()
        if not self.peek():
            raise self.error("unterminated game tree")
        self.expect(")")
        return nodes


def parse_sgf(text: str) -> SgfGame:
    """Main line of the first game tree"""
    scanner = _Scanner(text)
    nodes = scanner.tree()
    if not nodes:
        raise ParseError("game tree has no nodes", scanner.line, scanner.column)

    root_props = [(key, values) for key, values, _, _ in nodes[0]]
    game = SgfGame(root=root_props)
    size = game.size
    for raw in nodes[1:]:
        move_node = SgfMove(EMPTY)
        for key, values, line, column in raw:
            move_node.order.append(key)
            if key in ("B", "W") and move_node.color == EMPTY:
                move_node.color = BLACK if key == "B" else WHITE
                move_node.move = _parse_coord(values[0], size, line, column)
            elif key == "C" and move_node.comment is None:
                move_node.comment = values[0]
            else:
                move_node.extra.append((key, values))
        game.moves.append(move_node)
    return game


def load_sgf(path: Union[str, Path]) -> SgfGame:
    try:
        return parse_sgf(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e


def replay(game: SgfGame) -> List[BoardState]:
    """Positions before each move plus the final one"""
    for key in ("AB", "AW", "AE"):
        if game.get(key) is not None:
            raise ReplayError("setup stones are not supported", 0)
    try:
        state = new_game(game.size, game.komi)
    except IllegalMove as e:
        raise ReplayError(str(e), 0) from e
    states = [state]
    for i, node in enumerate(game.moves):
        if node.color == EMPTY:
            continue
        if state.to_move != node.color:
            state = with_to_move(state, node.color)
        try:
            state = apply_move(state, node.move)
        except IllegalMove as e:
            raise ReplayError(f"move {i + 1} is illegal: {e}", i) from e
        states.append(state)
    return states


# Cyclic captures ------------------------------------------------------------

@dataclass(frozen=True)
class CycleEvent:
    game_ref: str
    size: int
    capture_move_index: int
    captured_group: FrozenSet[Vertex]
    interior_region: FrozenSet[Vertex]
    interior_adversary: FrozenSet[Vertex]
    interior_victim: FrozenSet[Vertex]
    adversary_stones: FrozenSet[Vertex]
    victim_other_stones: FrozenSet[Vertex]
    normalization: int = 0

    def vertex_sets(self) -> Dict[str, FrozenSet[Vertex]]:
        return {
            "cyclic_group": self.captured_group,
            "adversary_stones": self.adversary_stones,
            "victim_other_stones": self.victim_other_stones,
            "interior_adversary": self.interior_adversary,
            "interior_victim": self.interior_victim,
        }


def enclosed_region(group: FrozenSet[Vertex], size: int) -> FrozenSet[Vertex]:
    """Vertices that cannot reach the edge without crossing `group`"""
    nbrs = neighbor_table(size)
    blocked = {r * size + c for r, c in group}
    edge = [i for i in range(size * size)
            if i not in blocked and (i // size in (0, size - 1) or i % size in (0, size - 1))]
    reached = set(edge)
    stack = list(edge)
    while stack:
        v = stack.pop()
        for n in nbrs[v]:
            if n not in blocked and n not in reached:
                reached.add(n)
                stack.append(n)
    return frozenset(divmod(i, size) for i in range(size * size) if i not in blocked and i not in reached)


def _captured_chains(state: BoardState, move: Move) -> List[FrozenSet[int]]:
    if move.is_pass:
        return []
    target = move.vertex[0] * state.size + move.vertex[1]
    victim = opponent(state.to_move)
    return [stones for color, stones, libs in chains(state) if color == victim and libs == {target}]


def detect_cycle_capture(game: SgfGame, victim: Optional[int] = None, game_ref: str = "",
                         min_size: int = MIN_CYCLE_SIZE) -> Optional[CycleEvent]:
    """Largest capture of a victim chain that encloses at least one adversary stone"""
    if victim is None:
        winner = game.winner()
        if winner is None:
            raise ReplayError("victim not given and the result names no winner", 0)
        victim = opponent(winner)
    adversary = opponent(victim)
    size = game.size
    states = replay(game)

    best: Optional[CycleEvent] = None
    ply = 0
    for index, node in enumerate(game.moves):
        if node.color == EMPTY:
            continue
        state = states[ply]
        ply += 1
        if node.color != adversary:
            continue
        if state.to_move != node.color:
            state = with_to_move(state, node.color)
        for stones in _captured_chains(state, node.move):
            if len(stones) < min_size or (best is not None and len(stones) <= len(best.captured_group)):
                continue
            group = frozenset(divmod(i, size) for i in stones)
            interior = enclosed_region(group, size)
            adversary_all = state.stones(adversary)
            victim_all = state.stones(victim)
            inside_adversary = interior & adversary_all
            if not inside_adversary:
                continue
            best = CycleEvent(
                game_ref=game_ref, size=size, capture_move_index=index, captured_group=group,
                interior_region=interior, interior_adversary=inside_adversary,
                interior_victim=interior & victim_all, adversary_stones=adversary_all,
                victim_other_stones=victim_all - group,
            )
    if best is not None:
        logger.debug("Cyclic capture found", game=game_ref, move_index=best.capture_move_index,
                     group_size=len(best.captured_group))
    return best


# Symmetry normalisation -----------------------------------------------------

def compose_elements(first: int, second: int, size: int) -> int:
    """Element equal to applying `first` then `second`"""
    marker = (0, 1)
    target = transform_vertex(transform_vertex(marker, size, first), size, second)
    for k in D4_ELEMENTS:
        if transform_vertex(marker, size, k) == target:
            return k
    raise DomainError("composition not found")


def _centroid(vertices: Iterable[Vertex]) -> Tuple[float, float]:
    points = np.array(list(vertices), dtype=np.float64)
    return float(points[:, 0].mean()), float(points[:, 1].mean())


def _in_canonical_region(centroid: Tuple[float, float], size: int) -> bool:
    half = (size - 1) / 2.0
    row, col = centroid
    eps = 1e-9
    return row <= half + eps and col <= half + eps and row <= col + eps


def transform_event(event: CycleEvent, k: int) -> CycleEvent:
    size = event.size

    def move(vertices: FrozenSet[Vertex]) -> FrozenSet[Vertex]:
        return frozenset(transform_vertex(v, size, k) for v in vertices)

    return replace(
        event,
        captured_group=move(event.captured_group),
        interior_region=move(event.interior_region),
        interior_adversary=move(event.interior_adversary),
        interior_victim=move(event.interior_victim),
        adversary_stones=move(event.adversary_stones),
        victim_other_stones=move(event.victim_other_stones),
        normalization=compose_elements(event.normalization, k, size),
    )


def normalize_symmetry(event: CycleEvent, size: Optional[int] = None) -> CycleEvent:
    """Lowest D4 element putting the group centroid top-left and on or above the main diagonal"""
    size = size or event.size
    for k in D4_ELEMENTS:
        centroid = _centroid(transform_vertex(v, size, k) for v in event.captured_group)
        if _in_canonical_region(centroid, size):
            return event if k == 0 else transform_event(event, k)
    raise DomainError("no symmetry places the centroid in the canonical region")


# Heatmaps -------------------------------------------------------------------

@dataclass
class Heatmap:
    size: int
    grids: Dict[str, np.ndarray]
    event_count: int = 0

    @classmethod
    def empty(cls, size: int) -> "Heatmap":
        return cls(size, {name: np.zeros((size, size), dtype=np.int64) for name in HEATMAP_CATEGORIES})


def accumulate_heatmaps(events: Sequence[CycleEvent], size: Optional[int] = None) -> Heatmap:
    sizes = {e.size for e in events}
    if size is not None:
        sizes.add(size)
    if len(sizes) > 1:
        raise MixedSizes(f"events span board sizes {sorted(sizes)}")
    if not sizes:
        raise DomainError("board size needed when there are no events")
    heatmap = Heatmap.empty(sizes.pop())
    for event in events:
        for name, vertices in event.vertex_sets().items():
            for row, col in vertices:
                heatmap.grids[name][row, col] += 1
        heatmap.event_count += 1
    return heatmap


def heatmap_difference(a: Heatmap, b: Heatmap, normalize: bool = False) -> Dict[str, np.ndarray]:
    """Per-category a - b, optionally as frequencies per event"""
    if a.size != b.size:
        raise MixedSizes(f"heatmaps are {a.size}x{a.size} and {b.size}x{b.size}")
    result = {}
    for name in HEATMAP_CATEGORIES:
        left = a.grids[name].astype(np.float64)
        right = b.grids[name].astype(np.float64)
        if normalize:
            left = left / max(a.event_count, 1)
            right = right / max(b.event_count, 1)
        result[name] = left - right
    return result


def _write_grid(grid: np.ndarray, path: Path):
    pd.DataFrame(grid, columns=[str(c) for c in range(grid.shape[1])]).to_csv(path, index=False)


def render_svg(grids: Dict[str, np.ndarray], cell: int = 16, gap: int = 24) -> str:
    """Grayscale panels side by side, darkest cell = largest magnitude"""
    panels = []
    x = gap
    size = next(iter(grids.values())).shape[0] if grids else 0
    for name, grid in grids.items():
        peak = float(np.abs(grid).max()) or 1.0
        rects = []
        for r in range(size):
            for c in range(size):
                shade = int(round(255 * (1.0 - abs(float(grid[r, c])) / peak)))
                rects.append(f'<rect x="{x + c * cell}" y="{gap + r * cell}" width="{cell}" height="{cell}" '
                             f'fill="rgb({shade},{shade},{shade})" stroke="#999" stroke-width="0.5"/>')
        panels.append(f'<text x="{x}" y="{gap - 6}" font-size="11" font-family="sans-serif">{name}</text>')
        panels.extend(rects)
        x += size * cell + gap
    width = x
    height = gap * 2 + size * cell
    body = "\n".join(panels)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def emit(heatmap: Heatmap, directory: Union[str, Path], prefix: str = "heatmap") -> List[Path]:
    """One CSV per category plus an SVG rendering of all five"""
    directory = Path(directory)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name in HEATMAP_CATEGORIES:
            path = directory / f"{prefix}_{name}.csv"
            _write_grid(heatmap.grids[name], path)
            written.append(path)
        svg = directory / f"{prefix}.svg"
        svg.write_text(render_svg(heatmap.grids))
        written.append(svg)
    except OSError as e:
        logger.error("Failed to write heatmaps", directory=str(directory), error=str(e))
        raise StorageError(f"cannot write heatmaps to {directory}: {e}") from e
    logger.info("Heatmaps written", directory=str(directory), events=heatmap.event_count)
    return written


def emit_difference(a: Heatmap, b: Heatmap, directory: Union[str, Path], prefix: str = "difference") -> List[Path]:
    """Raw and per-event-normalised differences"""
    directory = Path(directory)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for label, normalize in (("raw", False), ("normalized", True)):
            grids = heatmap_difference(a, b, normalize)
            for name, grid in grids.items():
                path = directory / f"{prefix}_{label}_{name}.csv"
                _write_grid(grid, path)
                written.append(path)
            svg = directory / f"{prefix}_{label}.svg"
            svg.write_text(render_svg(grids))
            written.append(svg)
    except OSError as e:
        raise StorageError(f"cannot write heatmap differences to {directory}: {e}") from e
    return written


def analyze_games(paths: Sequence[Union[str, Path]], victim: Optional[int] = None,
                  min_size: int = MIN_CYCLE_SIZE) -> List[CycleEvent]:
    """Normalised cyclic-capture events from SGF files; unreplayable games are logged and skipped"""
    events = []
    for path in paths:
        game = load_sgf(path)
        try:
            event = detect_cycle_capture(game, victim=victim, game_ref=str(path), min_size=min_size)
        except ReplayError as e:
            logger.warning("Skipping unreplayable game", path=str(path), error=str(e))
            continue
        if event is not None:
            events.append(normalize_symmetry(event))
    logger.info("Games analyzed", games=len(paths), events=len(events))
    return events
