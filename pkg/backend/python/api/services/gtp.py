"""
Adversarial Go Lab - GTP Engine
A Go Text Protocol subset over line-oriented streams
"""

import re
from typing import Callable, Dict, List, Optional, TextIO, Tuple

import structlog

from api.services.rules import (
    BLACK,
    MAX_SIZE,
    MIN_SIZE,
    WHITE,
    BoardState,
    Move,
    apply_move,
    new_game,
    with_to_move,
)
from api.services.selfplay import Agent
from utils.errors import GoLabError, IllegalMove

logger = structlog.get_logger(__name__)

PROTOCOL_VERSION = "2"
COLUMNS = "ABCDEFGHJKLMNOPQRST"  # no I
COLORS = {"b": BLACK, "black": BLACK, "w": WHITE, "white": WHITE}


class GtpError(Exception):
    """Answered in-band as '? message'"""


def format_vertex(move: Move, size: int) -> str:
    if move.is_pass:
        return "pass"
    row, col = move.vertex
    return f"{COLUMNS[col]}{size - row}"


def parse_vertex(text: str, size: int) -> Move:
    text = text.strip().upper()
    if text == "PASS":
        return Move(None)
    match = re.fullmatch(r"([A-HJ-T])(\d{1,2})", text)
    if not match:
        raise GtpError("invalid vertex")
    col = COLUMNS.index(match.group(1))
    row = size - int(match.group(2))
    if not (0 <= row < size and 0 <= col < size):
        raise GtpError("invalid vertex")
    return Move((row, col))


def parse_color(text: str) -> int:
    try:
        return COLORS[text.lower()]
    except KeyError:
        raise GtpError("invalid color")


class GtpEngine:
    """Holds one game and answers commands for a single agent"""

    def __init__(self, agent: Agent, name: str = "golab", version: str = "1.0.0",
                 size: int = 19, komi: float = 7.5):
        self.agent = agent
        self.engine_name = name
        self.engine_version = version
        self.size = size
        self.komi = komi
        self.state = new_game(size, komi)
        self.history: List[Move] = []
        self.finished = False
        self.handlers: Dict[str, Callable[[List[str]], str]] = {
            "protocol_version": lambda args: PROTOCOL_VERSION,
            "name": lambda args: self.engine_name,
            "version": lambda args: self.engine_version,
            "boardsize": self.cmd_boardsize,
            "clear_board": self.cmd_clear_board,
            "komi": self.cmd_komi,
            "play": self.cmd_play,
            "genmove": self.cmd_genmove,
            "showboard": self.cmd_showboard,
            "list_commands": lambda args: "\n".join(self.handlers),
            "known_command": lambda args: "true" if args and args[0] in self.handlers else "false",
            "quit": lambda args: "",
        }

    # Commands ------------------------------------------------------------

    def cmd_boardsize(self, args: List[str]) -> str:
        try:
            size = int(args[0])
        except (IndexError, ValueError):
            raise GtpError("boardsize not an integer")
        if not MIN_SIZE <= size <= MAX_SIZE:
            raise GtpError("unacceptable size")
        self.size = size
        self.cmd_clear_board([])
        return ""

    def cmd_clear_board(self, args: List[str]) -> str:
        self.state = new_game(self.size, self.komi)
        self.history = []
        return ""

    def cmd_komi(self, args: List[str]) -> str:
        try:
            self.komi = float(args[0])
        except (IndexError, ValueError):
            raise GtpError("komi not a float")
        self.state = BoardState(self.state.size, self.state.grid, self.state.to_move, self.komi,
                                self.state.consecutive_passes, self.state.position_hashes,
                                self.state.move_count, self.state.last_moves)
        return ""

    def _for_color(self, color: int) -> BoardState:
        return self.state if self.state.to_move == color else with_to_move(self.state, color)

    def cmd_play(self, args: List[str]) -> str:
        if len(args) < 2:
            raise GtpError("syntax error")
        color = parse_color(args[0])
        move = parse_vertex(args[1], self.size)
        try:
            self.state = apply_move(self._for_color(color), move)
        except IllegalMove:
            raise GtpError("illegal move")
        except GoLabError as e:
            raise GtpError(str(e))
        self.history.append(move)
        return ""

    def cmd_genmove(self, args: List[str]) -> str:
        if not args:
            raise GtpError("syntax error")
        color = parse_color(args[0])
        state = self._for_color(color)
        if state.is_over:
            return "pass"
        result = self.agent.think(state, seed=state.move_count)
        move = result.chosen_move
        self.state = apply_move(state, move)
        self.history.append(move)
        logger.debug("Move generated", move=str(move), visits=result.root_visits, value=round(result.root_value, 3))
        return format_vertex(move, self.size)

    def cmd_showboard(self, args: List[str]) -> str:
        symbols = {0: ".", BLACK: "X", WHITE: "O"}
        header = "   " + " ".join(COLUMNS[: self.size])
        lines = [header]
        for row in range(self.size):
            cells = " ".join(symbols[self.state.at(row, col)] for col in range(self.size))
            lines.append(f"{self.size - row:2d} {cells}")
        lines.append(header)
        return "\n" + "\n".join(lines)

    # Framing -------------------------------------------------------------

    @staticmethod
    def preprocess(line: str) -> str:
        line = line.split("#", 1)[0]
        line = "".join(" " if ch == "\t" else ch for ch in line if ch == "\t" or ord(ch) >= 32)
        return line.strip()

    def handle(self, line: str) -> Optional[str]:
        """Full response for one input line, or None for blank lines"""
        line = self.preprocess(line)
        if not line:
            return None
        parts = line.split()
        command_id = ""
        if parts[0].isdigit():
            command_id = parts.pop(0)
            if not parts:
                return f"?{command_id} missing command\n\n"
        command, args = parts[0].lower(), parts[1:]
        if command == "quit":
            self.finished = True
        handler = self.handlers.get(command)
        if handler is None:
            return f"?{command_id} unknown command\n\n"
        try:
            response = handler(args)
        except GtpError as e:
            return f"?{command_id} {e}\n\n"
        except Exception as e:
            logger.error("GTP command failed", command=command, error=str(e))
            return f"?{command_id} internal error\n\n"
        return f"={command_id} {response}\n\n" if response else f"={command_id}\n\n"

    def serve(self, stdin: TextIO, stdout: TextIO):
        for line in stdin:
            response = self.handle(line)
            if response is None:
                continue
            stdout.write(response)
            stdout.flush()
            if self.finished:
                break


def run_session(engine: GtpEngine, commands: List[str]) -> List[Tuple[str, str]]:
    """Feed commands and collect (command, response) pairs"""
    transcript = []
    for command in commands:
        response = engine.handle(command)
        if response is not None:
            transcript.append((command, response))
        if engine.finished:
            break
    return transcript
