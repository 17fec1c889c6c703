"""
Adversarial Go Lab - Feature Encoding
Spatial planes and global features from the mover's perspective
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from api.services.rules import (
    BLACK,
    EMPTY,
    WHITE,
    BoardState,
    Move,
    Vertex,
    from_array,
    liberty_map,
    opponent,
    superko_vertices,
)

NUM_PLANES = 8
NUM_GLOBALS = 4
KOMI_SCALE = 15.0

PLANE_NAMES = (
    "on_board",
    "own_stones",
    "opponent_stones",
    "liberties_1",
    "liberties_2",
    "liberties_3_plus",
    "last_move",
    "superko_illegal",
)
GLOBAL_NAMES = ("mover_komi", "last_move_pass", "second_last_move_pass", "to_move_is_black")


@dataclass
class SpatialPlanes:
    planes: np.ndarray  # (P, height, width) of 0/1

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass
class GlobalFeatures:
    values: np.ndarray  # (G,)


def encode(state: BoardState, pad_to: Optional[int] = None) -> Tuple[SpatialPlanes, GlobalFeatures]:
    """Encode a position; `pad_to` zero-pads the spatial dims to a larger board"""
    size = state.size
    dim = max(size, pad_to or size)
    planes = np.zeros((NUM_PLANES, dim, dim), dtype=np.float32)
    board = state.to_array()
    mover = state.to_move

    planes[0, :size, :size] = 1.0
    planes[1, :size, :size] = board == mover
    planes[2, :size, :size] = board == opponent(mover)

    libs = liberty_map(state)
    occupied = board != EMPTY
    planes[3, :size, :size] = occupied & (libs == 1)
    planes[4, :size, :size] = occupied & (libs == 2)
    planes[5, :size, :size] = occupied & (libs >= 3)

    if state.last_moves and not state.last_moves[-1].is_pass:
        row, col = state.last_moves[-1].vertex
        planes[6, row, col] = 1.0

    if not state.is_over:
        for row, col in superko_vertices(state):
            planes[7, row, col] = 1.0

    mover_komi = state.komi if mover == WHITE else -state.komi
    recent = state.last_moves
    globals_ = np.array([
        np.clip(mover_komi / KOMI_SCALE, -1.0, 1.0),
        1.0 if len(recent) >= 1 and recent[-1].is_pass else 0.0,
        1.0 if len(recent) >= 2 and recent[-2].is_pass else 0.0,
        1.0 if mover == BLACK else 0.0,
    ], dtype=np.float32)
    return SpatialPlanes(planes), GlobalFeatures(globals_)


def encode_batch(states: Sequence[BoardState]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack encodings of same-size states into (B, P, H, W) and (B, G)"""
    encoded = [encode(s) for s in states]
    return (np.stack([e[0].planes for e in encoded]),
            np.stack([e[1].values for e in encoded]))


# Dihedral symmetries --------------------------------------------------------
# Element k < 4 rotates k quarter turns (np.rot90 direction); k >= 4 rotates
# k - 4 quarter turns and then flips across the main diagonal.

D4_ELEMENTS = tuple(range(8))


def transform_vertex(vertex: Vertex, size: int, k: int) -> Vertex:
    row, col = vertex
    for _ in range(k % 4):
        row, col = size - 1 - col, row
    if k >= 4:
        row, col = col, row
    return row, col


def inverse_element(k: int) -> int:
    if k >= 4:
        return k
    return (4 - k) % 4


def transform_grid(grid: np.ndarray, k: int) -> np.ndarray:
    """Apply element k to the last two axes of an array"""
    out = np.rot90(grid, k % 4, axes=(-2, -1))
    if k >= 4:
        out = np.swapaxes(out, -2, -1)
    return np.ascontiguousarray(out)


def transform_policy(policy: np.ndarray, size: int, k: int) -> np.ndarray:
    """Permute an (area + 1) policy vector by element k; pass stays last"""
    plays = transform_grid(policy[:-1].reshape(size, size), k).reshape(-1)
    return np.concatenate([plays, policy[-1:]])


def transform_move(move: Move, size: int, k: int) -> Move:
    if move.is_pass:
        return move
    return Move(transform_vertex(move.vertex, size, k))


def symmetric_state(state: BoardState, k: int) -> BoardState:
    """The position under element k; superko history is not carried over"""
    transformed = from_array(transform_grid(state.to_array(), k), to_move=state.to_move, komi=state.komi)
    return _with_recent(transformed, tuple(transform_move(m, state.size, k) for m in state.last_moves))


def color_swapped_state(state: BoardState) -> BoardState:
    """Swap every stone color and the side to move; komi changes sign"""
    board = state.to_array()
    swapped = np.where(board == BLACK, WHITE, np.where(board == WHITE, BLACK, EMPTY))
    mirrored = from_array(swapped, to_move=opponent(state.to_move), komi=-state.komi)
    return _with_recent(mirrored, state.last_moves)


def _with_recent(state: BoardState, last_moves: Tuple[Move, ...]) -> BoardState:
    return BoardState(state.size, state.grid, state.to_move, state.komi, state.consecutive_passes,
                      state.position_hashes, state.move_count, last_moves)


def feature_names() -> List[str]:
    return list(PLANE_NAMES) + list(GLOBAL_NAMES)
