"""
Tests for SGF I/O and the cyclic-capture heatmap pipeline
"""

import numpy as np
import pandas as pd
import pytest

from api.services.analysis import (
    HEATMAP_CATEGORIES,
    CycleEvent,
    SgfGame,
    SgfMove,
    accumulate_heatmaps,
    analyze_games,
    compose_elements,
    detect_cycle_capture,
    emit,
    emit_difference,
    enclosed_region,
    heatmap_difference,
    normalize_symmetry,
    parse_sgf,
    replay,
    transform_event,
    write_sgf,
)
from api.services.features import D4_ELEMENTS, inverse_element
from api.services.rules import BLACK, PASS, WHITE, Move
from utils.errors import DomainError, MixedSizes, ParseError, ReplayError

RING = [(3, 3), (3, 4), (3, 5), (3, 6), (4, 6), (5, 6), (5, 5), (5, 4), (5, 3), (4, 3)]
ATTACK = [(4, 4), (2, 3), (2, 4), (2, 5), (2, 6), (3, 2), (4, 2), (5, 2), (3, 7), (4, 7),
          (5, 7), (6, 3), (6, 4), (6, 5), (6, 6), (4, 5)]


def interleave(black, white):
    """Alternate moves, white passing once it runs out"""
    moves = []
    for i, vertex in enumerate(black):
        moves.append(SgfMove(BLACK, Move.play(*vertex)))
        if i < len(black) - 1:
            moves.append(SgfMove(WHITE, Move.play(*white[i]) if i < len(white) else PASS))
    return moves


def ring_game(result="B+R"):
    """Black surrounds a ten-stone white ring holding a black stone inside, then captures it"""
    game = SgfGame.new(9, 7.5, black="adversary", white="victim", result=result)
    game.moves = interleave(ATTACK, RING)
    return game


def event(group, size=7, index=0):
    group = frozenset(group)
    return CycleEvent(game_ref="g", size=size, capture_move_index=index, captured_group=group,
                      interior_region=frozenset(), interior_adversary=frozenset(), interior_victim=frozenset(),
                      adversary_stones=frozenset({(6, 6)}), victim_other_stones=frozenset())


class TestSgf:
    def test_write_then_parse(self):
        game = SgfGame.new(7, 6.5, black="a]b", white="w")
        game.moves = [SgfMove(BLACK, Move.play(0, 1), comment="first"), SgfMove(WHITE, PASS)]
        parsed = parse_sgf(write_sgf(game))
        assert (parsed.size, parsed.komi, parsed.rules) == (7, 6.5, "Tromp-Taylor")
        assert parsed.black_player == "a]b"
        assert parsed.moves[0].move == Move.play(0, 1)
        assert parsed.moves[0].comment == "first"
        assert parsed.moves[1].move.is_pass

    def test_rewrite_keeps_property_order(self):
        text = ("(;GM[1]FF[4]SZ[5]KM[0.5]RU[Tromp-Taylor]\n"
                ";C[opening]B[ba]TR[aa][bb]\n"
                ";W[]C[pass]\n"
                ";BL[30]LB[cc:x]W[cc])\n")
        game = parse_sgf(text)
        assert game.moves[0].move == Move.play(0, 1)
        assert game.moves[2].color == WHITE
        assert write_sgf(game) == text
        assert write_sgf(parse_sgf(write_sgf(game))) == text

    def test_coordinates_are_column_then_row(self):
        game = parse_sgf("(;GM[1]SZ[9];B[ca];W[tt])")
        assert game.moves[0].move == Move.play(0, 2)
        assert game.moves[1].move.is_pass

    def test_first_variation_is_the_main_line(self):
        game = parse_sgf("(;SZ[9];B[aa](;W[bb];B[cc])(;W[dd]))")
        assert [m.move for m in game.moves] == [Move.play(0, 0), Move.play(1, 1), Move.play(2, 2)]

    def test_result_names_the_winner(self):
        assert parse_sgf("(;SZ[9]RE[W+3.5])").winner() == WHITE
        assert parse_sgf("(;SZ[9]RE[0])").winner() is None

    @pytest.mark.parametrize("text,line", [
        ("(;SZ[9];B[zz])", 1),
        ("(;SZ[9]\n;B[aa]", 2),
        ("(;SZ[9];B[aa", 1),
        ("(;SZ[9];b[aa])", 1),
        ("SZ[9]", 1),
    ])
    def test_malformed(self, text, line):
        with pytest.raises(ParseError) as info:
            parse_sgf(text)
        assert info.value.line == line
        assert info.value.column >= 1


class TestReplay:
    def test_positions_per_move(self):
        states = replay(ring_game())
        assert len(states) == len(ring_game().moves) + 1
        assert states[-1].at(4, 4) == BLACK
        assert all(states[-1].at(r, c) == 0 for r, c in RING)

    def test_illegal_move(self):
        game = SgfGame.new(9, 7.5)
        game.moves = [SgfMove(BLACK, Move.play(0, 0)), SgfMove(WHITE, Move.play(0, 0))]
        with pytest.raises(ReplayError) as info:
            replay(game)
        assert info.value.move_index == 1

    def test_setup_stones_rejected(self):
        with pytest.raises(ReplayError):
            replay(parse_sgf("(;SZ[9]AB[aa];W[bb])"))


class TestCycleCapture:
    def test_ring_capture_is_found(self):
        game = ring_game()
        found = detect_cycle_capture(game, victim=WHITE)
        assert found is not None
        assert found.captured_group == frozenset(RING)
        assert found.interior_region == frozenset({(4, 4), (4, 5)})
        assert found.interior_adversary == frozenset({(4, 4)})
        assert found.interior_victim == frozenset()
        assert found.capture_move_index == len(game.moves) - 1

    def test_victim_from_result(self):
        assert detect_cycle_capture(ring_game("B+R")) is not None
        with pytest.raises(ReplayError):
            detect_cycle_capture(ring_game("0"))

    def test_small_groups_ignored(self):
        assert detect_cycle_capture(ring_game(), victim=WHITE, min_size=11) is None

    def test_wrong_victim_finds_nothing(self):
        assert detect_cycle_capture(ring_game(), victim=BLACK) is None

    def test_enclosed_region(self):
        assert enclosed_region(frozenset(RING), 9) == frozenset({(4, 4), (4, 5)})
        assert enclosed_region(frozenset({(0, 0), (0, 1)}), 9) == frozenset()


class TestSymmetry:
    def test_compose_with_inverse(self):
        for k in D4_ELEMENTS:
            assert compose_elements(k, inverse_element(k), 7) == 0

    def test_every_image_normalises_to_the_same_event(self):
        base = event({(0, 1), (0, 2), (1, 1), (2, 5)})
        canonical = normalize_symmetry(base)
        for k in D4_ELEMENTS:
            assert normalize_symmetry(transform_event(base, k)).captured_group == canonical.captured_group

    def test_canonical_centroid(self):
        normalized = normalize_symmetry(detect_cycle_capture(ring_game(), victim=WHITE))
        rows, cols = zip(*normalized.captured_group)
        half = (9 - 1) / 2
        assert np.mean(rows) <= half and np.mean(cols) <= half
        assert np.mean(rows) <= np.mean(cols)
        assert len(normalized.adversary_stones) == len(ATTACK) - 1


class TestHeatmaps:
    def test_accumulate(self):
        a = event({(0, 0), (0, 1)})
        b = event({(0, 1), (1, 1)})
        heatmap = accumulate_heatmaps([a, b])
        assert heatmap.event_count == 2
        assert heatmap.grids["cyclic_group"][0, 1] == 2
        assert heatmap.grids["cyclic_group"].sum() == 4
        assert heatmap.grids["adversary_stones"][6, 6] == 2

    def test_mixed_sizes(self):
        with pytest.raises(MixedSizes):
            accumulate_heatmaps([event({(0, 0)}, size=7), event({(0, 0)}, size=9)])

    def test_empty_input(self):
        heatmap = accumulate_heatmaps([], size=5)
        assert set(heatmap.grids) == set(HEATMAP_CATEGORIES)
        assert all(not grid.any() for grid in heatmap.grids.values())
        with pytest.raises(DomainError):
            accumulate_heatmaps([])

    def test_difference(self):
        a = accumulate_heatmaps([event({(0, 0)}), event({(0, 0)})])
        b = accumulate_heatmaps([event({(0, 0)})])
        assert heatmap_difference(a, b)["cyclic_group"][0, 0] == 1.0
        assert heatmap_difference(a, b, normalize=True)["cyclic_group"][0, 0] == 0.0
        with pytest.raises(MixedSizes):
            heatmap_difference(a, accumulate_heatmaps([], size=9))

    def test_emit(self, tmp_path):
        heatmap = accumulate_heatmaps([event({(0, 0), (2, 3)})])
        paths = emit(heatmap, tmp_path / "out")
        assert len(paths) == len(HEATMAP_CATEGORIES) + 1
        grid = pd.read_csv(tmp_path / "out" / "heatmap_cyclic_group.csv")
        assert grid.shape == (7, 7)
        assert grid.iloc[2, 3] == 1
        assert (tmp_path / "out" / "heatmap.svg").read_text().startswith("<svg")
        diff = emit_difference(heatmap, heatmap, tmp_path / "diff")
        assert len(diff) == 2 * (len(HEATMAP_CATEGORIES) + 1)


def test_analyze_games(tmp_path):
    (tmp_path / "ring.sgf").write_text(write_sgf(ring_game()))
    (tmp_path / "quiet.sgf").write_text("(;SZ[9]RE[B+R];B[aa];W[bb])")
    (tmp_path / "broken.sgf").write_text("(;SZ[9]RE[W+R];B[aa];W[aa])")
    events = analyze_games(sorted(tmp_path.glob("*.sgf")))
    assert len(events) == 1
    assert events[0].captured_group != frozenset()
    assert events[0].game_ref.endswith("ring.sgf")


def test_random_events_normalise_within_their_orbit():
    rng = np.random.default_rng(12)
    size = 7
    half = (size - 1) / 2
    for _ in range(100):
        count = int(rng.integers(3, 10))
        cells = rng.choice(size * size, size=count, replace=False)
        base = event({divmod(int(i), size) for i in cells}, size=size)
        orbit = {transform_event(base, k).captured_group for k in D4_ELEMENTS}
        canonical = normalize_symmetry(base)
        assert canonical.captured_group in orbit
        rows, cols = zip(*canonical.captured_group)
        row, col = np.mean(rows), np.mean(cols)
        assert row <= half + 1e-9 and col <= half + 1e-9 and row <= col + 1e-9
        r0, c0 = zip(*base.captured_group)
        r0, c0 = np.mean(r0), np.mean(c0)
        on_axis = min(abs(r0 - half), abs(c0 - half), abs(r0 - c0), abs(r0 + c0 - 2 * half)) < 1e-9
        if not on_axis:
            for k in D4_ELEMENTS:
                assert normalize_symmetry(transform_event(base, k)).captured_group == canonical.captured_group
