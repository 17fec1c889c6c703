"""
Tests for the victim-play curriculum and iterated adversarial training
"""

import pytest
from pydantic import ValidationError

from api.services import nnet
from api.services.curriculum import (
    AttackPlan,
    Budget,
    CheckpointRecord,
    CurriculumState,
    DefensePlan,
    IterationPlan,
    LineageEntry,
    LineageReport,
    PhaseContext,
    TrainingPlan,
    _warm_window,
    advance,
    plateaued,
    reset_phase_outputs,
    run_attack_iteration,
    run_defense_iteration,
    run_iterated,
    select_checkpoint,
    should_advance,
)
from api.services.selfplay import GenConfig, append_segment, play_training_game, to_rows
from utils.errors import BudgetExhausted, DomainError, InsufficientData, ScheduleExhausted


def ladder(**overrides):
    values = dict(visit_schedule=[1, 2, 4], victim_visits=1, window=3, high_visit_cutoff=4)
    values.update(overrides)
    return CurriculumState(**values)


def tiny_plan(attack_games=4, defense_games=3):
    generation = GenConfig(board_size_distribution={5: 1.0}, move_limit_factor=400.0)
    return IterationPlan(
        attack=AttackPlan(visit_schedule=[1, 2], adversary_visits=2, win_window=50, generation=generation),
        defend=DefensePlan(victim_visits=1, adversary_visits=2, selfplay_visits=2, eval_games=2,
                           board_size_distribution={5: 1.0}),
        training=TrainingPlan(batch_size=8, games_per_round=2, steps_per_round=1, m0=50),
        attack_budget=Budget(max_games=attack_games),
        defense_budget=Budget(max_games=defense_games),
    )


def record(win_rate, step=0):
    return CheckpointRecord(path=f"c{step}.ckpt", role="adversary", iteration=1, step_count=step, games=0,
                            win_rate=win_rate, victim_visits=1)


class TestCurriculumState:
    def test_needs_a_full_window(self):
        state = ladder()
        state.record(1)
        state.record(1)
        with pytest.raises(InsufficientData):
            should_advance(state)

    def test_advances_at_threshold(self):
        state = ladder()
        for won in (1, 1, 0):
            state.record(won)
        assert not should_advance(state)
        state.record(1)
        assert state.win_tracker == [1.0, 0.0, 1.0]
        state.record(1)
        state.record(1)
        assert state.win_tracker == [1.0, 1.0, 1.0]
        assert should_advance(state)
        moved = advance(state)
        assert moved.victim_visits == 2
        assert moved.win_tracker == []
        assert moved.advancements[0]["from_visits"] == 1
        assert state.victim_visits == 1

    def test_high_visit_threshold(self):
        assert ladder().threshold == pytest.approx(0.75)
        assert ladder(victim_visits=4).threshold == pytest.approx(0.90)

    def test_last_rung_is_exhausted(self):
        with pytest.raises(ScheduleExhausted):
            advance(ladder(victim_visits=4))

    def test_schedule_validation(self):
        with pytest.raises(ValidationError):
            ladder(visit_schedule=[1, 1, 2])
        with pytest.raises(ValidationError):
            ladder(victim_visits=3)

    def test_save_and_load(self, tmp_path):
        state = ladder()
        state.record(1)
        state.save(tmp_path / "state" / "attack01.json")
        assert CurriculumState.load(tmp_path / "state" / "attack01.json") == state


class TestBudget:
    def test_games_budget(self):
        budget = Budget(max_games=2)
        budget.charge_games(2)
        assert budget.exhausted()
        with pytest.raises(BudgetExhausted):
            budget.check()

    def test_steps_budget_and_unbounded(self):
        budget = Budget(max_steps=1)
        budget.check()
        budget.charge_steps()
        assert budget.exhausted()
        assert not Budget().exhausted()


class TestSelection:
    def test_plateau(self):
        assert not plateaued([0.5, 0.6], 0.01, 3)
        assert plateaued([0.5, 0.6, 0.6, 0.6, 0.6], 0.01, 3)
        assert not plateaued([0.5, 0.6, 0.7, 0.8], 0.01, 3)

    def test_moving_average_picks_window_start(self):
        series = [record(r, i) for i, r in enumerate([0.90, 0.99, 0.91, 0.94, 0.95, 0.96])]
        assert select_checkpoint(series).step_count == 3

    def test_ties_go_to_the_earliest(self):
        series = [record(0.5, i) for i in range(5)]
        assert select_checkpoint(series).step_count == 0

    def test_too_few_checkpoints(self):
        with pytest.raises(InsufficientData):
            select_checkpoint([record(0.5)])


class TestLineage:
    def chain(self):
        return LineageReport(entries=[
            LineageEntry(name="victim0", role="victim", iteration=0, checkpoint="v0"),
            LineageEntry(name="adversary0", role="adversary", iteration=0, checkpoint="a0"),
            LineageEntry(name="victim1", role="victim", iteration=1, parent="victim0", checkpoint="v1"),
            LineageEntry(name="adversary1", role="adversary", iteration=1, parent="adversary0", checkpoint="a1"),
        ])

    def test_chain(self):
        report = self.chain()
        assert report.is_chain()
        assert report.latest("victim").name == "victim1"
        assert report.victims() == {"victim0": "v0", "victim1": "v1"}

    def test_broken_chain(self):
        report = self.chain()
        report.entries[3].parent = "victim0"
        assert not report.is_chain()

    def test_ancestry_is_oldest_first(self):
        report = self.chain()
        assert [e.name for e in report.ancestry(report.latest("adversary"))] == ["adversary0", "adversary1"]
        report.entries[2].parent = "victim9"
        with pytest.raises(DomainError):
            report.ancestry(report.latest("victim"))

    def test_save_and_load(self, tmp_path):
        report = self.chain()
        report.save(tmp_path / "lineage.json")
        assert LineageReport.load(tmp_path / "lineage.json") == report


class TestWarmWindow:
    def lineage(self, tmp_path, uniform_agent, rng):
        game = play_training_game(uniform_agent, uniform_agent, GenConfig(board_size_distribution={5: 1.0}), rng)
        older, newer = to_rows(game, "selfplay", tag=1), to_rows(game, "selfplay", tag=2)
        append_segment(tmp_path / "segments" / "defend01_size5.bin", older)
        append_segment(tmp_path / "segments" / "defend02_size5.bin", newer)
        report = LineageReport(entries=[
            LineageEntry(name="victim0", role="victim", iteration=0, checkpoint="v0"),
            LineageEntry(name="victim1", role="victim", iteration=1, parent="victim0", checkpoint="v1",
                         phase="defend01", total_rows=len(older)),
            LineageEntry(name="victim2", role="victim", iteration=2, parent="victim1", checkpoint="v2",
                         phase="defend02", total_rows=len(older) + len(newer)),
        ])
        return report.ancestry(report.latest("victim")), older + newer

    def test_rows_come_from_every_earlier_phase(self, tmp_path, uniform_agent, rng):
        chain, rows = self.lineage(tmp_path, uniform_agent, rng)
        window = _warm_window(tmp_path, chain, m0=len(rows))
        assert len(window) == len(rows)
        assert window.tags() == {1, 2}
        assert window.total_rows == len(rows)

    def test_keeps_only_the_newest_rows(self, tmp_path, uniform_agent, rng):
        chain, rows = self.lineage(tmp_path, uniform_agent, rng)
        window = _warm_window(tmp_path, chain, m0=5)
        assert [r.tag for r in window.snapshot()] == [r.tag for r in rows[-window.capacity:]]


def test_reset_phase_outputs(tmp_path):
    for sub, name in (("segments", "attack01_size5.bin"), ("games", "attack01_000000.sgf"),
                      ("games", "defend01_000000.sgf"), ("state", "attack01.json")):
        (tmp_path / sub).mkdir(exist_ok=True)
        (tmp_path / sub / name).write_text("x")
    reset_phase_outputs(tmp_path, "attack01")
    assert not (tmp_path / "segments" / "attack01_size5.bin").exists()
    assert not (tmp_path / "state" / "attack01.json").exists()
    assert (tmp_path / "games" / "defend01_000000.sgf").exists()


class TestPhases:
    def test_attack_leaves_victim_frozen(self, tiny_config, tmp_path):
        victim = nnet.create_network(tiny_config, seed=1)
        adversary = nnet.create_network(tiny_config, seed=2)
        before = victim.fingerprint()
        plan = tiny_plan()
        result = run_attack_iteration(adversary, victim, plan, plan.attack_budget.model_copy(),
                                      PhaseContext(output_dir=tmp_path, iteration=1, seed=5))
        assert victim.fingerprint() == before
        assert result.stop_reason == "budget"
        assert result.state.games_played == 4
        assert result.params.step_count == 1
        assert adversary.step_count == 0
        assert all(tmp_path.joinpath(c.path).exists() for c in result.checkpoints)
        assert (tmp_path / "state" / "attack01.json").exists()
        assert sorted(p.name for p in (tmp_path / "segments").iterdir()) == ["attack01_size5.bin"]

    def test_defense_leaves_adversary_frozen(self, tiny_config, tmp_path):
        victim = nnet.create_network(tiny_config, seed=1)
        adversary = nnet.create_network(tiny_config, seed=2)
        before = adversary.fingerprint()
        plan = tiny_plan()
        result = run_defense_iteration(victim, adversary, plan, plan.defense_budget.model_copy(),
                                       PhaseContext(output_dir=tmp_path, iteration=1, seed=5))
        assert adversary.fingerprint() == before
        assert result.stop_reason == "budget"
        assert result.role == "victim"
        assert len(result.trace) == 1
        assert 0.0 <= result.trace[0]["win_rate"] <= 1.0


class TestIterated:
    def seeds(self, tiny_config, tmp_path):
        victim = nnet.save_checkpoint(nnet.create_network(tiny_config, seed=1), tmp_path / "victim0.ckpt")
        adversary = nnet.save_checkpoint(nnet.create_network(tiny_config, seed=2), tmp_path / "adversary0.ckpt")
        return str(victim), str(adversary)

    def test_zero_iterations_only_records_seeds(self, tiny_config, tmp_path):
        victim, adversary = self.seeds(tiny_config, tmp_path)
        report = run_iterated(tiny_plan(), victim, adversary, 0, tmp_path / "run")
        assert [e.name for e in report.entries] == ["victim0", "adversary0"]
        assert report.completed_phases == []
        assert (tmp_path / "run" / "lineage.json").exists()

    def test_one_iteration_extends_both_chains(self, tiny_config, tmp_path):
        victim, adversary = self.seeds(tiny_config, tmp_path)
        report = run_iterated(tiny_plan(attack_games=2, defense_games=2), victim, adversary, 1, tmp_path / "run")
        assert report.completed_phases == ["defend01", "attack01"]
        assert report.is_chain()
        assert report.latest("victim").parent == "victim0"
        assert report.latest("adversary").parent == "adversary0"

        resumed = run_iterated(tiny_plan(attack_games=2, defense_games=2), victim, adversary, 1, tmp_path / "run")
        assert resumed == report
