"""
End-to-end runs of the golab command line on tiny configs
"""

import json

import pandas as pd
import pytest
import toml
from typer.testing import CliRunner

from api.services import nnet
from api.services.analysis import SgfGame, SgfMove, write_sgf
from api.services.rules import BLACK, Move
from conftest import write_config
from main import app

runner = CliRunner()


def invoke(*args, **kwargs):
    return runner.invoke(app, ["--log-level", "warning", *map(str, args)], **kwargs)


def edit_config(path, **sections):
    data = toml.load(path)
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    return write_config(path.parent, data, name=path.name)


def run_dir(path):
    data = toml.load(path)
    return path.parent / "runs" / data["run"]["name"]


class TestGeneration:
    def test_selfplay_smoke(self, tiny_run_config):
        result = invoke("selfplay", tiny_run_config)
        assert result.exit_code == 0, result.output
        out = run_dir(tiny_run_config)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "selfplay"
        assert len(manifest["games"]) == 2
        assert (out / "games" / "selfplay_000000.sgf").exists()
        assert list((out / "segments").glob("selfplay_size5.bin"))
        assert (out / "resolved_config.toml").exists()

    def test_rerun_is_byte_identical(self, tiny_run_config):
        out = run_dir(tiny_run_config)
        assert invoke("selfplay", tiny_run_config).exit_code == 0
        first = {p.name: p.read_bytes() for p in [out / "manifest.json", *sorted((out / "segments").iterdir())]}
        assert invoke("selfplay", tiny_run_config).exit_code == 0
        second = {p.name: p.read_bytes() for p in [out / "manifest.json", *sorted((out / "segments").iterdir())]}
        assert first == second

    def test_victimplay_smoke(self, tiny_run_config):
        result = invoke("victimplay", tiny_run_config)
        assert result.exit_code == 0, result.output
        manifest = json.loads((run_dir(tiny_run_config) / "manifest.json").read_text())
        assert 0 <= manifest["adversary_wins"] <= 2
        assert [g["adversary"] for g in manifest["games"]] == ["black", "white"]

    def test_victimplay_training(self, tiny_run_config):
        path = edit_config(tiny_run_config, run={"train": True, "games": 2})
        result = invoke("victimplay", path)
        assert result.exit_code == 0, result.output
        out = run_dir(path)
        assert list((out / "checkpoints").glob("attack00_step*.ckpt"))
        assert json.loads((out / "manifest.json").read_text())["stop_reason"] == "budget"

    def test_invalid_key_exits_2(self, tiny_run_config):
        path = edit_config(tiny_run_config, run={"colour": "blue"})
        assert invoke("selfplay", path).exit_code == 2

    def test_missing_config_exits_2(self, tmp_path):
        assert invoke("selfplay", tmp_path / "nope.toml").exit_code == 2


class TestIterate:
    def seeds(self, tiny_config, tmp_path):
        victim = nnet.save_checkpoint(nnet.create_network(tiny_config, seed=1), tmp_path / "v0.ckpt")
        adversary = nnet.save_checkpoint(nnet.create_network(tiny_config, seed=2), tmp_path / "a0.ckpt")
        return str(victim), str(adversary)

    def test_zero_iterations_is_a_no_op(self, tiny_run_config, tiny_config, tmp_path):
        victim, adversary = self.seeds(tiny_config, tmp_path)
        path = edit_config(tiny_run_config, curriculum={"iterations": 0, "seed_victim": victim,
                                                        "seed_adversary": adversary})
        result = invoke("iterate", path)
        assert result.exit_code == 0, result.output
        lineage = json.loads((run_dir(path) / "lineage.json").read_text())
        assert [e["name"] for e in lineage["entries"]] == ["victim0", "adversary0"]
        assert lineage["completed_phases"] == []
        assert not (run_dir(path) / "checkpoints").exists()

    def test_missing_seed_checkpoint_exits_2(self, tiny_run_config, tmp_path):
        path = edit_config(tiny_run_config, curriculum={"seed_victim": str(tmp_path / "gone.ckpt"),
                                                        "seed_adversary": str(tmp_path / "gone.ckpt")})
        assert invoke("iterate", path).exit_code == 2

    def test_unset_seed_exits_2(self, tiny_run_config):
        assert invoke("iterate", tiny_run_config).exit_code == 2

    def test_resume_needs_lineage(self, tiny_run_config, tmp_path):
        assert invoke("iterate", tiny_run_config, "--resume", tmp_path / "empty").exit_code == 2


class TestEvaluation:
    def test_match(self, tiny_run_config):
        result = invoke("match", tiny_run_config, "--a", "victim", "--b", "adversary")
        assert result.exit_code == 0, result.output
        summary = pd.read_csv(run_dir(tiny_run_config) / "match.csv")
        assert list(summary.columns) == ["agent_a", "agent_b", "games", "a_wins", "b_wins", "draws",
                                         "a_win_rate", "lower", "upper"]
        assert summary.loc[0, "games"] == 2
        games = pd.read_csv(run_dir(tiny_run_config) / "match_games.csv")
        assert list(games["a_color"]) == ["black", "white"]

    def test_unknown_agent_exits_2(self, tiny_run_config):
        assert invoke("match", tiny_run_config, "--a", "victim", "--b", "ghost").exit_code == 2

    def test_elo(self, tiny_run_config):
        result = invoke("elo", tiny_run_config)
        assert result.exit_code == 0, result.output
        elo = pd.read_csv(run_dir(tiny_run_config) / "elo.csv")
        assert list(elo.columns) == ["agent", "elo", "anchor"]
        assert set(elo["agent"]) == {"victim", "adversary"}
        pairs = pd.read_csv(run_dir(tiny_run_config) / "elo_pairs.csv")
        assert list(pairs.columns) == ["a", "b", "a_wins", "b_wins", "draws"]

    def test_robustness(self, tiny_run_config):
        result = invoke("robustness", tiny_run_config)
        assert result.exit_code == 0, result.output
        out = run_dir(tiny_run_config)
        grid = pd.read_csv(out / "visit_grid.csv")
        assert list(grid.columns) == ["adversary", "1", "2"]
        assert list(grid["adversary"]) == ["adversary"]
        report = pd.read_csv(out / "robustness_adversary.csv")
        assert list(report["victim_visits"]) == [1, 2]
        assert "above_baseline" in report.columns
        cross = pd.read_csv(out / "cross_play.csv")
        assert list(cross.columns) == ["victim", "adversary"]


class TestHeatmap:
    def test_empty_directory_gives_zero_grids(self, tmp_path):
        (tmp_path / "games").mkdir()
        result = invoke("heatmap", tmp_path / "games", "--output", tmp_path / "maps", "--size", "9")
        assert result.exit_code == 0, result.output
        grid = pd.read_csv(tmp_path / "maps" / "heatmap_cyclic_group.csv")
        assert grid.shape == (9, 9)
        assert grid.to_numpy().sum() == 0

    def test_mixed_sizes_exit_2(self, tmp_path):
        games = tmp_path / "games"
        games.mkdir()
        for size in (7, 9):
            game = SgfGame.new(size, 7.5, result="B+R")
            game.moves = [SgfMove(BLACK, Move.play(0, 0))]
            (games / f"g{size}.sgf").write_text(write_sgf(game))
        assert invoke("heatmap", games, "--output", tmp_path / "maps").exit_code == 2

    def test_not_a_directory(self, tmp_path):
        assert invoke("heatmap", tmp_path / "missing").exit_code == 2

    def test_compare_writes_differences(self, tmp_path):
        for name in ("a", "b"):
            (tmp_path / name).mkdir()
            (tmp_path / name / "g.sgf").write_text("(;SZ[7]RE[B+R];B[aa];W[bb])")
        result = invoke("heatmap", tmp_path / "a", "-o", tmp_path / "maps", "--compare", tmp_path / "b")
        assert result.exit_code == 0, result.output
        assert (tmp_path / "maps" / "difference_raw_cyclic_group.csv").exists()
        assert (tmp_path / "maps" / "difference_normalized.svg").exists()


@pytest.mark.parametrize("checkpoint", ["uniform", "network"])
def test_gtp_session(checkpoint, tiny_net, tmp_path):
    if checkpoint == "network":
        checkpoint = str(nnet.save_checkpoint(tiny_net, tmp_path / "net.ckpt"))
    commands = "protocol_version\nboardsize 7\ngenmove b\nplay w A1\n2 quit\n"
    result = invoke("gtp", checkpoint, "--visits", "2", "--size", "9", input=commands)
    assert result.exit_code == 0, result.output
    assert "= 2\n\n" in result.stdout
    assert "=2\n\n" in result.stdout
