import json
import subprocess
import sys

import pytest

from hydra_rank.cli import main, schedule_to_rank_pattern
from hydra_rank.core import ComponentRanks, RankSchedule


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def toy_profiles(tmp_path, capsys):
    path = tmp_path / "profiles.json"
    code, _, err = run_cli(
        ["profile", "--preset", "toy-8", "--steps", "3", "--rank", "2",
         "--seed", "42", "--output", str(path)],
        capsys,
    )
    assert code == 0, err
    return path


class TestRankPatternExport:
    def test_uniform_schedule_has_empty_pattern(self):
        out = schedule_to_rank_pattern(RankSchedule.uniform(16, 4))
        assert out == {"default_rank": 16, "pattern": {}}

    def test_deviations_keyed_by_zero_based_layer(self):
        layers = (
            ComponentRanks.uniform(8),
            ComponentRanks((8, 8, 8, 8, 12, 8, 8)),
        )
        out = schedule_to_rank_pattern(RankSchedule(layers))
        assert out["default_rank"] == 8
        assert out["pattern"] == {"layers.1.up_proj": 12}

    def test_default_is_modal_rank_with_low_tie_break(self):
        layers = (ComponentRanks.uniform(4), ComponentRanks.uniform(9))
        out = schedule_to_rank_pattern(RankSchedule(layers))
        assert out["default_rank"] == 4
        assert len(out["pattern"]) == 7

    def test_export_matches_golden_file(self, tmp_path, capsys):
        import os

        sched_path = tmp_path / "sched.json"
        out_path = tmp_path / "pattern.json"
        assert run_cli(
            ["allocate", "--coarse-preset", "paper-config4", "--fine", "none",
             "--output", str(sched_path)],
            capsys,
        )[0] == 0
        assert run_cli(
            ["export", "--schedule", str(sched_path), "--output", str(out_path)],
            capsys,
        )[0] == 0
        golden = os.path.join(
            os.path.dirname(__file__), "data", "paper_config4_coarse_pattern.json"
        )
        with open(golden, "rb") as fh:
            assert out_path.read_bytes() == fh.read()

    def test_reference_coarse_export_layer0(self, tmp_path, capsys):
        sched_path = tmp_path / "sched.json"
        code, _, err = run_cli(
            ["allocate", "--coarse-preset", "paper-config4", "--fine", "none",
             "--output", str(sched_path)],
            capsys,
        )
        assert code == 0, err
        code, out, _ = run_cli(
            ["export", "--schedule", str(sched_path), "--format", "rank-pattern"],
            capsys,
        )
        assert code == 0
        pattern = json.loads(out)
        assert pattern["default_rank"] == 131
        assert pattern["pattern"]["layers.0.q_proj"] == 124
        assert pattern["pattern"]["layers.8.q_proj"] == 126
        assert "layers.12.q_proj" not in pattern["pattern"]


class TestPipelineCommands:
    def test_profile_from_existing_log(self, tmp_path, capsys):
        import os

        log = os.path.join(os.path.dirname(__file__), "data", "table1_gradlog.jsonl")
        out = tmp_path / "profiles.json"
        code, _, err = run_cli(
            ["profile", "--from-log", log, "--output", str(out)], capsys
        )
        assert code == 0, err
        data = json.loads(out.read_text())
        assert len(data["profiles"]) == 24

    def test_profile_then_partition(self, toy_profiles, tmp_path, capsys):
        part_path = tmp_path / "part.json"
        code, _, err = run_cli(
            ["partition", "--profiles", str(toy_profiles), "--stages", "3",
             "--output", str(part_path)],
            capsys,
        )
        assert code == 0, err
        data = json.loads(part_path.read_text())
        assert data["num_stages"] == 3

    def test_allocate_writes_schedule_to_stdout(self, toy_profiles, tmp_path, capsys):
        part_path = tmp_path / "part.json"
        run_cli(
            ["partition", "--profiles", str(toy_profiles), "--stages", "2",
             "--output", str(part_path)],
            capsys,
        )
        code, out, err = run_cli(
            ["allocate", "--preset", "toy-8", "--stages-file", str(part_path),
             "--delta-d", "2", "--fine", "setting1"],
            capsys,
        )
        assert code == 0, err
        schedule = RankSchedule.from_json(out)
        assert schedule.num_layers == 8
        assert schedule.provenance["fine_setting"] == "setting1"

    def test_allocation_report_trace(self, toy_profiles, tmp_path, capsys):
        part_path = tmp_path / "part.json"
        run_cli(
            ["partition", "--profiles", str(toy_profiles), "--stages", "2",
             "--output", str(part_path)],
            capsys,
        )
        report_path = tmp_path / "report.json"
        code, _, _ = run_cli(
            ["allocate", "--preset", "toy-8", "--stages-file", str(part_path),
             "--report", str(report_path), "--output", str(tmp_path / "s.json")],
            capsys,
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["trace"]
        assert all("n_remain" in rec for rec in report["trace"])

    def test_validate_uniform_baseline_exits_zero(self, tmp_path, capsys):
        sched_path = tmp_path / "sched.json"
        sched_path.write_text(RankSchedule.uniform(128, 24).to_json())
        code, out, _ = run_cli(
            ["validate", "--schedule", str(sched_path), "--preset", "mobilellama-1.4b"],
            capsys,
        )
        assert code == 0
        assert json.loads(out)["admissible"] is True

    def test_validate_overbudget_exits_two(self, tmp_path, capsys):
        sched_path = tmp_path / "sched.json"
        sched_path.write_text(RankSchedule.uniform(129, 24).to_json())
        code, _, err = run_cli(
            ["validate", "--schedule", str(sched_path), "--preset", "mobilellama-1.4b"],
            capsys,
        )
        assert code == 2
        assert "violations" in err

    def test_unknown_preset_exits_two_with_json_error(self, capsys):
        code, _, err = run_cli(["profile", "--preset", "nope"], capsys)
        assert code == 2
        payload = json.loads(err.strip().splitlines()[-1])
        assert payload["error"] == "config-error"

    def test_unreadable_file_exits_two(self, capsys):
        code, _, err = run_cli(
            ["partition", "--profiles", "/does/not/exist.json", "--stages", "2"],
            capsys,
        )
        assert code == 2

    def test_missing_required_flag(self, capsys):
        code, _, err = run_cli(["partition", "--stages", "2"], capsys)
        assert code == 2

    def test_train_perf_and_search(self, tmp_path, capsys):
        # Build a small dataset with the synthetic oracle, train, then search.
        from hydra_rank.allocator import AllocatorParams
        from hydra_rank.core import ModelShape
        from hydra_rank.partitioner import StagePartition
        from hydra_rank.perfmodel import dataset_to_json
        from hydra_rank.search import SyntheticOracle, propose_candidates

        shape = ModelShape(8, 64, 172)
        partition = StagePartition.from_layer_groups(
            [[1, 2, 3], [4, 5], [6, 7, 8]], centroids=[0.1, 0.5, 0.9]
        )
        params = AllocatorParams(16, 2)
        oracle = SyntheticOracle(r_standard=16, seed=42)
        cands = propose_candidates(partition, params, shape, 40, 42)
        pairs = [(s, oracle.evaluate(s)) for s in cands]
        dataset_path = tmp_path / "dataset.json"
        dataset_path.write_text(dataset_to_json(pairs))
        part_path = tmp_path / "part.json"
        part_path.write_text(partition.to_json())

        model_path = tmp_path / "model.json"
        curve_path = tmp_path / "curve.csv"
        code, out, err = run_cli(
            ["train-perf", "--dataset", str(dataset_path), "--r-standard", "16",
             "--epochs", "40", "--model-out", str(model_path),
             "--curve-out", str(curve_path)],
            capsys,
        )
        assert code == 0, err
        summary = json.loads(out)
        assert summary["pairs"] == 40
        assert model_path.exists()
        assert curve_path.read_text().startswith("epoch,train_loss,val_loss")

        best_path = tmp_path / "best.json"
        log_path = tmp_path / "search.jsonl"
        code, _, err = run_cli(
            ["search", "--preset", "toy-8", "--stages-file", str(part_path),
             "--iters", "2", "--batch", "6", "--oracle", "synthetic",
             "--log", str(log_path), "--output", str(best_path)],
            capsys,
        )
        assert code == 0, err
        best = RankSchedule.from_json(best_path.read_text())
        assert best.num_layers == 8
        assert log_path.exists()

    def test_toml_config_with_flag_override(self, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text(
            '[profile]\npreset = "toy-8"\nsteps = 2\nrank = 2\nseed = 7\n'
        )
        out_a = tmp_path / "a.json"
        code, _, err = run_cli(
            ["profile", "--config", str(config), "--output", str(out_a)], capsys
        )
        assert code == 0, err
        # Overriding the seed via flag must change the result.
        out_b = tmp_path / "b.json"
        code, _, _ = run_cli(
            ["profile", "--config", str(config), "--seed", "8", "--output", str(out_b)],
            capsys,
        )
        assert code == 0
        assert out_a.read_text() != out_b.read_text()


class TestConsoleScript:
    def test_entry_point_runs(self):
        result = subprocess.run(
            [sys.executable, "-m", "hydra_rank.cli", "export", "--help"],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0
        assert "rank-pattern" in result.stdout


class TestRoundTrips:
    def test_every_output_reingestible(self, toy_profiles, tmp_path, capsys):
        # profile -> partition -> allocate -> export, then validate reads
        # the schedule back and the bridge-facing pattern parses.
        part = tmp_path / "p.json"
        sched = tmp_path / "s.json"
        pattern = tmp_path / "r.json"
        assert run_cli(["partition", "--profiles", str(toy_profiles), "--stages", "3",
                        "--output", str(part)], capsys)[0] == 0
        assert run_cli(["allocate", "--preset", "toy-8", "--stages-file", str(part),
                        "--fine", "setting1", "--output", str(sched)], capsys)[0] == 0
        assert run_cli(["export", "--schedule", str(sched), "--output", str(pattern)],
                       capsys)[0] == 0
        assert run_cli(["validate", "--schedule", str(sched), "--preset", "toy-8"],
                       capsys)[0] == 0
        data = json.loads(pattern.read_text())
        assert set(data) == {"default_rank", "pattern"}
