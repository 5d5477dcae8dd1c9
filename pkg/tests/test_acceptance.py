"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Tolerances and time limits are pinned here, not configured.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

import json
import math
import time

import numpy as np
import pytest

from hydra_rank import tensor as T
from hydra_rank.allocator import (
    AllocatorParams,
    FineSetting,
    allocate_coarse,
    apply_fine_setting,
    assemble_schedule,
    initial_rank,
    refine_fine,
)
from hydra_rank.cli import main as cli_main
from hydra_rank.core import (
    Budget,
    ComponentKind,
    ModelShape,
    RankSchedule,
    param_count,
    rank_total,
    validate,
)
from hydra_rank.errors import BudgetTooSmallError
from hydra_rank.partitioner import StagePartition
from hydra_rank.perfmodel import encode_features, train
from hydra_rank.presets import coarse_preset, shape_preset
from hydra_rank.profiler import component_means, read_grad_log
from hydra_rank.search import (
    ReplayOracle,
    SyntheticOracle,
    propose_candidates,
    random_search_baseline,
    run_search,
    scalarize,
)
from tests.test_allocator import groups_of_sizes, replay_oracle
from tests.test_search import ABLATION_CONFIGS, ABLATION_METRICS, MMB_WEIGHTS

TABLE1_LOG = "tests/data/table1_gradlog.jsonl"


def report(line: str) -> None:
    print(f"\nACCEPTANCE PASS: {line}")


class TestAllocatorOracleEquivalence:
    def test_randomized_instances_match_replay(self):
        started = time.monotonic()
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(300):
            t = int(rng.integers(1, 6))
            sizes = tuple(int(s) for s in rng.integers(1, 8, size=t))
            num_layers = sum(sizes)
            if num_layers > 32:
                continue
            r_standard = int(rng.integers(2, 257))
            delta_d = int(rng.integers(1, 5))
            expected = replay_oracle(sizes, r_standard, delta_d)
            partition = groups_of_sizes(sizes)
            params = AllocatorParams(r_standard, delta_d)
            if expected is None:
                with pytest.raises(BudgetTooSmallError):
                    allocate_coarse(partition, params, num_layers)
            else:
                alloc = allocate_coarse(partition, params, num_layers)
                assert alloc.stage_ranks == expected
            checked += 1
        # Hand-derived fixtures.
        assert allocate_coarse(groups_of_sizes((2, 2, 2)), AllocatorParams(16, 2), 6).stage_ranks == (14, 16, 18)
        assert allocate_coarse(groups_of_sizes((2, 2)), AllocatorParams(8, 2), 4).stage_ranks == (7, 9)
        elapsed = time.monotonic() - started
        assert elapsed < 10.0
        report(
            f"allocator equals brute-force replay on {checked} random instances "
            f"and both hand fixtures ({elapsed:.1f}s < 10s)"
        )


class TestBudgetSafety:
    def test_thousand_random_candidates_admissible(self):
        cases = [
            (groups_of_sizes((2, 2, 2)), ModelShape(6, 64, 172), AllocatorParams(16, 2)),
            (groups_of_sizes((3, 2, 3)), ModelShape(8, 64, 172), AllocatorParams(16, 2)),
            (groups_of_sizes((8, 4, 12)), ModelShape(24, 2048, 5632), AllocatorParams(128, 2)),
            (groups_of_sizes((4, 8)), ModelShape(12, 128, 344), AllocatorParams(32, 4)),
        ]
        total = 0
        for partition, shape, params in cases:
            budget = Budget.for_shape(shape, params.r_standard)
            candidates = propose_candidates(partition, params, shape, 250, 42)
            assert len(candidates) == 250
            for schedule in candidates:
                assert validate(schedule, shape, budget).admissible
                assert param_count(schedule, shape) <= budget.param_cap
                stage_ranks = schedule.provenance["stage_ranks"]
                assert all(
                    b - a >= params.delta_d for a, b in zip(stage_ranks, stage_ranks[1:])
                )
                assert rank_total(schedule) <= budget.rank_cap
            total += len(candidates)
        assert total == 1000
        report(f"{total} proposed schedules satisfy the parameter cap, the "
               "stage-gap rule, and the rank-sum budget; zero violations")


class TestClosedFormFixtures:
    def test_initial_rank_and_fine_shift_fixtures(self):
        assert initial_rank(128, 24) == 104
        shifted = apply_fine_setting(
            RankSchedule(
                (  # one coarse layer at the baseline rank
                    __import__("hydra_rank.core", fromlist=["ComponentRanks"]).ComponentRanks.uniform(128),
                ),
                provenance={"kind": "coarse"},
            ),
            FineSetting.named("setting1"),
            2,
        )
        assert shifted.layers[0].values == (126, 126, 128, 128, 130, 128, 128)

        partition, alloc = coarse_preset("paper-config4")
        assert alloc.stage_ranks == (124, 126, 131)
        refined = refine_fine(alloc, partition, FineSetting.named("setting1"), 2)
        assert refined.num_layers == 24
        shape = shape_preset("mobilellama-1.4b").shape
        budget = Budget.for_shape(shape, 128)
        assert validate(refined, shape, budget).admissible
        report("starting-rank formula gives 104 at (128, 24); setting1 at "
               "rank 128 yields (126,126,128,128,130,128,128); the shipped "
               "(124,126,131) preset loads and refines cleanly")


class TestKnownDiscrepancy:
    def test_pinned_walk_and_reference_preset_coexist(self):
        partition = groups_of_sizes((8, 4, 12))
        alloc = allocate_coarse(partition, AllocatorParams(128, 2), 24)
        assert alloc.stage_ranks == (126, 128, 129)
        _, reference = coarse_preset("paper-config4")
        assert reference.stage_ranks == (124, 126, 131)
        report("pinned walk returns (126,128,129) on the 24-layer preset "
               "while the reference preset ships (124,126,131); both are "
               "asserted so the divergence stays visible")


class TestAutodiffCorrectness:
    def test_every_primitive_and_toy_loss(self):
        started = time.monotonic()
        rng = np.random.default_rng(42)
        worst = {}

        def run(name, build, params):
            worst[name] = T.finite_diff_check(build, params, num_samples=64, seed=42)

        run("matmul", lambda p: T.mean_squared_error(T.matmul(p[0], p[1]), np.zeros((4, 6))),
            [rng.normal(size=(4, 5)), rng.normal(size=(5, 6))])
        run("add", lambda p: T.mean_squared_error(T.add(p[0], p[1]), np.ones((5, 3))),
            [rng.normal(size=(5, 3)), rng.normal(size=(3,))])
        run("mul", lambda p: T.mean_squared_error(T.mul(p[0], p[1]), np.zeros((4, 4))),
            [rng.normal(size=(4, 4)), rng.normal(size=(4, 4))])
        run("scale", lambda p: T.mean_squared_error(T.scale(p[0], 1.7), np.zeros((8,))),
            [rng.normal(size=(8,))])
        run("softmax", lambda p: T.mean_squared_error(T.softmax_rows(p[0]), np.zeros((6, 7))),
            [rng.normal(size=(6, 7))])
        run("layer_norm",
            lambda p: T.mean_squared_error(T.layer_norm(p[0], p[1], p[2]), np.zeros((5, 8))),
            [rng.normal(size=(5, 8)), rng.normal(size=(8,)), rng.normal(size=(8,))])
        run("gelu", lambda p: T.mean_squared_error(T.gelu(p[0]), np.zeros((4, 5))),
            [rng.normal(size=(4, 5))])
        run("silu", lambda p: T.mean_squared_error(T.silu(p[0]), np.zeros((4, 5))),
            [rng.normal(size=(4, 5))])
        ids = rng.integers(0, 7, size=(3, 4))
        run("embedding",
            lambda p: T.mean_squared_error(T.embedding_lookup(p[0], ids), np.zeros((3, 4, 5))),
            [rng.normal(size=(7, 5))])
        targets = rng.integers(0, 6, size=8)
        run("cross_entropy", lambda p: T.cross_entropy_loss(p[0], targets),
            [rng.normal(size=(8, 6))])
        run("mse", lambda p: T.mean_squared_error(p[0], p[1]),
            [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))])

        # Full toy-model loss at tiny dims.
        from hydra_rank.toymodel import ToyLoraModel, ToyModelConfig

        cfg = ToyModelConfig(
            num_layers=2, hidden_dim=8, intermediate_dim=10, num_heads=2,
            vocab_size=7, seq_len=4, batch_size=2, steps=1, seed=42,
        )
        schedule = RankSchedule.uniform(2, 2)
        model = ToyLoraModel(cfg, schedule)
        batch_ids = rng.integers(0, 7, (2, 4))
        batch_targets = rng.integers(0, 7, (2, 4))
        keys = [key for key, _ in model.trainable_items()]
        inits = [rng.normal(0.0, 0.05, arr.shape) for _, arr in model.trainable_items()]

        def build_toy(params):
            tape = params[0].tape
            lora = {}
            for key, value in zip(keys, params):
                layer, comp, block = key
                pair = lora.setdefault((layer, comp), [None, None])
                pair[0 if block == "A" else 1] = value
            lora = {k: tuple(v) for k, v in lora.items()}
            loss, _ = model.build_loss(tape, batch_ids, batch_targets, lora_tensors=lora)
            return loss

        worst["toy_model_loss"] = T.finite_diff_check(build_toy, inits, num_samples=64, seed=42)

        elapsed = time.monotonic() - started
        for name, err in worst.items():
            assert err < 1e-4, f"{name}: {err}"
        assert elapsed < 30.0
        report(
            "all primitives and the full toy loss pass central-difference "
            f"checks below 1e-4 (worst {max(worst.values()):.2e}, {elapsed:.1f}s < 30s)"
        )


class TestProfilerRecovery:
    def test_reference_component_means_to_1e9(self):
        records = read_grad_log(TABLE1_LOG)
        means = component_means(records)
        expected = {
            "Down": 1.49, "Gate": 1.47, "Up": 1.67, "K": 0.64,
            "O": 1.43, "Q": 0.63, "V": 1.42,
        }
        for name, target in expected.items():
            got = means[ComponentKind(name)]
            assert got == pytest.approx(target, rel=1e-9, abs=1e-9), name
        report("bundled gradient-log fixture reproduces the reference "
               "component means (1.49, 1.47, 1.67, 0.64, 1.43, 0.63, 1.42) to 1e-9")


class TestPerfmodelLearning:
    def test_beats_half_of_mean_baseline(self, tmp_path):
        started = time.monotonic()
        shape = ModelShape(6, 64, 172)
        partition = StagePartition.from_layer_groups([[1, 2], [3, 4], [5, 6]])
        params = AllocatorParams(16, 2)
        candidates = propose_candidates(partition, params, shape, 200, 42)
        assert len(candidates) == 200
        oracle = SyntheticOracle(r_standard=16, seed=42)
        pairs = [(encode_features(s, 16), oracle.evaluate(s)) for s in candidates]
        model, rep = train(pairs, seed=42, r_standard=16)
        curve = tmp_path / "curve.csv"
        rep.write_csv(str(curve))
        elapsed = time.monotonic() - started
        assert len(rep.train_indices) == 160 and len(rep.val_indices) == 40
        assert rep.final_val_mse < 0.5 * rep.baseline_val_mse
        assert curve.read_text().startswith("epoch,train_loss,val_loss")
        assert elapsed < 120.0
        report(
            f"validation MSE {rep.final_val_mse:.3f} < 0.5 x mean-baseline "
            f"{rep.baseline_val_mse:.3f} on the 200-pair dataset; curves "
            f"written ({elapsed:.1f}s < 120s)"
        )


class TestSearchEffectiveness:
    def test_model_guided_beats_random_and_replay_finds_config4(self):
        started = time.monotonic()
        shape = ModelShape(6, 64, 172)
        partition = StagePartition.from_layer_groups([[1, 2], [3, 4], [5, 6]])
        params = AllocatorParams(16, 2)
        wins = 0
        for seed in range(10):
            oracle = SyntheticOracle(r_standard=16, seed=seed + 100)
            _, state = run_search(
                oracle, partition, params, shape, max_iters=3, batch=8, seed=seed
            )
            baseline = random_search_baseline(
                oracle, partition, params, shape, budget_calls=24, seed=seed
            )
            wins += state.best_score >= baseline
        assert wins >= 8

        replay = ReplayOracle(
            [(ABLATION_CONFIGS[k], ABLATION_METRICS[k]) for k in ABLATION_CONFIGS]
        )
        best, state = run_search(
            replay,
            StagePartition.from_layer_groups([range(1, 9), range(9, 13), range(13, 25)]),
            AllocatorParams(128, 2),
            ModelShape(24, 2048, 5632),
            scalarizer=lambda m: scalarize(m, MMB_WEIGHTS),
            max_iters=2,
            batch=4,
            seed=42,
            candidate_pool=replay.schedules,
        )
        assert best.key() == ABLATION_CONFIGS["config4"].key()
        assert state.best_score == 47.77
        elapsed = time.monotonic() - started
        assert elapsed < 300.0
        report(
            f"model-guided search matched or beat equal-budget random search "
            f"in {wins}/10 seeds (need 8); replay over the four staged "
            f"configs returns config4 at MMB 47.77 ({elapsed:.1f}s < 300s)"
        )


class TestPipelineDeterminism:
    def test_quickstart_byte_identical(self, tmp_path, capsys):
        def quickstart(outdir):
            outdir.mkdir()
            profiles = outdir / "profiles.json"
            part = outdir / "partition.json"
            sched = outdir / "schedule.json"
            pattern = outdir / "pattern.json"
            steps = [
                ["profile", "--preset", "toy-8", "--steps", "20", "--rank", "2",
                 "--seed", "42", "--output", str(profiles)],
                ["partition", "--profiles", str(profiles), "--stages", "3",
                 "--seed", "42", "--output", str(part)],
                ["allocate", "--preset", "toy-8", "--stages-file", str(part),
                 "--delta-d", "2", "--fine", "setting1", "--output", str(sched)],
                ["export", "--schedule", str(sched), "--format", "rank-pattern",
                 "--output", str(pattern)],
            ]
            for argv in steps:
                assert cli_main(argv) == 0, argv
            return [profiles, part, sched, pattern]

        files_a = quickstart(tmp_path / "run_a")
        files_b = quickstart(tmp_path / "run_b")
        capsys.readouterr()
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes(), fa.name
        report("quickstart pipeline (profile, partition, allocate, export) is "
               "byte-identical across two seed-42 runs")
