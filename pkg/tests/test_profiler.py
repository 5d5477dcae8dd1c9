import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydra_rank.core import ComponentKind
from hydra_rank.errors import EmptyInputError, MalformedRecordError
from hydra_rank.profiler import (
    GradLogRecord,
    component_means,
    ingest_grad_log,
    parse_grad_log_lines,
    profile_toy_model,
    profiles_from_json,
    profiles_to_json,
    read_grad_log,
    write_grad_log,
)
from hydra_rank.toymodel import ToyModelConfig

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
TABLE1_LOG = os.path.join(DATA_DIR, "table1_gradlog.jsonl")

# Reference per-component means baked into the bundled fixture log.
TABLE1_MEANS = {
    "Down": 1.49,
    "Gate": 1.47,
    "Up": 1.67,
    "K": 0.64,
    "O": 1.43,
    "Q": 0.63,
    "V": 1.42,
}


def rec(layer, comp, norm, step=0):
    return GradLogRecord(step=step, layer=layer, component=ComponentKind(comp), grad_norm=norm)


def spearman(xs, ys):
    def ranks(v):
        order = np.argsort(v, kind="stable")
        out = np.empty(len(v))
        out[order] = np.arange(len(v))
        return out

    rx, ry = ranks(np.asarray(xs)), ranks(np.asarray(ys))
    return float(np.corrcoef(rx, ry)[0, 1])


class TestIngest:
    def test_mean_of_two_records(self):
        profiles = ingest_grad_log([rec(1, "Q", 3.0), rec(1, "K", 4.0)])
        assert len(profiles) == 1
        assert profiles[0].mean_norm == pytest.approx(3.5)
        assert profiles[0].sample_count == 2

    def test_single_record_identity(self):
        profiles = ingest_grad_log([rec(2, "Up", 1.67)])
        assert profiles[0].layer == 2
        assert profiles[0].mean_norm == pytest.approx(1.67)

    def test_empty_stream(self):
        with pytest.raises(EmptyInputError):
            ingest_grad_log([])

    def test_profiles_ordered_by_layer(self):
        profiles = ingest_grad_log([rec(5, "Q", 1.0), rec(1, "Q", 2.0), rec(3, "Q", 3.0)])
        assert [p.layer for p in profiles] == [1, 3, 5]

    def test_reference_fixture_component_means(self):
        records = read_grad_log(TABLE1_LOG)
        means = component_means(records)
        for name, expected in TABLE1_MEANS.items():
            assert means[ComponentKind(name)] == pytest.approx(expected, rel=1e-9)

    def test_reference_fixture_component_ordering(self):
        records = read_grad_log(TABLE1_LOG)
        means = {k.value: v for k, v in component_means(records).items()}
        assert means["Up"] > means["Down"] > means["Gate"] > means["O"] > means["V"]
        assert means["V"] > means["K"] > means["Q"]
        assert abs(means["K"] - means["Q"]) < 0.05

    @given(st.data())
    @settings(max_examples=40)
    def test_duplication_leaves_means_unchanged(self, data):
        records = [
            rec(
                data.draw(st.integers(1, 4)),
                data.draw(st.sampled_from(["Q", "K", "V", "O", "Up", "Down", "Gate"])),
                data.draw(st.floats(0, 10, allow_nan=False)),
            )
            for _ in range(data.draw(st.integers(1, 20)))
        ]
        once = ingest_grad_log(records)
        twice = ingest_grad_log(records + records)
        assert [p.layer for p in once] == [p.layer for p in twice]
        for a, b in zip(once, twice):
            assert math.isclose(a.mean_norm, b.mean_norm, rel_tol=1e-9, abs_tol=1e-12)

    @given(st.data())
    @settings(max_examples=40)
    def test_permutation_invariance(self, data):
        records = [
            rec(
                data.draw(st.integers(1, 4)),
                data.draw(st.sampled_from(["Q", "K", "V", "O", "Up", "Down", "Gate"])),
                data.draw(st.floats(0, 10, allow_nan=False)),
                step=i,
            )
            for i in range(data.draw(st.integers(1, 15)))
        ]
        perm = data.draw(st.permutations(records))
        a = ingest_grad_log(records)
        b = ingest_grad_log(perm)
        for pa, pb in zip(a, b):
            assert pa.layer == pb.layer
            assert math.isclose(pa.mean_norm, pb.mean_norm, rel_tol=1e-9, abs_tol=1e-12)

    def test_component_means_within_raw_range(self):
        records = [rec(1, "Q", v) for v in [0.5, 1.5, 2.5]] + [rec(1, "Up", 9.0)]
        profile = ingest_grad_log(records)[0]
        assert 0.5 <= profile.component_means[ComponentKind.Q] <= 2.5
        assert profile.component_means[ComponentKind.Up] == 9.0


class TestJsonlFormat:
    def test_unknown_keys_ignored(self):
        line = json.dumps(
            {"step": 0, "layer": 1, "component": "Q", "grad_norm": 0.63, "extra": "x"}
        )
        records = list(parse_grad_log_lines([line]))
        assert records[0].grad_norm == 0.63

    def test_unknown_component_named_line(self):
        lines = [
            json.dumps({"step": 0, "layer": 1, "component": "Q", "grad_norm": 1.0}),
            json.dumps({"step": 0, "layer": 1, "component": "W", "grad_norm": 1.0}),
        ]
        with pytest.raises(MalformedRecordError) as exc:
            list(parse_grad_log_lines(lines))
        assert "line 2" in str(exc.value)

    def test_nan_norm_rejected(self):
        line = '{"step": 0, "layer": 1, "component": "Q", "grad_norm": NaN}'
        with pytest.raises(MalformedRecordError):
            list(parse_grad_log_lines([line]))

    def test_negative_norm_rejected(self):
        line = json.dumps({"step": 0, "layer": 1, "component": "Q", "grad_norm": -1.0})
        with pytest.raises(MalformedRecordError) as exc:
            list(parse_grad_log_lines([line]))
        assert "line 1" in str(exc.value)

    def test_write_read_round_trip(self, tmp_path):
        records = [rec(1, "Q", 0.5), rec(2, "Up", 1.25, step=3)]
        path = tmp_path / "log.jsonl"
        write_grad_log(str(path), records)
        assert read_grad_log(str(path)) == records

    def test_profiles_json_round_trip(self):
        profiles = ingest_grad_log([rec(1, "Q", 3.0), rec(1, "K", 4.0), rec(2, "V", 1.0)])
        again = profiles_from_json(profiles_to_json(profiles))
        assert again == profiles


class TestToyProfiling:
    def test_four_layer_single_step_positive(self):
        cfg = ToyModelConfig(
            num_layers=4, hidden_dim=16, intermediate_dim=24, num_heads=2,
            vocab_size=17, seq_len=6, batch_size=4, steps=1, seed=42,
        )
        profiles, records = profile_toy_model(cfg)
        assert len(profiles) == 4
        assert all(p.mean_norm > 0 for p in profiles)
        assert len(records) == 4 * 7 * 2

    def test_deterministic_across_runs(self):
        cfg = ToyModelConfig(
            num_layers=3, hidden_dim=16, intermediate_dim=24, num_heads=2,
            vocab_size=17, seq_len=6, batch_size=4, steps=4, seed=42,
        )
        a, _ = profile_toy_model(cfg)
        b, _ = profile_toy_model(cfg)
        assert a == b

    def test_config_validation(self):
        with pytest.raises(ValueError):
            profile_toy_model(
                ToyModelConfig(num_layers=1, hidden_dim=8, intermediate_dim=8,
                               num_heads=2, vocab_size=8, seq_len=4, batch_size=2, steps=1)
            )

    @pytest.mark.slow
    def test_depth_correlation_reproducible(self):
        # Default 8-layer config, 200 steps, seed 42. The frozen value keeps
        # the run-to-run contract honest. At this scale the correlation is
        # negative (norms peak mid-stack), unlike the rising-with-depth
        # profile reported for full-size models; see README.
        profiles, _ = profile_toy_model(ToyModelConfig())
        rho = spearman([p.layer for p in profiles], [p.mean_norm for p in profiles])
        assert rho == pytest.approx(EXPECTED_DEPTH_SPEARMAN, abs=1e-9)


# Frozen from a reference run of profile_toy_model(ToyModelConfig()).
EXPECTED_DEPTH_SPEARMAN = -0.6666666666666669
