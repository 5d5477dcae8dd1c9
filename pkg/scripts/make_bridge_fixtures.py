#!/usr/bin/env python3
"""Regenerate frontend/test/fixtures: rank-pattern exports plus the exact
parameter totals the scheduler computes for each, so the bridge's
independent recount can be checked by integer equality."""

import json
import os

from hydra_rank.allocator import AllocatorParams, FineSetting, allocate_coarse, assemble_schedule, refine_fine
from hydra_rank.cli import schedule_to_rank_pattern
from hydra_rank.core import ModelShape, RankSchedule, param_count
from hydra_rank.partitioner import StagePartition
from hydra_rank.presets import coarse_preset

OUTDIR = os.path.join(os.path.dirname(__file__), "..", "frontend", "test", "fixtures")


def main() -> None:
    os.makedirs(OUTDIR, exist_ok=True)
    entries = []

    def emit(name, schedule, shape):
        with open(os.path.join(OUTDIR, name + ".json"), "w") as fh:
            json.dump(schedule_to_rank_pattern(schedule), fh, indent=2)
            fh.write("\n")
        entries.append(
            {
                "pattern": name + ".json",
                "num_layers": shape.num_layers,
                "hidden_dim": shape.hidden_dim,
                "intermediate_dim": shape.intermediate_dim,
                "expected_params": param_count(schedule, shape),
            }
        )

    mobile = ModelShape(24, 2048, 5632)
    toy = ModelShape(8, 64, 172)

    partition, alloc = coarse_preset("paper-config4")
    emit("paper_config4_coarse", assemble_schedule(alloc, partition), mobile)
    emit("paper_config4_setting1", refine_fine(alloc, partition, FineSetting.named("setting1"), 2), mobile)
    emit("uniform_128", RankSchedule.uniform(128, 24), mobile)

    toy_partition = StagePartition.from_layer_groups(
        [[1, 2, 3], [4, 5], [6, 7, 8]], centroids=[0.1, 0.5, 0.9]
    )
    toy_alloc = allocate_coarse(toy_partition, AllocatorParams(16, 2), 8)
    emit("toy8_setting2", refine_fine(toy_alloc, toy_partition, FineSetting.named("setting2"), 2), toy)

    with open(os.path.join(OUTDIR, "fixtures.json"), "w") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(entries)} fixtures to {OUTDIR}")


if __name__ == "__main__":
    main()
