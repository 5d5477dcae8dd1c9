#!/usr/bin/env python3
"""End-to-end pipeline on the toy preset: profile gradient norms, partition
layers into stages, allocate ranks, and export the rank-pattern config.

Usage: python scripts/quickstart.py [outdir] [--steps N] [--seed S]
"""

import argparse
import pathlib
import sys

from hydra_rank.cli import main as cli


def run(argv):
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("outdir", nargs="?", default="quickstart_out")
    parser.add_argument("--steps", type=int, default=50)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    out = pathlib.Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    profiles = out / "profiles.json"
    partition = out / "partition.json"
    schedule = out / "schedule.json"
    pattern = out / "pattern.json"
    seed = str(args.seed)

    run(["profile", "--preset", "toy-8", "--steps", str(args.steps), "--rank", "2",
         "--seed", seed, "--output", str(profiles),
         "--grad-log-out", str(out / "grad_log.jsonl")])
    run(["partition", "--profiles", str(profiles), "--stages", "3",
         "--seed", seed, "--output", str(partition)])
    run(["allocate", "--preset", "toy-8", "--stages-file", str(partition),
         "--delta-d", "2", "--fine", "setting1",
         "--report", str(out / "allocation_report.json"), "--output", str(schedule)])
    run(["export", "--schedule", str(schedule), "--format", "rank-pattern",
         "--output", str(pattern)])
    run(["validate", "--schedule", str(schedule), "--preset", "toy-8",
         "--output", str(out / "validation.json")])
    print(f"wrote pipeline outputs to {out}/")


if __name__ == "__main__":
    main()
