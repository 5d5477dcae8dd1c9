#!/usr/bin/env python3
"""Compare model-guided schedule search against equal-budget random search
over a batch of seeds and print a per-seed table plus the win count.

Usage: python scripts/search_vs_random.py [--seeds N] [--iters 3] [--batch 8]
"""

import argparse

from hydra_rank.allocator import AllocatorParams
from hydra_rank.core import ModelShape
from hydra_rank.partitioner import StagePartition
from hydra_rank.search import SyntheticOracle, random_search_baseline, run_search


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--iters", type=int, default=3)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--oracle-seed-base", type=int, default=100)
    args = parser.parse_args()

    shape = ModelShape(6, 64, 172)
    partition = StagePartition.from_layer_groups([[1, 2], [3, 4], [5, 6]])
    params = AllocatorParams(16, 2)
    budget = args.iters * args.batch

    wins = 0
    print(f"{'seed':>4}  {'search':>9}  {'random':>9}  result")
    for seed in range(args.seeds):
        oracle = SyntheticOracle(r_standard=16, seed=seed + args.oracle_seed_base)
        _, state = run_search(
            oracle, partition, params, shape,
            max_iters=args.iters, batch=args.batch, seed=seed,
        )
        baseline = random_search_baseline(
            oracle, partition, params, shape, budget_calls=budget, seed=seed
        )
        won = state.best_score >= baseline
        wins += won
        print(f"{seed:>4}  {state.best_score:>9.4f}  {baseline:>9.4f}  "
              f"{'search' if won else 'random'}")
    print(f"\nsearch matched or beat random in {wins}/{args.seeds} seeds "
          f"({budget} oracle calls each)")


if __name__ == "__main__":
    main()
