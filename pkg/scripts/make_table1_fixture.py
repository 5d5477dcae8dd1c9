#!/usr/bin/env python3
"""Regenerate tests/data/table1_gradlog.jsonl.

The log is synthesized so that each component's overall mean equals a fixed
reference value exactly (up to float rounding): every (layer, step) pair
contributes two records mu+d and mu-d, which cancel in the mean.
"""

import json
import os

import numpy as np

COMPONENT_TARGET_MEANS = {
    "Down": 1.49,
    "Gate": 1.47,
    "Up": 1.67,
    "K": 0.64,
    "O": 1.43,
    "Q": 0.63,
    "V": 1.42,
}
NUM_LAYERS = 24
NUM_STEPS = 5
SEED = 42


def main() -> None:
    rng = np.random.default_rng(SEED)
    out_path = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "table1_gradlog.jsonl")
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    lines = []
    for step in range(NUM_STEPS):
        for layer in range(1, NUM_LAYERS + 1):
            for comp, mu in COMPONENT_TARGET_MEANS.items():
                d = 0.2 * float(rng.random())
                for norm in (mu + d, mu - d):
                    lines.append(
                        json.dumps(
                            {"step": step, "layer": layer, "component": comp, "grad_norm": norm}
                        )
                    )
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} records to {out_path}")


if __name__ == "__main__":
    main()
