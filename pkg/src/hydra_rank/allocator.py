"""Coarse per-stage rank allocation under the rank-sum budget, plus
fine-grained per-component refinement.

Coarse allocation walks the first stage rank upward from its derived starting
value; earlier stages follow a fixed linear ramp (step delta_d) and the last
stage absorbs the remaining budget. The walk stops when the budget goes
negative or the last stage stops exceeding its predecessor, and the previous
iteration is returned. Fine refinement then shifts individual components off
the shared stage rank by multiples of delta_d.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .core import COMPONENT_ORDER, ComponentKind, ComponentRanks, RankSchedule
from .errors import (
    BudgetTooSmallError,
    NonTerminationError,
    RankUnderflowError,
    ShapeMismatchError,
)
from .partitioner import StagePartition


@dataclass(frozen=True)
class AllocatorParams:
    r_standard: int
    delta_d: int
    max_outer_iterations: int = 10_000

    def __post_init__(self):
        if self.r_standard < 1:
            raise ValueError(f"r_standard must be >= 1, got {self.r_standard}")
        if self.delta_d < 1:
            raise ValueError(f"delta_d must be >= 1, got {self.delta_d}")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    """One step of the coarse walk, kept for the audit trace."""

    stage_ranks: tuple[int, ...]
    n_remain: int
    stopped: bool


@dataclass(frozen=True)
class CoarseAllocation:
    """Per-stage coarse ranks, strictly increasing, within the rank budget."""

    stage_ranks: tuple[int, ...]
    iterations_used: int
    rank_sum: int
    r_standard: int
    delta_d: int
    trace: tuple[IterationRecord, ...] = field(default=(), repr=False)

    def __post_init__(self):
        for a, b in zip(self.stage_ranks, self.stage_ranks[1:]):
            if b <= a:
                raise ValueError(f"stage ranks must strictly increase, got {self.stage_ranks}")
        if any(r < 1 for r in self.stage_ranks):
            raise ValueError(f"stage ranks must be positive, got {self.stage_ranks}")

    def report_dict(self) -> dict:
        return {
            "stage_ranks": list(self.stage_ranks),
            "rank_sum": self.rank_sum,
            "iterations_used": self.iterations_used,
            "r_standard": self.r_standard,
            "delta_d": self.delta_d,
            "trace": [
                {
                    "stage_ranks": list(rec.stage_ranks),
                    "n_remain": rec.n_remain,
                    "stopped": rec.stopped,
                }
                for rec in self.trace
            ],
        }

    def report_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.report_dict(), indent=indent)


@dataclass(frozen=True)
class FineSetting:
    """Per-component signed offsets in units of delta_d (halves allowed)."""

    name: str
    offsets: Mapping[ComponentKind, Fraction]

    def resolve(self, delta_d: int) -> dict[ComponentKind, int]:
        """Turn delta_d-relative offsets into integer rank shifts."""
        resolved: dict[ComponentKind, int] = {}
        for kind, factor in self.offsets.items():
            shift = factor * delta_d
            if shift.denominator != 1:
                raise ValueError(
                    f"{self.name}: offset {factor} for {kind.value} does not "
                    f"resolve to an integer at delta_d={delta_d} (even delta_d required)"
                )
            resolved[kind] = int(shift)
        return resolved

    @classmethod
    def named(cls, name: str) -> "FineSetting":
        key = name.lower()
        if key not in FINE_SETTINGS:
            raise ValueError(
                f"unknown fine setting {name!r}; known: {sorted(FINE_SETTINGS)}"
            )
        return FINE_SETTINGS[key]

    @classmethod
    def custom(cls, offsets: Mapping[ComponentKind, Fraction | int]) -> "FineSetting":
        return cls("custom", {k: Fraction(v) for k, v in offsets.items()})


FINE_SETTINGS: dict[str, FineSetting] = {
    "setting1": FineSetting(
        "setting1",
        {ComponentKind.Q: Fraction(-1), ComponentKind.K: Fraction(-1), ComponentKind.Up: Fraction(1)},
    ),
    "setting2": FineSetting(
        "setting2",
        {
            ComponentKind.Q: Fraction(-1),
            ComponentKind.K: Fraction(-1),
            ComponentKind.Up: Fraction(1),
            ComponentKind.Down: Fraction(1),
        },
    ),
    "setting3": FineSetting(
        "setting3",
        {ComponentKind.Q: Fraction(-1), ComponentKind.K: Fraction(-1)},
    ),
    "setting4": FineSetting(
        "setting4",
        {
            ComponentKind.Q: Fraction(-1, 2),
            ComponentKind.K: Fraction(-1, 2),
            ComponentKind.Up: Fraction(1),
        },
    ),
    "setting5": FineSetting(
        "setting5",
        {ComponentKind.Q: Fraction(-1), ComponentKind.K: Fraction(-1), ComponentKind.Up: Fraction(2)},
    ),
}


def initial_rank(r_standard: int, num_layers: int) -> int:
    """Starting rank for the first stage: the even floor of the budget left
    after reserving one rank step per layer boundary."""
    value = 2 * ((r_standard - (num_layers - 1)) // 2)
    if value <= 0:
        raise BudgetTooSmallError(
            f"r_standard={r_standard} leaves no positive starting rank for "
            f"{num_layers} layers (got {value})"
        )
    return value


def _ranks_for(r1: int, t: int, delta_d: int, sizes: Sequence[int], rank_cap: int) -> tuple[int, ...]:
    if t == 1:
        return (r1,)
    head = [r1 + i * delta_d for i in range(t - 1)]
    used = sum(r * s for r, s in zip(head, sizes[: t - 1]))
    last = (rank_cap - used) // sizes[t - 1]
    return tuple(head + [last])


def allocate_coarse(
    partition: StagePartition, params: AllocatorParams, num_layers: int
) -> CoarseAllocation:
    """Walk the first-stage rank upward until the budget or the ordering
    breaks, then return the previous iteration's allocation."""
    if partition.num_layers != num_layers:
        raise ShapeMismatchError(
            f"partition covers {partition.num_layers} layers, expected {num_layers}"
        )
    sizes = partition.stage_sizes()
    t = len(sizes)
    rank_cap = params.r_standard * num_layers
    r1 = initial_rank(params.r_standard, num_layers)

    trace: list[IterationRecord] = []
    previous: tuple[int, ...] | None = None
    previous_remain = 0
    iterations = 0
    while True:
        iterations += 1
        if iterations > params.max_outer_iterations:
            raise NonTerminationError(
                f"coarse allocation exceeded {params.max_outer_iterations} iterations"
            )
        ranks = _ranks_for(r1, t, params.delta_d, sizes, rank_cap)
        n_remain = rank_cap - sum(r * s for r, s in zip(ranks, sizes))
        stopped = n_remain < 0 or (t > 1 and ranks[-1] <= ranks[-2])
        trace.append(IterationRecord(ranks, n_remain, stopped))
        if stopped:
            if previous is None:
                raise BudgetTooSmallError(
                    f"first iteration already inadmissible: ranks {ranks}, "
                    f"remaining budget {n_remain}"
                )
            return CoarseAllocation(
                stage_ranks=previous,
                iterations_used=iterations,
                rank_sum=rank_cap - previous_remain,
                r_standard=params.r_standard,
                delta_d=params.delta_d,
                trace=tuple(trace),
            )
        previous = ranks
        previous_remain = n_remain
        r1 += 1


def assemble_schedule(coarse: CoarseAllocation, partition: StagePartition) -> RankSchedule:
    """Expand per-stage coarse ranks into a per-layer schedule (all seven
    components equal within a layer)."""
    if len(coarse.stage_ranks) != partition.num_stages:
        raise ShapeMismatchError(
            f"allocation has {len(coarse.stage_ranks)} stages, partition has "
            f"{partition.num_stages}"
        )
    num_layers = partition.num_layers
    covered = set()
    for stage in partition.stages:
        covered |= stage.members
    if covered != set(range(1, num_layers + 1)):
        raise ShapeMismatchError(
            f"partition members {sorted(covered)} do not cover layers 1..{num_layers}"
        )

    base = [0] * num_layers
    for rank, stage in zip(coarse.stage_ranks, partition.stages):
        for layer in stage.members:
            base[layer - 1] = rank
    provenance = {
        "kind": "coarse",
        "stage_ranks": list(coarse.stage_ranks),
        "stage_members": [s.sorted_members() for s in partition.stages],
        "coarse_base": list(base),
        "r_standard": coarse.r_standard,
        "delta_d": coarse.delta_d,
    }
    layers = tuple(ComponentRanks.uniform(r) for r in base)
    return RankSchedule(layers, provenance)


def apply_fine_setting(schedule: RankSchedule, setting: FineSetting, delta_d: int) -> RankSchedule:
    """Shift per-component ranks off a coarse schedule's shared values.

    Guarded by provenance: refining an already-fine schedule is an error,
    never a silent double application.
    """
    kind = schedule.provenance.get("kind")
    if kind == "fine":
        raise ValueError("schedule is already fine-grained; refusing to refine again")
    shifts = setting.resolve(delta_d)
    new_layers = []
    for i, comp_ranks in enumerate(schedule.layers):
        if not comp_ranks.is_coarse:
            raise ValueError(f"layer {i + 1} is not coarse; cannot apply a fine setting")
        base = comp_ranks.values[0]
        values = []
        for comp in COMPONENT_ORDER:
            r = base + shifts.get(comp, 0)
            if r < 1:
                raise RankUnderflowError(
                    f"layer {i + 1} component {comp.value}: rank {r} < 1 "
                    f"(base {base}, setting {setting.name}, delta_d {delta_d})"
                )
            values.append(r)
        new_layers.append(ComponentRanks(tuple(values)))
    provenance = dict(schedule.provenance)
    provenance["kind"] = "fine"
    provenance["fine_setting"] = setting.name
    provenance["fine_delta_d"] = delta_d
    provenance.setdefault(
        "coarse_base", [c.values[0] for c in schedule.layers]
    )
    return RankSchedule(tuple(new_layers), provenance)


def refine_fine(
    coarse: CoarseAllocation,
    partition: StagePartition,
    setting: FineSetting,
    delta_d: int,
) -> RankSchedule:
    """Assemble the coarse schedule and apply a fine setting in one step."""
    return apply_fine_setting(assemble_schedule(coarse, partition), setting, delta_d)
