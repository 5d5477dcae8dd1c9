"""Domain types for rank schedules, budgets, and parameter accounting.

Everything here is pure data plus pure functions; no other module may be
imported. A schedule assigns one rank per (layer, component) pair over the
seven adapted projections of a decoder layer. The budget couples a uniform
baseline rank to the trainable-parameter cap it implies.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import MissingProvenanceError, ShapeMismatchError

SCHEDULE_FORMAT_VERSION = "hydra-schedule/1"


class ComponentKind(str, Enum):
    """The seven adapted projections of a decoder layer, in fixed order."""

    Q = "Q"
    K = "K"
    V = "V"
    O = "O"
    Up = "Up"
    Down = "Down"
    Gate = "Gate"

    @classmethod
    def ordered(cls) -> tuple["ComponentKind", ...]:
        return tuple(cls)


COMPONENT_ORDER = ComponentKind.ordered()


@dataclass(frozen=True)
class ModelShape:
    """Layer count and widths used for trainable-parameter accounting.

    Q/K/V/O are square (hidden -> hidden); Up/Gate map hidden -> intermediate
    and Down maps intermediate -> hidden, the gated-FFN convention.
    """

    num_layers: int
    hidden_dim: int
    intermediate_dim: int

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.intermediate_dim < 1:
            raise ValueError(
                f"intermediate_dim must be >= 1, got {self.intermediate_dim}"
            )

    @property
    def component_dims(self) -> dict[ComponentKind, tuple[int, int]]:
        d, m = self.hidden_dim, self.intermediate_dim
        return {
            ComponentKind.Q: (d, d),
            ComponentKind.K: (d, d),
            ComponentKind.V: (d, d),
            ComponentKind.O: (d, d),
            ComponentKind.Up: (d, m),
            ComponentKind.Down: (m, d),
            ComponentKind.Gate: (d, m),
        }


@dataclass(frozen=True)
class ComponentRanks:
    """Per-component rank values for one layer, stored in component order."""

    values: tuple[int, int, int, int, int, int, int]

    def __post_init__(self):
        if len(self.values) != len(COMPONENT_ORDER):
            raise ValueError("expected exactly seven component ranks")
        for kind, r in zip(COMPONENT_ORDER, self.values):
            if not isinstance(r, int) or isinstance(r, bool):
                raise ValueError(f"rank for {kind.value} must be an integer")
            if r < 0:
                raise ValueError(f"rank for {kind.value} must be >= 0, got {r}")

    @classmethod
    def uniform(cls, rank: int) -> "ComponentRanks":
        return cls((rank,) * 7)

    @classmethod
    def from_mapping(cls, ranks: Mapping[ComponentKind | str, int]) -> "ComponentRanks":
        vals = []
        for kind in COMPONENT_ORDER:
            if kind in ranks:
                vals.append(ranks[kind])
            elif kind.value in ranks:
                vals.append(ranks[kind.value])
            else:
                raise ValueError(f"missing rank for component {kind.value}")
        return cls(tuple(vals))

    def __getitem__(self, kind: ComponentKind) -> int:
        return self.values[COMPONENT_ORDER.index(kind)]

    def as_dict(self) -> dict[str, int]:
        return {k.value: v for k, v in zip(COMPONENT_ORDER, self.values)}

    @property
    def is_coarse(self) -> bool:
        return len(set(self.values)) == 1


@dataclass(frozen=True)
class RankSchedule:
    """Ordered per-layer component ranks plus a provenance record.

    Provenance carries how the schedule was produced (stage partition,
    allocator settings, per-layer coarse base) and is treated as opaque,
    JSON-serializable data. Do not mutate it after construction.
    """

    layers: tuple[ComponentRanks, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not all(isinstance(c, ComponentRanks) for c in self.layers):
            raise ValueError("layers must be ComponentRanks instances")

    @classmethod
    def uniform(cls, rank: int, num_layers: int, provenance: dict | None = None) -> "RankSchedule":
        prov = {"kind": "uniform", "rank": rank} if provenance is None else provenance
        return cls(tuple(ComponentRanks.uniform(rank) for _ in range(num_layers)), prov)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def key(self) -> tuple:
        """Hashable identity of the rank assignment (provenance excluded)."""
        return tuple(c.values for c in self.layers)

    def to_dict(self) -> dict:
        return {
            "version": SCHEDULE_FORMAT_VERSION,
            "num_layers": self.num_layers,
            "layers": [c.as_dict() for c in self.layers],
            "provenance": self.provenance,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RankSchedule":
        version = data.get("version")
        if version != SCHEDULE_FORMAT_VERSION:
            raise ValueError(f"unsupported schedule version: {version!r}")
        layers = tuple(ComponentRanks.from_mapping(entry) for entry in data["layers"])
        declared = data.get("num_layers")
        if declared is not None and declared != len(layers):
            raise ValueError(
                f"num_layers field ({declared}) disagrees with layers array ({len(layers)})"
            )
        return cls(layers, dict(data.get("provenance", {})))

    @classmethod
    def from_json(cls, text: str) -> "RankSchedule":
        return cls.from_dict(json.loads(text))


def schedule_hash(schedule: RankSchedule) -> str:
    """Stable hex digest of the rank assignment, ignoring provenance."""
    canon = json.dumps([c.as_dict() for c in schedule.layers], sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Budget:
    """Trainable-parameter cap derived from the uniform baseline rank.

    param_cap is always computed from (shape, r_standard), never supplied,
    so the baseline schedule is admissible by construction. rank_cap bounds
    the per-layer coarse rank sum at r_standard * num_layers.
    """

    r_standard: int
    param_cap: int
    rank_cap: int

    @classmethod
    def for_shape(cls, shape: ModelShape, r_standard: int) -> "Budget":
        if r_standard < 1:
            raise ValueError(f"r_standard must be >= 1, got {r_standard}")
        baseline = RankSchedule.uniform(r_standard, shape.num_layers)
        return cls(
            r_standard=r_standard,
            param_cap=param_count(baseline, shape),
            rank_cap=r_standard * shape.num_layers,
        )


def param_count(schedule: RankSchedule, shape: ModelShape) -> int:
    """Total adapter parameters: sum over layers and components of r*(in+out)."""
    if schedule.num_layers != shape.num_layers:
        raise ShapeMismatchError(
            f"schedule has {schedule.num_layers} layers, shape has {shape.num_layers}"
        )
    dims = shape.component_dims
    total = 0
    for comp_ranks in schedule.layers:
        for kind, r in zip(COMPONENT_ORDER, comp_ranks.values):
            d_in, d_out = dims[kind]
            total += r * (d_in + d_out)
    return total


def layer_coarse_base(schedule: RankSchedule, layer_index: int) -> int:
    """One rank value for a layer: its common value, or the recorded coarse base.

    layer_index is 0-based. Raises MissingProvenanceError for a fine layer
    whose schedule records no per-layer coarse base.
    """
    comp = schedule.layers[layer_index]
    if comp.is_coarse:
        return comp.values[0]
    base = schedule.provenance.get("coarse_base")
    if base is None or len(base) != schedule.num_layers:
        raise MissingProvenanceError(
            f"layer {layer_index + 1} has mixed component ranks and no "
            "coarse_base recorded in provenance"
        )
    return int(base[layer_index])


def rank_total(schedule: RankSchedule) -> int:
    """Sum of one rank value per layer (the coarse-budget quantity)."""
    if schedule.num_layers == 0:
        raise ShapeMismatchError("schedule is empty")
    return sum(layer_coarse_base(schedule, i) for i in range(schedule.num_layers))


def rank_total_all_components(schedule: RankSchedule) -> int:
    """Diagnostic sum over every (layer, component) rank entry."""
    if schedule.num_layers == 0:
        raise ShapeMismatchError("schedule is empty")
    return sum(sum(c.values) for c in schedule.layers)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def admissible(self) -> bool:
        return not self.violations


def validate(schedule: RankSchedule, shape: ModelShape, budget: Budget) -> ValidationReport:
    """Check a schedule against a shape and budget; violations are data."""
    violations: list[str] = []
    if schedule.num_layers != shape.num_layers:
        violations.append(
            f"length mismatch: schedule has {schedule.num_layers} layers, "
            f"shape has {shape.num_layers}"
        )
        return ValidationReport(tuple(violations))
    for i, comp_ranks in enumerate(schedule.layers):
        for kind, r in zip(COMPONENT_ORDER, comp_ranks.values):
            if r < 1:
                violations.append(f"layer {i + 1} component {kind.value} has rank {r} < 1")
    count = param_count(schedule, shape)
    if count > budget.param_cap:
        violations.append(
            f"param_count {count} exceeds cap {budget.param_cap}"
        )
    return ValidationReport(tuple(violations))
