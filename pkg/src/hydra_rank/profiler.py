"""Per-layer and per-component average gradient norms.

Profiles come either from an external gradient-norm log (JSON Lines, one
record per adapter parameter block per step) or from running the built-in
toy trainer. Aggregation is a plain mean over every record of a layer, so
duplicating or permuting the log never changes a profile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .core import COMPONENT_ORDER, ComponentKind, RankSchedule
from .errors import EmptyInputError, MalformedRecordError
from .toymodel import ToyModelConfig, train_toy_lora

VALID_COMPONENTS = {k.value for k in COMPONENT_ORDER}


@dataclass(frozen=True)
class GradLogRecord:
    step: int
    layer: int
    component: ComponentKind
    grad_norm: float

    def __post_init__(self):
        if self.layer < 1:
            raise ValueError(f"layer index must be >= 1, got {self.layer}")
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")
        if not math.isfinite(self.grad_norm) or self.grad_norm < 0:
            raise ValueError(f"grad_norm must be finite and >= 0, got {self.grad_norm}")

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "layer": self.layer,
                "component": self.component.value,
                "grad_norm": self.grad_norm,
            }
        )


@dataclass(frozen=True)
class LayerGradProfile:
    layer: int
    mean_norm: float
    component_means: dict[ComponentKind, float]
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "mean_norm": self.mean_norm,
            "component_means": {k.value: v for k, v in self.component_means.items()},
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LayerGradProfile":
        return cls(
            layer=int(data["layer"]),
            mean_norm=float(data["mean_norm"]),
            component_means={
                ComponentKind(k): float(v) for k, v in data["component_means"].items()
            },
            sample_count=int(data["sample_count"]),
        )


def profiles_to_json(profiles: Sequence[LayerGradProfile], indent: int | None = 2) -> str:
    return json.dumps({"profiles": [p.to_dict() for p in profiles]}, indent=indent)


def profiles_from_json(text: str) -> list[LayerGradProfile]:
    return [LayerGradProfile.from_dict(d) for d in json.loads(text)["profiles"]]


def parse_grad_log_lines(lines: Iterable[str]) -> Iterator[GradLogRecord]:
    """Parse JSONL gradient-log lines; unknown keys are ignored, anything
    else malformed raises with the 1-based line number."""
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(f"invalid JSON ({exc.msg})", line=lineno) from exc
        comp = raw.get("component")
        if comp not in VALID_COMPONENTS:
            raise MalformedRecordError(f"unknown component {comp!r}", line=lineno)
        try:
            record = GradLogRecord(
                step=int(raw["step"]),
                layer=int(raw["layer"]),
                component=ComponentKind(comp),
                grad_norm=float(raw["grad_norm"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecordError(str(exc), line=lineno) from exc
        yield record


def read_grad_log(path: str) -> list[GradLogRecord]:
    with open(path) as fh:
        return list(parse_grad_log_lines(fh))


def write_grad_log(path: str, records: Iterable[GradLogRecord]) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(record.to_json_line() + "\n")


def ingest_grad_log(records: Iterable[GradLogRecord]) -> list[LayerGradProfile]:
    """Aggregate records into one profile per layer, ordered by layer index.

    mean_norm averages every record of the layer across steps and
    components; component_means average within each component.
    """
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    comp_sums: dict[int, dict[ComponentKind, float]] = {}
    comp_counts: dict[int, dict[ComponentKind, int]] = {}
    for record in records:
        if not math.isfinite(record.grad_norm) or record.grad_norm < 0:
            raise MalformedRecordError(
                f"grad_norm {record.grad_norm} for layer {record.layer}"
            )
        layer = record.layer
        sums[layer] = sums.get(layer, 0.0) + record.grad_norm
        counts[layer] = counts.get(layer, 0) + 1
        comp_sums.setdefault(layer, {}).setdefault(record.component, 0.0)
        comp_counts.setdefault(layer, {}).setdefault(record.component, 0)
        comp_sums[layer][record.component] += record.grad_norm
        comp_counts[layer][record.component] += 1
    if not counts:
        raise EmptyInputError("gradient log contains no records")
    profiles = []
    for layer in sorted(counts):
        component_means = {
            comp: comp_sums[layer][comp] / comp_counts[layer][comp]
            for comp in COMPONENT_ORDER
            if comp in comp_sums[layer]
        }
        profiles.append(
            LayerGradProfile(
                layer=layer,
                mean_norm=sums[layer] / counts[layer],
                component_means=component_means,
                sample_count=counts[layer],
            )
        )
    return profiles


def component_means(records: Iterable[GradLogRecord]) -> dict[ComponentKind, float]:
    """Overall per-component means across every layer and step."""
    sums: dict[ComponentKind, float] = {}
    counts: dict[ComponentKind, int] = {}
    for record in records:
        sums[record.component] = sums.get(record.component, 0.0) + record.grad_norm
        counts[record.component] = counts.get(record.component, 0) + 1
    if not counts:
        raise EmptyInputError("gradient log contains no records")
    return {comp: sums[comp] / counts[comp] for comp in COMPONENT_ORDER if comp in counts}


def toy_records_to_grad_log(raw: Iterable[tuple[int, int, str, float]]) -> list[GradLogRecord]:
    return [
        GradLogRecord(step=s, layer=l, component=ComponentKind(c), grad_norm=n)
        for s, l, c, n in raw
    ]


def profile_toy_model(
    config: ToyModelConfig,
    schedule: RankSchedule | None = None,
    rank: int = 4,
) -> tuple[list[LayerGradProfile], list[GradLogRecord]]:
    """Train the toy model and aggregate its adapter gradient norms.

    Deterministic for a fixed config. When no schedule is given, a uniform
    schedule at `rank` is used. Returns (profiles, raw log records) so the
    log can be re-exported in the JSONL format.
    """
    if config.num_layers < 2:
        raise ValueError("profiling needs at least 2 layers")
    if config.steps < 1:
        raise ValueError("profiling needs at least 1 step")
    if schedule is None:
        schedule = RankSchedule.uniform(rank, config.num_layers)
    result = train_toy_lora(config, schedule)
    records = toy_records_to_grad_log(result.grad_records)
    return ingest_grad_log(records), records
