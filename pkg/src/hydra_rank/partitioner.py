"""Stage partitioning: 1-D k-means over per-layer mean gradient norms.

The clustering is deliberately deterministic. Centroids start at k evenly
spaced quantiles of the sorted values, Lloyd iterations run to an assignment
fixpoint (or 100 sweeps), and distance ties break toward the lower-centroid
cluster. The seed parameter is reserved for tie perturbation and is not
consumed by the current implementation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidKError

MAX_SWEEPS = 100


@dataclass(frozen=True)
class Stage:
    """A cluster of layers sharing one coarse rank."""

    members: frozenset[int]
    centroid: float

    def __post_init__(self):
        if not self.members:
            raise ValueError("stage must contain at least one layer")
        if not np.isfinite(self.centroid):
            raise ValueError("stage centroid must be finite")

    @property
    def size(self) -> int:
        return len(self.members)

    def sorted_members(self) -> list[int]:
        return sorted(self.members)


@dataclass(frozen=True)
class StagePartition:
    """Ordered stages, ascending by centroid, jointly covering all layers."""

    stages: tuple[Stage, ...]

    def __post_init__(self):
        seen: set[int] = set()
        for stage in self.stages:
            overlap = seen & stage.members
            if overlap:
                raise ValueError(f"layers {sorted(overlap)} appear in multiple stages")
            seen |= stage.members
        for a, b in zip(self.stages, self.stages[1:]):
            if b.centroid < a.centroid:
                raise ValueError("stages must be sorted ascending by centroid")

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def num_layers(self) -> int:
        return sum(s.size for s in self.stages)

    def stage_sizes(self) -> tuple[int, ...]:
        return tuple(s.size for s in self.stages)

    def stage_of_layer(self) -> dict[int, int]:
        """Map layer index -> 0-based stage position."""
        out: dict[int, int] = {}
        for i, stage in enumerate(self.stages):
            for layer in stage.members:
                out[layer] = i
        return out

    def to_dict(self) -> dict:
        return {
            "num_stages": self.num_stages,
            "stages": [
                {"members": s.sorted_members(), "centroid": s.centroid}
                for s in self.stages
            ],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "StagePartition":
        stages = tuple(
            Stage(frozenset(entry["members"]), float(entry["centroid"]))
            for entry in data["stages"]
        )
        declared = data.get("num_stages")
        if declared is not None and declared != len(stages):
            raise ValueError(
                f"num_stages field ({declared}) disagrees with stages array ({len(stages)})"
            )
        return cls(stages)

    @classmethod
    def from_json(cls, text: str) -> "StagePartition":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_layer_groups(
        cls, groups: Sequence[Iterable[int]], centroids: Sequence[float] | None = None
    ) -> "StagePartition":
        """Build a partition from explicit layer groups (used for presets).

        Without centroids, group position stands in for the centroid so the
        declared order is preserved.
        """
        if centroids is None:
            centroids = [float(i) for i in range(len(groups))]
        return cls(
            tuple(Stage(frozenset(g), float(c)) for g, c in zip(groups, centroids))
        )


def quantile_init_centroids(values: Sequence[float], k: int) -> np.ndarray:
    """Initial centroids: k evenly spaced quantiles of the sorted values."""
    qs = [(j + 0.5) / k for j in range(k)]
    return np.quantile(np.sort(np.asarray(values, dtype=float)), qs)


def assign_to_centroids(values: Sequence[float], centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid assignment; ties go to the lower-centroid cluster.

    Centroids must be in ascending order; with that ordering np.argmin's
    first-minimum rule implements the tie break.
    """
    v = np.asarray(values, dtype=float)
    dist = np.abs(v[:, None] - centroids[None, :])
    return np.argmin(dist, axis=1)


def _repair_empty_clusters(assignment: np.ndarray, values: np.ndarray, centroids: np.ndarray, k: int) -> np.ndarray:
    """Move one point into each empty cluster, deterministically.

    Donor is the most populous cluster (ties: lowest index); the moved point
    is the donor member closest to the empty centroid (ties: lowest index).
    """
    assignment = assignment.copy()
    for j in range(k):
        if np.any(assignment == j):
            continue
        counts = np.bincount(assignment, minlength=k)
        donor = int(np.argmax(counts))
        members = np.flatnonzero(assignment == donor)
        pick = members[int(np.argmin(np.abs(values[members] - centroids[j])))]
        assignment[pick] = j
    return assignment


def kmeans_1d(values: Sequence[float], k: int, seed: int = 42) -> tuple[np.ndarray, np.ndarray]:
    """Cluster scalars with Lloyd's algorithm.

    Returns (assignment, centroids) with clusters renumbered so centroids
    ascend; equal centroids order by their smallest member index. The seed
    is accepted for interface stability but unused (init is deterministic).
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    if k < 1:
        raise InvalidKError(f"k must be >= 1, got {k}")
    if k > n:
        raise InvalidKError(f"k ({k}) exceeds number of values ({n})")

    centroids = quantile_init_centroids(v, k)
    prev = None
    for _ in range(MAX_SWEEPS):
        assignment = assign_to_centroids(v, centroids)
        assignment = _repair_empty_clusters(assignment, v, centroids, k)
        if prev is not None and np.array_equal(assignment, prev):
            break
        prev = assignment
        centroids = np.array([v[assignment == j].mean() for j in range(k)])
        order = np.argsort(centroids, kind="stable")
        centroids = centroids[order]
        relabel = np.empty(k, dtype=int)
        relabel[order] = np.arange(k)
        prev = relabel[prev]

    assignment = prev
    centroids = np.array([v[assignment == j].mean() for j in range(k)])
    # Final renumbering: ascending centroid, ties by smallest member index.
    first_member = np.array([int(np.flatnonzero(assignment == j)[0]) for j in range(k)])
    order = np.lexsort((first_member, centroids))
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    return relabel[assignment], centroids[order]


def within_cluster_ss(values: Sequence[float], assignment: Sequence[int]) -> float:
    """Within-cluster sum of squares of an assignment (cluster mean centers)."""
    v = np.asarray(values, dtype=float)
    a = np.asarray(assignment, dtype=int)
    total = 0.0
    for j in np.unique(a):
        member = v[a == j]
        total += float(np.sum((member - member.mean()) ** 2))
    return total


def partition_stages(profiles: Sequence, num_stages: int, seed: int = 42) -> StagePartition:
    """Group layers into stages by k-means over their mean gradient norms.

    profiles need .layer and .mean_norm attributes; input order is irrelevant.
    """
    ordered = sorted(profiles, key=lambda p: p.layer)
    layers = [p.layer for p in ordered]
    if len(set(layers)) != len(layers):
        raise ValueError("duplicate layer indices in profiles")
    norms = [p.mean_norm for p in ordered]
    assignment, centroids = kmeans_1d(norms, num_stages, seed=seed)
    stages = []
    for j in range(num_stages):
        members = frozenset(layers[i] for i in np.flatnonzero(assignment == j))
        stages.append(Stage(members, float(centroids[j])))
    return StagePartition(tuple(stages))
