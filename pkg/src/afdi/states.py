"""Multi-state domain types shared by every stage of the pipeline.

State levels are small non-negative integers with a fixed project-wide
meaning: 0 = normal work, 1 = minor fault, 2 = serious fault.  Raw
percentage metrics are mapped onto levels by a ``DiscretizationSpec``;
the four usage buckets of the default boundaries (0-25, 25-50, 50-75,
75-100 %) collapse onto the three fault states through
``severity_map``.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

__all__ = [
    "ComponentId",
    "StateLevel",
    "StateVector",
    "StateDistribution",
    "DiscretizationSpec",
    "MetricSample",
    "OutOfRangeError",
    "DEFAULT_SEVERITY_MAP",
    "discretize",
    "severity_map",
    "read_metric_samples",
    "write_metric_samples",
]

# A state level is just an int; the alias documents intent in signatures.
StateLevel = int

SCOPE_LEVELS = ("vm", "host")


class OutOfRangeError(ValueError):
    """Raised when a value falls outside the discretization range."""


@dataclass(frozen=True)
class ComponentId:
    """A monitored component: a metric name plus its measurement scope."""

    name: str
    level: str = "vm"

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("component name must be non-empty")
        if self.level not in SCOPE_LEVELS:
            raise ValueError(f"component level must be one of {SCOPE_LEVELS}, got {self.level!r}")

    @property
    def key(self) -> str:
        """Stable string form used in config files, e.g. ``vm.cpu``."""
        return f"{self.level}.{self.name}"

    @classmethod
    def parse(cls, key: str) -> "ComponentId":
        level, sep, name = key.partition(".")
        if not sep:
            raise ValueError(f"component key must look like 'vm.cpu', got {key!r}")
        return cls(name=name, level=level)


@dataclass(frozen=True)
class StateVector:
    """One state level per component, in the model's declared order."""

    assignments: tuple[tuple[ComponentId, int], ...]

    def __post_init__(self) -> None:
        seen = set()
        for comp, lvl in self.assignments:
            if comp in seen:
                raise ValueError(f"duplicate component {comp.key} in state vector")
            seen.add(comp)
            if lvl < 0:
                raise ValueError(f"negative state level {lvl} for {comp.key}")

    @classmethod
    def from_levels(cls, components: Sequence[ComponentId], levels: Sequence[int]) -> "StateVector":
        if len(components) != len(levels):
            raise ValueError(
                f"expected {len(components)} levels, got {len(levels)}"
            )
        return cls(tuple(zip(components, (int(v) for v in levels))))

    @property
    def components(self) -> tuple[ComponentId, ...]:
        return tuple(c for c, _ in self.assignments)

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(v for _, v in self.assignments)

    def level_of(self, component: ComponentId) -> int:
        for comp, lvl in self.assignments:
            if comp == component:
                return lvl
        raise KeyError(component.key)

    def __len__(self) -> int:
        return len(self.assignments)


@dataclass(frozen=True)
class StateDistribution:
    """Probability per state for one component (or for system levels)."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.probs:
            raise ValueError("distribution must have at least one state")
        for p in self.probs:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        total = sum(self.probs)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"distribution sums to {total}, not 1")

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, state: int) -> float:
        return self.probs[state]

    def __iter__(self) -> Iterator[float]:
        return iter(self.probs)


@dataclass(frozen=True)
class DiscretizationSpec:
    """Interval boundaries mapping a percentage metric onto state levels.

    ``boundaries`` are strictly ascending within [0, 100].  Interval i is
    half-open [b_i, b_{i+1}) except the last, which is closed, so every
    value in [b_0, b_last] lands in exactly one interval.  ``levels``
    optionally maps interval index to a level; by default the mapping is
    the identity (interval i -> level i).
    """

    component: ComponentId
    boundaries: tuple[float, ...]
    levels: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.boundaries) < 2:
            raise ValueError("need at least two boundaries")
        for b in self.boundaries:
            if not 0.0 <= b <= 100.0:
                raise ValueError(f"boundary {b} outside [0, 100]")
        for lo, hi in zip(self.boundaries, self.boundaries[1:]):
            if not lo < hi:
                raise ValueError("boundaries must be strictly ascending")
        if self.levels is not None:
            if len(self.levels) != self.num_intervals:
                raise ValueError(
                    f"level table has {len(self.levels)} entries for {self.num_intervals} intervals"
                )
            if any(l < 0 for l in self.levels):
                raise ValueError("levels must be non-negative")

    @property
    def num_intervals(self) -> int:
        return len(self.boundaries) - 1

    @property
    def num_levels(self) -> int:
        if self.levels is None:
            return self.num_intervals
        return max(self.levels) + 1

    def level_for_interval(self, interval: int) -> int:
        if self.levels is None:
            return interval
        return self.levels[interval]


def discretize(value: float, spec: DiscretizationSpec) -> StateLevel:
    """Map a raw percentage value onto the level of its interval.

    Intervals are half-open [lo, hi) except the last, which is closed,
    so a boundary value belongs to the upper interval.  Values outside
    [first boundary, last boundary] raise ``OutOfRangeError``; whether
    to clamp or reject beforehand is the caller's policy.
    """
    bounds = spec.boundaries
    if not bounds[0] <= value <= bounds[-1]:
        raise OutOfRangeError(
            f"{value} outside [{bounds[0]}, {bounds[-1]}] for {spec.component.key}"
        )
    idx = bisect.bisect_right(bounds, value) - 1
    if idx == spec.num_intervals:  # value == top boundary, last interval closed
        idx -= 1
    return spec.level_for_interval(idx)


DEFAULT_SEVERITY_MAP = (0, 0, 1, 2)


def severity_map(usage_level: int, mapping: Sequence[int] = DEFAULT_SEVERITY_MAP) -> StateLevel:
    """Collapse a usage bucket onto a fault state.

    The default table sends the two low-usage buckets to normal, the
    third to minor, and the top bucket to serious; supply ``mapping``
    to override.
    """
    if not 0 <= usage_level < len(mapping):
        raise ValueError(f"usage level {usage_level} outside 0..{len(mapping) - 1}")
    return mapping[usage_level]


@dataclass(frozen=True)
class MetricSample:
    """One timestamped telemetry reading for a component.

    ``value`` is a percent for utilization metrics, transactions/second
    for throughput, and milliseconds for latency.  Out-of-range raw
    utilization values are accepted here and handled by preprocessing.
    """

    timestamp: int
    host_id: str
    vm_id: str | None
    metric: ComponentId
    value: float

    def __post_init__(self) -> None:
        if self.metric.level == "host" and self.vm_id is not None:
            raise ValueError(f"host-level metric {self.metric.key} must not carry vm_id")
        if self.metric.level == "vm" and self.vm_id is None:
            raise ValueError(f"vm-level metric {self.metric.key} requires vm_id")

    def to_json_obj(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "host_id": self.host_id,
            "vm_id": self.vm_id,
            "metric": self.metric.name,
            "value": self.value,
            "level": self.metric.level,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "MetricSample":
        return cls(
            timestamp=int(obj["timestamp"]),
            host_id=obj["host_id"],
            vm_id=obj["vm_id"],
            metric=ComponentId(name=obj["metric"], level=obj["level"]),
            value=float(obj["value"]),
        )


def write_metric_samples(samples: Iterable[MetricSample], path) -> int:
    """Write samples as JSON Lines; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json_obj(), sort_keys=True))
            fh.write("\n")
            n += 1
    return n


def read_metric_samples(path) -> list[MetricSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(MetricSample.from_json_obj(json.loads(line)))
    return samples
