"""Deterministic synthetic telemetry with labeled fault injection.

A scenario fixes a seed, a topology, per-metric baselines with uniform
jitter, and a list of fault injections.  Each (host, vm) scope draws
from its own generator, subseeded from the scenario seed by SHA-256, so
scopes can be generated independently and in parallel without changing
a single byte of output.  The generator algorithm is recorded in the
run metadata (``mt19937``, the stdlib Mersenne Twister).

Fault kinds and their effect over the injection span:

- ``cpu_hog``        VM cpu jumps to 75 + 25*intensity percent.
- ``memory_leak``    VM memory ramps linearly from baseline up to
                     75 + 25*intensity percent across the span.
- ``network_overhead`` VM network bandwidth jumps like cpu_hog.
- ``endless_loop``   VM *and* host cpu sit at 80 + 20*intensity while
                     VM throughput collapses to 10% of its baseline.
- ``serious_crash``  the target metric is pinned at exactly 100.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .engine import collect_windows
from .nbc import LabeledExample
from .states import ComponentId, DiscretizationSpec, MetricSample, discretize

__all__ = [
    "Scenario",
    "FaultInjection",
    "WindowLabel",
    "ScenarioError",
    "AlignmentError",
    "generate",
    "to_training_set",
    "load_scenario",
    "write_labels",
    "read_labels",
    "RNG_ALGORITHM",
    "VM_METRICS",
    "HOST_METRICS",
    "KINDS",
    "DEFAULT_KIND_TO_CLASS",
    "LABEL_NORMAL",
]

RNG_ALGORITHM = "mt19937"

VM_METRICS = ("cpu", "memory", "network", "throughput")
HOST_METRICS = ("cpu", "storage_io")

KIND_CPU_HOG = "cpu_hog"
KIND_MEMORY_LEAK = "memory_leak"
KIND_NETWORK_OVERHEAD = "network_overhead"
KIND_ENDLESS_LOOP = "endless_loop"
KIND_SERIOUS_CRASH = "serious_crash"
KINDS = (
    KIND_CPU_HOG,
    KIND_MEMORY_LEAK,
    KIND_NETWORK_OVERHEAD,
    KIND_ENDLESS_LOOP,
    KIND_SERIOUS_CRASH,
)

LABEL_NORMAL = "normal"

# Injection kinds speak the workload vocabulary; diagnosis classes speak
# the fault-cause vocabulary.  This table bridges them for training.
DEFAULT_KIND_TO_CLASS = {
    LABEL_NORMAL: "normal",
    KIND_CPU_HOG: "high-cpu-usage",
    KIND_MEMORY_LEAK: "memory-shortage",
    KIND_NETWORK_OVERHEAD: "network-overhead",
    KIND_ENDLESS_LOOP: "endless-loop",
    KIND_SERIOUS_CRASH: "serious-crash",
}


class ScenarioError(ValueError):
    pass


class AlignmentError(ValueError):
    """Streams and labels disagree about which windows exist."""


@dataclass(frozen=True)
class FaultInjection:
    kind: str
    host: str
    start: int
    end: int  # exclusive window index
    intensity: float = 1.0
    vm: str | None = None
    metric: str = "cpu"  # serious_crash only: which metric gets pinned

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown fault kind {self.kind!r}")
        if not self.start < self.end:
            raise ScenarioError(f"injection span [{self.start}, {self.end}) is empty")
        if self.start < 0:
            raise ScenarioError("injection start must be >= 0")
        if not 0.0 < self.intensity <= 1.0:
            raise ScenarioError(f"intensity must be in (0, 1], got {self.intensity}")
        if self.kind == KIND_SERIOUS_CRASH:
            if self.metric in VM_METRICS:
                if self.vm is None:
                    raise ScenarioError(f"crash on vm metric {self.metric!r} needs a vm")
            elif self.metric in HOST_METRICS:
                if self.vm is not None:
                    raise ScenarioError(f"crash on host metric {self.metric!r} takes no vm")
            else:
                raise ScenarioError(f"crash metric {self.metric!r} is not simulated")
        elif self.vm is None:
            raise ScenarioError(f"{self.kind} targets a vm")

    def active(self, window: int) -> bool:
        return self.start <= window < self.end

    def scopes(self) -> frozenset:
        """(host, vm) scopes whose samples this injection touches."""
        if self.kind == KIND_ENDLESS_LOOP:
            return frozenset({(self.host, self.vm), (self.host, None)})
        if self.kind == KIND_SERIOUS_CRASH and self.metric in HOST_METRICS and self.vm is None:
            return frozenset({(self.host, None)})
        return frozenset({(self.host, self.vm)})


def _default_baseline() -> dict:
    return {
        "vm.cpu": (30.0, 2.0),
        "vm.memory": (35.0, 2.0),
        "vm.network": (30.0, 2.0),
        "vm.throughput": (60.0, 2.0),
        "host.cpu": (40.0, 2.0),
        "host.storage_io": (20.0, 2.0),
    }


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration: int
    hosts: int = 1
    vms_per_host: int = 1
    baseline: Mapping[str, tuple[float, float]] = field(default_factory=_default_baseline)
    injections: tuple[FaultInjection, ...] = ()
    window_ms: int = 1000

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        if self.hosts <= 0 or self.vms_per_host <= 0:
            raise ScenarioError("topology must have at least one host and one vm")
        if self.window_ms <= 0:
            raise ScenarioError("window_ms must be positive")
        for key in _default_baseline():
            if key not in self.baseline:
                raise ScenarioError(f"baseline missing {key}")
            mean, jitter = self.baseline[key]
            if jitter < 0:
                raise ScenarioError(f"negative jitter for {key}")
        host_ids = {f"h{i}" for i in range(self.hosts)}
        vm_ids = {f"vm{i}" for i in range(self.vms_per_host)}
        for inj in self.injections:
            if inj.end > self.duration:
                raise ScenarioError(
                    f"injection [{inj.start}, {inj.end}) exceeds duration {self.duration}"
                )
            if inj.host not in host_ids:
                raise ScenarioError(f"injection targets unknown host {inj.host!r}")
            if inj.vm is not None and inj.vm not in vm_ids:
                raise ScenarioError(f"injection targets unknown vm {inj.vm!r}")
        # reject overlapping injections that touch a common scope: each
        # window/scope must have at most one active fault so ground
        # truth stays single-labeled
        for i, a in enumerate(self.injections):
            for b in self.injections[i + 1:]:
                if a.start < b.end and b.start < a.end and a.scopes() & b.scopes():
                    raise ScenarioError(
                        f"overlapping injections on a shared scope: "
                        f"{a.kind}[{a.start},{a.end}) and {b.kind}[{b.start},{b.end})"
                    )

    def host_ids(self) -> list[str]:
        return [f"h{i}" for i in range(self.hosts)]

    def vm_ids(self) -> list[str]:
        return [f"vm{i}" for i in range(self.vms_per_host)]


@dataclass(frozen=True)
class WindowLabel:
    window: int
    host: str
    vm: str
    label: str


def _subseed(seed: int, host: str, vm: str | None) -> int:
    blob = f"{seed}/{host}/{vm or ''}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def _clamp(v: float) -> float:
    return min(100.0, max(0.0, v))


def _label_for(scenario: Scenario, window: int, host: str, vm: str) -> str:
    # an injection aimed at this vm wins; a host-wide crash covers every
    # vm on the host; side effects (a neighbour's loop raising host cpu)
    # do not relabel healthy vms
    for inj in scenario.injections:
        if inj.active(window) and inj.host == host and inj.vm == vm:
            return inj.kind
    for inj in scenario.injections:
        if (
            inj.active(window)
            and inj.kind == KIND_SERIOUS_CRASH
            and inj.host == host
            and inj.vm is None
        ):
            return inj.kind
    return LABEL_NORMAL


def generate(scenario: Scenario) -> tuple[list[MetricSample], list[WindowLabel]]:
    """Produce the metric stream and per-window ground truth.

    Jitter draws happen per scope in a fixed (window, metric) order and
    are consumed whether or not an injection overrides the value, so
    adding an injection never shifts the noise pattern elsewhere.
    """
    samples: list[MetricSample] = []
    labels: list[WindowLabel] = []

    for host in scenario.host_ids():
        host_jitter = _draw_jitter(scenario, host, None, HOST_METRICS)
        for w in range(scenario.duration):
            ts = w * scenario.window_ms
            for metric in HOST_METRICS:
                mean, _ = scenario.baseline[f"host.{metric}"]
                value = mean + host_jitter[(w, metric)]
                value = _apply_host_injections(scenario, host, w, metric, value, host_jitter)
                samples.append(
                    MetricSample(ts, host, None, ComponentId(metric, "host"), _clamp(value))
                )
        for vm in scenario.vm_ids():
            vm_jitter = _draw_jitter(scenario, host, vm, VM_METRICS)
            for w in range(scenario.duration):
                ts = w * scenario.window_ms
                for metric in VM_METRICS:
                    mean, _ = scenario.baseline[f"vm.{metric}"]
                    value = mean + vm_jitter[(w, metric)]
                    value = _apply_vm_injections(scenario, host, vm, w, metric, value, vm_jitter)
                    samples.append(
                        MetricSample(ts, host, vm, ComponentId(metric, "vm"), _clamp(value))
                    )
                labels.append(WindowLabel(w, host, vm, _label_for(scenario, w, host, vm)))

    samples.sort(key=lambda s: (s.timestamp, s.host_id, s.vm_id or "", s.metric.level, s.metric.name))
    labels.sort(key=lambda l: (l.window, l.host, l.vm))
    return samples, labels


def _draw_jitter(scenario, host, vm, metrics) -> dict:
    rng = random.Random(_subseed(scenario.seed, host, vm))
    scope = "host" if vm is None else "vm"
    out = {}
    for w in range(scenario.duration):
        for metric in metrics:
            _, jitter = scenario.baseline[f"{scope}.{metric}"]
            out[(w, metric)] = rng.uniform(-jitter, jitter)
    return out


def _apply_vm_injections(scenario, host, vm, w, metric, value, jitter):
    for inj in scenario.injections:
        if not (inj.active(w) and inj.host == host):
            continue
        j = jitter[(w, metric)]
        if inj.kind == KIND_CPU_HOG and inj.vm == vm and metric == "cpu":
            return 75.0 + 25.0 * inj.intensity + j
        if inj.kind == KIND_MEMORY_LEAK and inj.vm == vm and metric == "memory":
            base = scenario.baseline["vm.memory"][0]
            target = 75.0 + 25.0 * inj.intensity
            span = inj.end - inj.start - 1
            progress = 1.0 if span == 0 else (w - inj.start) / span
            return base + (target - base) * progress + j
        if inj.kind == KIND_NETWORK_OVERHEAD and inj.vm == vm and metric == "network":
            return 75.0 + 25.0 * inj.intensity + j
        if inj.kind == KIND_ENDLESS_LOOP and inj.vm == vm:
            if metric == "cpu":
                return 80.0 + 20.0 * inj.intensity + j
            if metric == "throughput":
                return 0.10 * scenario.baseline["vm.throughput"][0] + j
        if inj.kind == KIND_SERIOUS_CRASH and inj.vm == vm and metric == inj.metric:
            return 100.0
    return value


def _apply_host_injections(scenario, host, w, metric, value, jitter):
    for inj in scenario.injections:
        if not (inj.active(w) and inj.host == host):
            continue
        if inj.kind == KIND_ENDLESS_LOOP and metric == "cpu":
            return 80.0 + 20.0 * inj.intensity + jitter[(w, metric)]
        if (
            inj.kind == KIND_SERIOUS_CRASH
            and inj.vm is None
            and metric == inj.metric
            and metric in HOST_METRICS
        ):
            return 100.0
    return value


def to_training_set(
    samples: Sequence[MetricSample],
    labels: Sequence[WindowLabel],
    specs: Mapping[str, DiscretizationSpec],
    attributes: Sequence[ComponentId],
    classes: Sequence[str],
    label_to_class: Mapping[str, str] | None = None,
    window_ms: int = 1000,
) -> list[LabeledExample]:
    """One labeled example per window/scope, features in bucket space."""
    mapping = dict(DEFAULT_KIND_TO_CLASS if label_to_class is None else label_to_class)
    vm_names = sorted({c.name for c in attributes if c.level == "vm"})
    host_names = sorted({c.name for c in attributes if c.level == "host"})
    windows = collect_windows(samples, vm_names, host_names)
    by_key = {(w.timestamp // window_ms, w.host_id, w.vm_id): w for w in windows}
    if len(by_key) != len(windows):
        raise AlignmentError("duplicate windows for the same scope and time")

    out = []
    seen = set()
    for row in labels:
        key = (row.window, row.host, row.vm)
        window = by_key.get(key)
        if window is None:
            raise AlignmentError(f"label for missing window {key}")
        seen.add(key)
        class_name = mapping.get(row.label)
        if class_name is None:
            raise AlignmentError(f"label {row.label!r} has no class mapping")
        try:
            label_idx = list(classes).index(class_name)
        except ValueError:
            raise AlignmentError(f"class {class_name!r} not in schema classes") from None
        features = tuple(
            discretize(window.values[c.key], specs[c.key]) for c in attributes
        )
        out.append(LabeledExample(features=features, label=label_idx))
    if len(seen) != len(by_key):
        raise AlignmentError(f"{len(by_key) - len(seen)} windows have no label")
    return out


# -- files -----------------------------------------------------------


def load_scenario(source) -> Scenario:
    if isinstance(source, dict):
        doc = source
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    try:
        baseline = {
            key: (float(entry["mean"]), float(entry["jitter"]))
            for key, entry in doc.get("baseline", {}).items()
        }
        if not baseline:
            baseline = _default_baseline()
        injections = tuple(
            FaultInjection(
                kind=item["kind"],
                host=item["host"],
                vm=item.get("vm"),
                start=int(item["start"]),
                end=int(item["end"]),
                intensity=float(item.get("intensity", 1.0)),
                metric=item.get("metric", "cpu"),
            )
            for item in doc.get("injections", ())
        )
        return Scenario(
            seed=int(doc["seed"]),
            duration=int(doc["duration"]),
            hosts=int(doc.get("hosts", 1)),
            vms_per_host=int(doc.get("vms_per_host", 1)),
            baseline=baseline,
            injections=injections,
            window_ms=int(doc.get("window_ms", 1000)),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario document missing field {exc}") from None


def write_labels(labels: Iterable[WindowLabel], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "host", "vm", "label"])
        for row in labels:
            writer.writerow([row.window, row.host, row.vm, row.label])
            n += 1
    return n


def read_labels(path) -> list[WindowLabel]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["window", "host", "vm", "label"]:
            raise AlignmentError(f"unexpected labels header {header}")
        for row in reader:
            if not row:
                continue
            out.append(WindowLabel(int(row[0]), row[1], row[2], row[3]))
    return out
