"""The gate-then-diagnose pipeline over preprocessed telemetry windows.

Flow per (host, vm) window: discretize each metric into its usage
bucket, collapse buckets to severities, evaluate the severity diagram.
Serious windows alarm immediately without classification; minor windows
get a Naive Bayes diagnosis; and a persistence rule watches every
window for the composite loop signature (saturated CPU at both VM and
host level with collapsed throughput) that per-metric severity cannot
name, promoting it to a diagnosed alarm once it has held for K
consecutive windows.

Alarms go to the append-only engine log unconditionally and to any
registered virtual sensors subject to their activation and
reporting-frequency settings.  Everything is deterministic: same
config, same stream, same simulated clock, byte-identical log.
"""

from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import mdd as mdd_mod
from . import nbc as nbc_mod
from .states import (
    ComponentId,
    DiscretizationSpec,
    MetricSample,
    StateVector,
    discretize,
    severity_map,
)

__all__ = [
    "PreprocessPolicy",
    "Alarm",
    "VirtualSensor",
    "EngineConfig",
    "Engine",
    "Window",
    "SequencingError",
    "IncompleteWindowError",
    "ConfigError",
    "preprocess",
    "collect_windows",
    "load_config",
    "write_alarm_log",
    "TRIGGER_GATE",
    "TRIGGER_NBC",
]

TRIGGER_GATE = "severity_gate"
TRIGGER_NBC = "nbc_diagnosis"

# Metrics whose values are percentages and may be clamped to [0, 100].
PERCENT_METRIC_NAMES = frozenset({"cpu", "memory", "network", "storage_io"})

_MAD_SCALE = 1.4826  # makes MAD comparable to a standard deviation
_EPS = 1e-9
_MAX_PASSES = 64


class SequencingError(ValueError):
    """A series delivered samples with decreasing timestamps."""


class IncompleteWindowError(ValueError):
    """A window is missing one of the configured metrics."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessPolicy:
    window: int = 11
    z_cutoff: float = 3.0
    clamp: bool = True

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.z_cutoff <= 0:
            raise ValueError(f"z_cutoff must be > 0, got {self.z_cutoff}")


def _one_pass(values: list[float], half: int, cutoff: float) -> list[float]:
    # synchronous update: every replacement reads the same input vector
    n = len(values)
    out = list(values)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        window = values[lo:hi]
        med = statistics.median(window)
        mad = statistics.median(abs(v - med) for v in window)
        z = abs(values[i] - med) / (mad * _MAD_SCALE + _EPS)
        if z > cutoff:
            out[i] = med
    return out


def preprocess(samples: Iterable[MetricSample], policy: PreprocessPolicy | None = None) -> list[MetricSample]:
    """Robust per-series cleanup preserving order and timestamps.

    Each (host, vm, metric) series is handled independently: percent
    metrics get their range enforced first (clamped to [0, 100], or the
    sample dropped when the policy says not to clamp), then a sliding
    median/MAD filter replaces outliers with the window median.  The
    filter is iterated to a fixed point so running preprocess on its own
    output changes nothing.
    """
    policy = policy or PreprocessPolicy()
    ordered = list(samples)
    series: dict[tuple, list[int]] = {}
    last_ts: dict[tuple, int] = {}
    dropped: set[int] = set()
    values: dict[int, float] = {}

    for idx, s in enumerate(ordered):
        key = (s.host_id, s.vm_id, s.metric.key)
        if key in last_ts and s.timestamp < last_ts[key]:
            raise SequencingError(
                f"series {key}: timestamp {s.timestamp} after {last_ts[key]}"
            )
        last_ts[key] = s.timestamp
        v = s.value
        if s.metric.name in PERCENT_METRIC_NAMES and not 0.0 <= v <= 100.0:
            if policy.clamp:
                v = min(100.0, max(0.0, v))
            else:
                dropped.add(idx)
                continue
        values[idx] = v
        series.setdefault(key, []).append(idx)

    half = policy.window // 2
    for indices in series.values():
        vals = [values[i] for i in indices]
        for _ in range(_MAX_PASSES):
            nxt = _one_pass(vals, half, policy.z_cutoff)
            if nxt == vals:
                break
            vals = nxt
        for i, v in zip(indices, vals):
            values[i] = v

    out = []
    for idx, s in enumerate(ordered):
        if idx in dropped:
            continue
        v = values[idx]
        if v == s.value:
            out.append(s)
        else:
            out.append(MetricSample(s.timestamp, s.host_id, s.vm_id, s.metric, v))
    return out


@dataclass(frozen=True)
class Window:
    """All configured metric values for one (host, vm) scope at one time."""

    timestamp: int
    host_id: str
    vm_id: str
    values: Mapping[str, float]  # keyed by ComponentId.key


def collect_windows(
    samples: Iterable[MetricSample],
    vm_metrics: Sequence[str],
    host_metrics: Sequence[str],
) -> list[Window]:
    """Group a sample stream into per-scope windows by exact timestamp.

    Host-level metrics are shared by every VM on that host.  A window
    missing any configured metric raises; windows come back sorted by
    (timestamp, host, vm) so downstream processing is deterministic.
    """
    vm_rows: dict[tuple, dict[str, float]] = {}
    host_rows: dict[tuple, dict[str, float]] = {}
    for s in samples:
        if s.metric.level == "host":
            host_rows.setdefault((s.timestamp, s.host_id), {})[s.metric.name] = s.value
        else:
            vm_rows.setdefault((s.timestamp, s.host_id, s.vm_id), {})[s.metric.name] = s.value

    windows = []
    for (ts, host, vm) in sorted(vm_rows):
        row = vm_rows[(ts, host, vm)]
        merged = {}
        for name in vm_metrics:
            if name not in row:
                raise IncompleteWindowError(
                    f"window t={ts} {host}/{vm}: missing vm metric {name!r}"
                )
            merged[f"vm.{name}"] = row[name]
        hrow = host_rows.get((ts, host), {})
        for name in host_metrics:
            if name not in hrow:
                raise IncompleteWindowError(
                    f"window t={ts} {host}/{vm}: missing host metric {name!r}"
                )
            merged[f"host.{name}"] = hrow[name]
        windows.append(Window(ts, host, vm, merged))
    return windows


@dataclass(frozen=True)
class Alarm:
    timestamp: int
    host_id: str
    vm_id: str | None
    severity: int
    trigger: str
    diagnosis: tuple[float, ...] | None = None
    top_cause: str | None = None

    def __post_init__(self) -> None:
        if self.trigger not in (TRIGGER_GATE, TRIGGER_NBC):
            raise ValueError(f"unknown trigger {self.trigger!r}")
        if self.trigger == TRIGGER_GATE and self.severity != 2:
            raise ValueError("severity_gate alarms are always serious")
        if self.trigger == TRIGGER_NBC:
            if self.diagnosis is None:
                raise ValueError("nbc_diagnosis alarms carry a diagnosis distribution")
            if abs(sum(self.diagnosis) - 1.0) > 1e-12:
                raise ValueError("diagnosis distribution must be normalized")

    def to_json_obj(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "host_id": self.host_id,
            "vm_id": self.vm_id,
            "severity": self.severity,
            "trigger": self.trigger,
            "diagnosis": list(self.diagnosis) if self.diagnosis is not None else None,
            "top_cause": self.top_cause,
        }


def write_alarm_log(alarms: Iterable[Alarm], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for a in alarms:
            fh.write(json.dumps(a.to_json_obj(), sort_keys=True))
            fh.write("\n")
            n += 1
    return n


@dataclass
class VirtualSensor:
    """In-process alarm subscriber with activation and rate control.

    Deliveries happen only on the sensor's reporting grid: an alarm
    dispatched at time t is held until the next multiple of
    ``frequency_ms`` after t, and a newer alarm dispatched in the same
    interval replaces it.
    """

    sensor_id: str
    active: bool = True
    frequency_ms: int = 1000
    deliveries: int = 0
    last_delivery_time: int | None = None
    last_alarm: Alarm | None = None
    _pending: tuple[int, Alarm] | None = None

    def __post_init__(self) -> None:
        if self.frequency_ms <= 0:
            raise ValueError("frequency must be positive")


@dataclass(frozen=True)
class LoopRule:
    """Composite-pattern parameters for the sustained-loop detector."""

    k: int = 3
    vm_cpu: str = "vm.cpu"
    host_cpu: str = "host.cpu"
    throughput: str = "vm.throughput"
    cpu_bucket: int = 3  # both CPU readings at or above this usage bucket
    throughput_bucket: int = 0  # throughput at or below this bucket
    cause: str = "endless-loop"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("loop rule needs k >= 1")

    def matches(self, usage: Mapping[str, int]) -> bool:
        return (
            usage[self.vm_cpu] >= self.cpu_bucket
            and usage[self.host_cpu] >= self.cpu_bucket
            and usage[self.throughput] <= self.throughput_bucket
        )


DEFAULT_CLASSES = (
    "normal",
    "high-cpu-usage",
    "memory-shortage",
    "network-overhead",
    "endless-loop",
)


@dataclass
class EngineConfig:
    specs: dict[str, DiscretizationSpec]  # keyed by ComponentId.key
    attributes: tuple[ComponentId, ...]  # NBC feature order
    severity_components: tuple[ComponentId, ...]
    model: nbc_mod.NbcModel
    severity_mapping: tuple[int, ...] = (0, 0, 1, 2)
    loop_rule: LoopRule = field(default_factory=LoopRule)
    window_ms: int = 1000
    preprocess: PreprocessPolicy = field(default_factory=PreprocessPolicy)

    def __post_init__(self) -> None:
        for comp in self.attributes + self.severity_components:
            if comp.key not in self.specs:
                raise ConfigError(f"no discretization spec for {comp.key}")
        model_names = tuple(name for name, _ in self.model.schema.attributes)
        config_names = tuple(c.key for c in self.attributes)
        if model_names != config_names:
            raise ConfigError(
                f"model attributes {model_names} do not match config attributes {config_names}"
            )
        for comp, (_, card) in zip(self.attributes, self.model.schema.attributes):
            spec = self.specs[comp.key]
            if spec.num_levels != card:
                raise ConfigError(
                    f"{comp.key}: spec yields {spec.num_levels} buckets, model expects {card}"
                )
        if self.loop_rule.cause not in self.model.schema.classes:
            raise ConfigError(f"loop rule cause {self.loop_rule.cause!r} not in model classes")
        if self.window_ms <= 0:
            raise ConfigError("window_ms must be positive")
        # severity model operates on mapped 3-state levels
        self.severity_mdd = mdd_mod.build_max_severity(self.severity_components)

    @property
    def classes(self) -> tuple[str, ...]:
        return self.model.schema.classes

    @property
    def vm_metric_names(self) -> tuple[str, ...]:
        seen = []
        for c in self.attributes:
            if c.level == "vm" and c.name not in seen:
                seen.append(c.name)
        return tuple(seen)

    @property
    def host_metric_names(self) -> tuple[str, ...]:
        seen = []
        for c in self.attributes:
            if c.level == "host" and c.name not in seen:
                seen.append(c.name)
        return tuple(seen)


class Engine:
    """Stateful pipeline instance: windows in, alarms out.

    State is per-scope loop-rule streaks, the sensor registry, the
    simulated clock, and the append-only alarm log.  One engine handles
    one logical stream; make a new engine for a fresh run.
    """

    def __init__(self, config: EngineConfig):
        self.config = config
        self.alarm_log: list[Alarm] = []
        self.nbc_invocations = 0
        self.clock = 0
        self._sensors: dict[str, VirtualSensor] = {}
        self._streaks: dict[tuple, int] = {}
        self._loop_fired: dict[tuple, bool] = {}

    # -- window processing -------------------------------------------

    def _usage(self, window: Window) -> dict[str, int]:
        usage = {}
        for comp in self.config.attributes + self.config.severity_components:
            if comp.key in usage:
                continue
            spec = self.config.specs[comp.key]
            value = window.values[comp.key]
            # preprocessed values are in range; clamp defensively so a
            # caller skipping preprocess still gets a bucket
            value = min(spec.boundaries[-1], max(spec.boundaries[0], value))
            usage[comp.key] = discretize(value, spec)
        return usage

    def severity_of(self, window: Window) -> int:
        usage = self._usage(window)
        return self._severity(usage)

    def _severity(self, usage: Mapping[str, int]) -> int:
        levels = [
            severity_map(usage[c.key], self.config.severity_mapping)
            for c in self.config.severity_components
        ]
        vec = StateVector.from_levels(self.config.severity_components, levels)
        return self.config.severity_mdd.evaluate(vec)

    def step(self, window: Window) -> list[Alarm]:
        """Process one complete window; returns the alarms it raised.

        Precedence: a completed loop-rule span outranks the severity
        gate, which outranks per-window diagnosis.  At most one alarm
        per window.  The loop pattern is tracked on every window —
        saturated CPU always trips the severity gate, so the rule's job
        is to replace the K-th consecutive anonymous gate alarm with a
        named diagnosis, once per span.
        """
        for comp in self.config.attributes + self.config.severity_components:
            if comp.key not in window.values:
                raise IncompleteWindowError(
                    f"window t={window.timestamp} {window.host_id}/{window.vm_id}: "
                    f"missing {comp.key}"
                )
        usage = self._usage(window)
        severity = self._severity(usage)
        scope = (window.host_id, window.vm_id)

        rule = self.config.loop_rule
        loop_alarm = None
        if rule.matches(usage):
            streak = self._streaks.get(scope, 0) + 1
            self._streaks[scope] = streak
            if streak >= rule.k and not self._loop_fired.get(scope, False):
                self._loop_fired[scope] = True
                cause_idx = self.config.classes.index(rule.cause)
                onehot = tuple(
                    1.0 if i == cause_idx else 0.0 for i in range(len(self.config.classes))
                )
                loop_alarm = Alarm(
                    timestamp=window.timestamp,
                    host_id=window.host_id,
                    vm_id=window.vm_id,
                    severity=severity,
                    trigger=TRIGGER_NBC,
                    diagnosis=onehot,
                    top_cause=rule.cause,
                )
        else:
            self._streaks[scope] = 0
            self._loop_fired[scope] = False

        if loop_alarm is not None:
            return [loop_alarm]
        if severity == 2:
            return [
                Alarm(
                    timestamp=window.timestamp,
                    host_id=window.host_id,
                    vm_id=window.vm_id,
                    severity=2,
                    trigger=TRIGGER_GATE,
                )
            ]
        if severity == 1:
            self.nbc_invocations += 1
            features = tuple(usage[c.key] for c in self.config.attributes)
            post = nbc_mod.posterior(self.config.model, features)
            top = nbc_mod.classify(self.config.model, features)
            return [
                Alarm(
                    timestamp=window.timestamp,
                    host_id=window.host_id,
                    vm_id=window.vm_id,
                    severity=1,
                    trigger=TRIGGER_NBC,
                    diagnosis=post,
                    top_cause=self.config.classes[top],
                )
            ]
        return []

    def process_stream(self, samples: Iterable[MetricSample]) -> list[Alarm]:
        """Preprocess, window, and step an entire stream in time order."""
        cleaned = preprocess(samples, self.config.preprocess)
        windows = collect_windows(
            cleaned, self.config.vm_metric_names, self.config.host_metric_names
        )
        raised = []
        for window in windows:
            self.advance_clock(window.timestamp)
            for alarm in self.step(window):
                self.alarm_log.append(alarm)
                self.dispatch(alarm)
                raised.append(alarm)
        self.flush_sensors()
        return raised

    # -- virtual sensors ----------------------------------------------

    def register_sensor(self, sensor: VirtualSensor) -> None:
        if sensor.sensor_id in self._sensors:
            raise ValueError(f"sensor {sensor.sensor_id!r} already registered")
        self._sensors[sensor.sensor_id] = sensor

    def _sensor(self, sensor_id: str) -> VirtualSensor:
        try:
            return self._sensors[sensor_id]
        except KeyError:
            raise KeyError(f"unknown sensor {sensor_id!r}") from None

    def set_active(self, sensor_id: str, active: bool) -> None:
        self._sensor(sensor_id).active = bool(active)

    def set_frequency(self, sensor_id: str, frequency_ms: int) -> None:
        if frequency_ms <= 0:
            raise ValueError("frequency must be positive")
        self._sensor(sensor_id).frequency_ms = int(frequency_ms)

    def sensor_status(self, sensor_id: str) -> dict:
        s = self._sensor(sensor_id)
        return {
            "sensor_id": s.sensor_id,
            "active": s.active,
            "frequency_ms": s.frequency_ms,
            "deliveries": s.deliveries,
            "last_delivery_time": s.last_delivery_time,
            "last_alarm": s.last_alarm.to_json_obj() if s.last_alarm else None,
            "pending": s._pending is not None,
        }

    def dispatch(self, alarm: Alarm) -> int:
        """Queue an alarm for every active sensor; newest wins per interval.

        Returns the number of sensors the alarm reached (queued for).
        Actual delivery happens when the clock crosses the sensor's next
        reporting boundary.
        """
        reached = 0
        for s in self._sensors.values():
            if not s.active:
                continue
            s._pending = (self.clock, alarm)
            reached += 1
        return reached

    def advance_clock(self, to_time: int) -> None:
        if to_time < self.clock:
            raise SequencingError(f"clock cannot move backwards: {to_time} < {self.clock}")
        for s in self._sensors.values():
            if s._pending is None:
                continue
            queued_at, alarm = s._pending
            boundary = (queued_at // s.frequency_ms + 1) * s.frequency_ms
            if to_time >= boundary:
                s.deliveries += 1
                s.last_delivery_time = boundary
                s.last_alarm = alarm
                s._pending = None
        self.clock = to_time

    def flush_sensors(self) -> None:
        """Deliver any still-pending alarms at their next boundary (end of run)."""
        for s in self._sensors.values():
            if s._pending is None:
                continue
            queued_at, alarm = s._pending
            boundary = (queued_at // s.frequency_ms + 1) * s.frequency_ms
            s.deliveries += 1
            s.last_delivery_time = boundary
            s.last_alarm = alarm
            s._pending = None
            self.clock = max(self.clock, boundary)


def load_config(path) -> EngineConfig:
    """Load an engine configuration document, verifying the model hash.

    The model path is resolved relative to the config file's directory;
    its SHA-256 must match the recorded value so a config can never
    silently pick up a retrained model.
    """
    import os

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))

    model_ref = doc.get("model")
    if not model_ref or "path" not in model_ref:
        raise ConfigError("config needs model.path")
    model_path = os.path.join(base, model_ref["path"])
    if not os.path.exists(model_path):
        raise ConfigError(f"model file not found: {model_path}")
    with open(model_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    expected = model_ref.get("sha256")
    if expected and digest != expected:
        raise ConfigError(
            f"model hash mismatch for {model_path}: expected {expected}, got {digest}"
        )
    model = nbc_mod.load_model(model_path)

    try:
        specs = {}
        for key, bounds in doc["discretization"].items():
            comp = ComponentId.parse(key)
            specs[key] = DiscretizationSpec(comp, tuple(float(b) for b in bounds))
        attributes = tuple(ComponentId.parse(k) for k in doc["attributes"])
        severity_components = tuple(ComponentId.parse(k) for k in doc["severity_components"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc

    loop_doc = doc.get("loop_rule", {})
    loop_rule = LoopRule(
        k=int(loop_doc.get("k", 3)),
        vm_cpu=loop_doc.get("vm_cpu", "vm.cpu"),
        host_cpu=loop_doc.get("host_cpu", "host.cpu"),
        throughput=loop_doc.get("throughput", "vm.throughput"),
        cpu_bucket=int(loop_doc.get("cpu_bucket", 3)),
        throughput_bucket=int(loop_doc.get("throughput_bucket", 0)),
        cause=loop_doc.get("cause", "endless-loop"),
    )
    pp_doc = doc.get("preprocess", {})
    policy = PreprocessPolicy(
        window=int(pp_doc.get("window", 11)),
        z_cutoff=float(pp_doc.get("z_cutoff", 3.0)),
        clamp=bool(pp_doc.get("clamp", True)),
    )
    return EngineConfig(
        specs=specs,
        attributes=attributes,
        severity_components=severity_components,
        model=model,
        severity_mapping=tuple(doc.get("severity_mapping", (0, 0, 1, 2))),
        loop_rule=loop_rule,
        window_ms=int(doc.get("window_ms", 1000)),
        preprocess=policy,
    )
