import json

import pytest
from hypothesis import given, strategies as st

from afdi import nbc
from afdi.engine import (
    Alarm,
    ConfigError,
    Engine,
    EngineConfig,
    IncompleteWindowError,
    LoopRule,
    PreprocessPolicy,
    SequencingError,
    TRIGGER_GATE,
    TRIGGER_NBC,
    VirtualSensor,
    Window,
    collect_windows,
    load_config,
    preprocess,
    write_alarm_log,
)
from afdi.simulator import generate, load_scenario
from afdi.states import ComponentId, MetricSample
from conftest import fixture_path

# representative raw value for each usage bucket under [0,25,50,75,100]
BUCKET_VALUE = (10.0, 30.0, 60.0, 90.0)

HEALTHY = {
    "vm.cpu": 30.0,
    "vm.memory": 30.0,
    "vm.network": 30.0,
    "vm.throughput": 60.0,
    "host.cpu": 40.0,
    "host.storage_io": 10.0,
}


_CONFIG_CACHE: list = []


def _load_fixture_config() -> EngineConfig:
    if not _CONFIG_CACHE:
        _CONFIG_CACHE.append(load_config(fixture_path("engine_config.json")))
    return _CONFIG_CACHE[0]


@pytest.fixture(scope="module")
def config():
    return _load_fixture_config()


def window_at(w: int, values: dict, host="h0", vm="vm0") -> Window:
    return Window(w * 1000, host, vm, dict(values))


def variant(**overrides) -> dict:
    values = dict(HEALTHY)
    values.update(overrides)
    return values


LOOP_VALUES = variant(**{"vm.cpu": 90.0, "host.cpu": 90.0, "vm.throughput": 10.0})


def samples_for(window_dicts, host="h0", vm="vm0", window_ms=1000):
    out = []
    for w, values in enumerate(window_dicts):
        ts = w * window_ms
        for key, value in values.items():
            comp = ComponentId.parse(key)
            out.append(
                MetricSample(ts, host, vm if comp.level == "vm" else None, comp, value)
            )
    return out


def sample_series(values, metric="cpu", level="vm"):
    comp = ComponentId(metric, level)
    vm = "vm0" if level == "vm" else None
    return [MetricSample(i * 1000, "h0", vm, comp, v) for i, v in enumerate(values)]


# -- preprocessing ---------------------------------------------------


def test_preprocess_constant_series_unchanged():
    samples = sample_series([50.0] * 30)
    assert preprocess(samples) == samples


def test_preprocess_replaces_spike_with_window_median():
    values = [50.0] * 21
    values[10] = 500.0
    # throughput is not a percent metric, so the spike survives clamping
    # and must be caught by the median filter instead
    cleaned = preprocess(sample_series(values, metric="throughput"))
    assert cleaned[10].value == 50.0
    assert [s.value for s in cleaned].count(50.0) == 21


def test_preprocess_clamps_percent_metrics():
    # a uniformly out-of-range series is clamped and the filter then has
    # nothing to flag, so the clamped values survive
    assert all(s.value == 100.0 for s in preprocess(sample_series([150.0] * 12)))
    assert all(s.value == 0.0 for s in preprocess(sample_series([-5.0] * 12)))


def test_preprocess_clamp_happens_before_outlier_filter():
    # a lone spike is first clamped to 100, which is still an outlier
    # against its neighbours, so the median filter finishes the job
    cleaned = preprocess(sample_series([150.0] + [50.0] * 10))
    assert cleaned[0].value == 50.0


def test_preprocess_drop_policy_removes_out_of_range():
    policy = PreprocessPolicy(clamp=False)
    cleaned = preprocess(sample_series([150.0] + [50.0] * 10), policy)
    assert len(cleaned) == 10
    assert all(s.value == 50.0 for s in cleaned)


def test_preprocess_empty():
    assert preprocess([]) == []


def test_preprocess_preserves_order_and_other_series():
    spiky = sample_series([50.0] * 5 + [500.0] + [50.0] * 5, metric="throughput")
    steady = sample_series([20.0] * 11, metric="storage_io", level="host")
    interleaved = [s for pair in zip(spiky, steady) for s in pair]
    cleaned = preprocess(interleaved)
    assert [(s.metric.key, s.timestamp) for s in cleaned] == [
        (s.metric.key, s.timestamp) for s in interleaved
    ]
    assert all(s.value == 20.0 for s in cleaned if s.metric.name == "storage_io")


def test_preprocess_rejects_time_travel():
    comp = ComponentId("cpu", "vm")
    samples = [
        MetricSample(1000, "h0", "vm0", comp, 50.0),
        MetricSample(0, "h0", "vm0", comp, 50.0),
    ]
    with pytest.raises(SequencingError):
        preprocess(samples)


def test_preprocess_allows_equal_timestamps_and_parallel_series():
    comp = ComponentId("cpu", "vm")
    samples = [
        MetricSample(1000, "h0", "vm0", comp, 50.0),
        MetricSample(0, "h0", "vm1", comp, 50.0),  # different series, earlier is fine
        MetricSample(1000, "h0", "vm0", comp, 51.0),  # duplicate timestamp is fine
    ]
    assert len(preprocess(samples)) == 3


@given(st.lists(st.floats(min_value=0, max_value=100), min_size=1, max_size=40))
def test_preprocess_idempotent(values):
    once = preprocess(sample_series(values))
    assert preprocess(once) == once


@pytest.mark.parametrize("window", [2, 1, -3, 4])
def test_preprocess_policy_rejects_bad_window(window):
    with pytest.raises(ValueError):
        PreprocessPolicy(window=window)


# -- windowing -------------------------------------------------------


def test_collect_windows_groups_and_sorts():
    stream = samples_for([HEALTHY, variant(**{"vm.cpu": 33.0})])
    windows = collect_windows(stream, ("cpu", "memory", "network", "throughput"), ("cpu", "storage_io"))
    assert [w.timestamp for w in windows] == [0, 1000]
    assert windows[0].values == HEALTHY
    assert windows[1].values["vm.cpu"] == 33.0


def test_collect_windows_shares_host_metrics_across_vms():
    stream = samples_for([HEALTHY], vm="vm0") + [
        s for s in samples_for([variant(**{"vm.cpu": 44.0})], vm="vm1") if s.metric.level == "vm"
    ]
    windows = collect_windows(stream, ("cpu", "memory", "network", "throughput"), ("cpu", "storage_io"))
    assert len(windows) == 2
    assert all(w.values["host.cpu"] == 40.0 for w in windows)


def test_collect_windows_missing_metric():
    stream = [s for s in samples_for([HEALTHY]) if s.metric.key != "vm.memory"]
    with pytest.raises(IncompleteWindowError, match="memory"):
        collect_windows(stream, ("cpu", "memory", "network", "throughput"), ("cpu", "storage_io"))


# -- single-window behaviour -----------------------------------------


def test_healthy_window_raises_nothing(config):
    engine = Engine(config)
    assert engine.step(window_at(0, HEALTHY)) == []
    assert engine.nbc_invocations == 0
    assert engine.alarm_log == []


def test_serious_window_gates_without_diagnosis(config):
    engine = Engine(config)
    alarms = engine.step(window_at(0, variant(**{"vm.cpu": 90.0})))
    assert len(alarms) == 1
    a = alarms[0]
    assert a.trigger == TRIGGER_GATE
    assert a.severity == 2
    assert a.diagnosis is None and a.top_cause is None
    assert engine.nbc_invocations == 0


def test_minor_window_gets_nbc_diagnosis(config):
    engine = Engine(config)
    values = variant(**{"vm.memory": 60.0})
    alarms = engine.step(window_at(0, values))
    assert len(alarms) == 1
    a = alarms[0]
    assert a.trigger == TRIGGER_NBC and a.severity == 1
    assert engine.nbc_invocations == 1
    # the alarm's distribution must be exactly the model posterior for
    # the discretized feature vector
    usage = engine._usage(window_at(0, values))
    features = tuple(usage[c.key] for c in config.attributes)
    assert a.diagnosis == nbc.posterior(config.model, features)
    assert a.top_cause == config.classes[nbc.classify(config.model, features)]


def test_throughput_alone_never_alarms(config):
    # throughput is a feature but not a severity component, so a bad
    # throughput reading cannot open the gate by itself
    engine = Engine(config)
    assert engine.step(window_at(0, variant(**{"vm.throughput": 90.0}))) == []


def test_severity_uses_mapped_buckets(config):
    engine = Engine(config)
    assert engine.severity_of(window_at(0, HEALTHY)) == 0
    assert engine.severity_of(window_at(0, variant(**{"vm.network": 60.0}))) == 1
    assert engine.severity_of(window_at(0, variant(**{"host.storage_io": 90.0}))) == 2


def test_custom_severity_mapping(config):
    strict = EngineConfig(
        specs=config.specs,
        attributes=config.attributes,
        severity_components=config.severity_components,
        model=config.model,
        severity_mapping=(0, 1, 1, 2),
        loop_rule=config.loop_rule,
    )
    engine = Engine(strict)
    alarms = engine.step(window_at(0, HEALTHY))  # bucket-1 metrics now count as minor
    assert len(alarms) == 1 and alarms[0].trigger == TRIGGER_NBC
    assert engine.nbc_invocations == 1


@given(
    st.tuples(*[st.integers(min_value=0, max_value=3)] * 6),
    st.integers(min_value=0, max_value=5),
)
def test_severity_monotone_in_each_component(buckets, which):
    cfg = _load_fixture_config()
    engine = Engine(cfg)
    keys = [c.key for c in cfg.attributes]
    values = {k: BUCKET_VALUE[b] for k, b in zip(keys, buckets)}
    before = engine.severity_of(window_at(0, values))
    raised = dict(values)
    key = keys[which]
    idx = BUCKET_VALUE.index(raised[key])
    raised[key] = BUCKET_VALUE[min(3, idx + 1)]
    assert engine.severity_of(window_at(0, raised)) >= before


def test_incomplete_window_rejected(config):
    engine = Engine(config)
    values = dict(HEALTHY)
    del values["host.storage_io"]
    with pytest.raises(IncompleteWindowError, match="host.storage_io"):
        engine.step(window_at(0, values))


# -- the loop rule ---------------------------------------------------


def test_loop_rule_match_table():
    rule = LoopRule()
    cases = [
        ({"vm.cpu": 3, "host.cpu": 3, "vm.throughput": 0}, True),
        ({"vm.cpu": 3, "host.cpu": 3, "vm.throughput": 1}, False),
        ({"vm.cpu": 3, "host.cpu": 2, "vm.throughput": 0}, False),
        ({"vm.cpu": 2, "host.cpu": 3, "vm.throughput": 0}, False),
        ({"vm.cpu": 0, "host.cpu": 0, "vm.throughput": 0}, False),
    ]
    for usage, want in cases:
        assert rule.matches(usage) is want, usage


def test_loop_rule_requires_k_windows(config):
    engine = Engine(config)
    triggers = []
    for w in range(5):
        alarms = engine.step(window_at(w, LOOP_VALUES))
        triggers.append([a.trigger for a in alarms])
    # first two gate anonymously; the third completes the pattern and is
    # the diagnosed replacement; afterwards the span keeps gating
    assert triggers == [
        [TRIGGER_GATE],
        [TRIGGER_GATE],
        [TRIGGER_NBC],
        [TRIGGER_GATE],
        [TRIGGER_GATE],
    ]
    assert engine.nbc_invocations == 0  # the loop diagnosis is rule-made


def test_loop_alarm_contents(config):
    engine = Engine(config)
    engine.step(window_at(0, LOOP_VALUES))
    engine.step(window_at(1, LOOP_VALUES))
    (alarm,) = engine.step(window_at(2, LOOP_VALUES))
    assert alarm.top_cause == "endless-loop"
    assert alarm.severity == 2
    cause_idx = config.classes.index("endless-loop")
    assert alarm.diagnosis[cause_idx] == 1.0
    assert sum(alarm.diagnosis) == 1.0


def test_loop_streak_resets_on_break(config):
    engine = Engine(config)
    engine.step(window_at(0, LOOP_VALUES))
    engine.step(window_at(1, LOOP_VALUES))
    engine.step(window_at(2, HEALTHY))  # pattern broken before K
    for w in range(3, 5):
        (alarm,) = engine.step(window_at(w, LOOP_VALUES))
        assert alarm.trigger == TRIGGER_GATE
    (alarm,) = engine.step(window_at(5, LOOP_VALUES))
    assert alarm.trigger == TRIGGER_NBC  # fresh K-streak completed


def test_loop_fires_again_after_pattern_breaks(config):
    engine = Engine(config)
    causes = []
    pattern = [LOOP_VALUES] * 4 + [HEALTHY] + [LOOP_VALUES] * 3
    for w, values in enumerate(pattern):
        for a in engine.step(window_at(w, values)):
            causes.append(a.top_cause)
    assert causes.count("endless-loop") == 2


def test_loop_streaks_tracked_per_scope(config):
    engine = Engine(config)
    alarms = []
    for w in range(3):
        alarms += engine.step(window_at(w, LOOP_VALUES, vm="vm0"))
        alarms += engine.step(window_at(w, LOOP_VALUES, vm="vm1"))
    # both scopes complete independent streaks and each gets its own diagnosis
    loops = [a for a in alarms if a.top_cause == "endless-loop"]
    assert {a.vm_id for a in loops} == {"vm0", "vm1"}


# -- streams ---------------------------------------------------------


def test_process_stream_crash_scenario_all_gate(config):
    scenario = load_scenario(fixture_path("scenario_serious_crash.json"))
    samples, _ = generate(scenario)
    engine = Engine(config)
    alarms = engine.process_stream(samples)
    assert len(alarms) == 20  # the injection span, one gate alarm per window
    assert all(a.trigger == TRIGGER_GATE for a in alarms)
    assert all(a.diagnosis is None for a in alarms)
    assert engine.nbc_invocations == 0
    assert engine.alarm_log == alarms


def test_process_stream_loop_scenario_one_named_alarm(config):
    scenario = load_scenario(fixture_path("scenario_endless_loop.json"))
    samples, _ = generate(scenario)
    engine = Engine(config)
    alarms = engine.process_stream(samples)
    named = [a for a in alarms if a.top_cause == "endless-loop"]
    assert len(named) == 1
    assert named[0].timestamp == (20 + config.loop_rule.k - 1) * 1000
    assert all(a.trigger == TRIGGER_GATE for a in alarms if a is not named[0])
    assert engine.nbc_invocations == 0


def test_process_stream_healthy_scenario_silent(config):
    scenario = load_scenario(fixture_path("scenario_healthy.json"))
    samples, _ = generate(scenario)
    engine = Engine(config)
    assert engine.process_stream(samples) == []
    assert engine.nbc_invocations == 0


def test_no_window_silently_dropped(config):
    scenario = load_scenario(fixture_path("scenario_endless_loop.json"))
    samples, _ = generate(scenario)
    engine = Engine(config)
    raised = engine.process_stream(samples)
    assert raised == engine.alarm_log  # every raised alarm is logged
    assert len(raised) == len(set((a.timestamp, a.host_id, a.vm_id) for a in raised))


def test_alarm_log_byte_identical_across_runs(config, tmp_path):
    scenario = load_scenario(fixture_path("scenario_endless_loop.json"))
    samples, _ = generate(scenario)
    paths = []
    for name in ("one.jsonl", "two.jsonl"):
        engine = Engine(config)
        engine.process_stream(list(samples))
        p = tmp_path / name
        write_alarm_log(engine.alarm_log, p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    first = json.loads(paths[0].read_text().splitlines()[0])
    assert set(first) == {
        "timestamp", "host_id", "vm_id", "severity", "trigger", "diagnosis", "top_cause",
    }


# -- alarm record validation -----------------------------------------


def test_alarm_invariants():
    with pytest.raises(ValueError):
        Alarm(0, "h0", "vm0", severity=1, trigger=TRIGGER_GATE)
    with pytest.raises(ValueError):
        Alarm(0, "h0", "vm0", severity=1, trigger=TRIGGER_NBC)  # no diagnosis
    with pytest.raises(ValueError):
        Alarm(0, "h0", "vm0", severity=1, trigger=TRIGGER_NBC, diagnosis=(0.5, 0.2))
    with pytest.raises(ValueError):
        Alarm(0, "h0", "vm0", severity=2, trigger="page_everyone")


# -- virtual sensors -------------------------------------------------


def gate_alarm(ts=0):
    return Alarm(ts, "h0", "vm0", severity=2, trigger=TRIGGER_GATE)


def test_dispatch_counts_active_sensors(config):
    engine = Engine(config)
    engine.register_sensor(VirtualSensor("a"))
    engine.register_sensor(VirtualSensor("b"))
    engine.register_sensor(VirtualSensor("c", active=False))
    assert engine.dispatch(gate_alarm()) == 2


def test_dispatch_with_no_sensors_still_logs(config):
    engine = Engine(config)
    alarms = engine.step(window_at(0, variant(**{"vm.cpu": 90.0})))
    for a in alarms:
        engine.alarm_log.append(a)
        assert engine.dispatch(a) == 0
    assert len(engine.alarm_log) == 1


def test_delivery_waits_for_reporting_boundary(config):
    engine = Engine(config)
    s = VirtualSensor("s", frequency_ms=1000)
    engine.register_sensor(s)
    engine.dispatch(gate_alarm(0))  # queued at clock 0, boundary 1000
    engine.advance_clock(999)
    assert s.deliveries == 0
    engine.advance_clock(1000)
    assert s.deliveries == 1
    assert s.last_delivery_time == 1000


def test_newer_alarm_supersedes_within_interval(config):
    engine = Engine(config)
    s = VirtualSensor("s", frequency_ms=1000)
    engine.register_sensor(s)
    first, second = gate_alarm(0), gate_alarm(10)
    engine.dispatch(first)
    engine.advance_clock(10)  # still inside the interval
    engine.dispatch(second)
    engine.advance_clock(1000)
    assert s.deliveries == 1
    assert s.last_alarm == second


def test_inactive_sensor_receives_nothing_until_reactivated(config):
    engine = Engine(config)
    s = VirtualSensor("s")
    engine.register_sensor(s)
    engine.set_active("s", False)
    assert engine.dispatch(gate_alarm(0)) == 0
    engine.advance_clock(5000)
    assert s.deliveries == 0
    engine.set_active("s", True)
    engine.dispatch(gate_alarm(5000))
    engine.advance_clock(10000)
    assert s.deliveries == 1


def test_frequency_controls_boundary(config):
    engine = Engine(config)
    s = VirtualSensor("s", frequency_ms=5000)
    engine.register_sensor(s)
    engine.advance_clock(1200)
    engine.dispatch(gate_alarm(1200))  # boundary (1200//5000 + 1)*5000 = 5000
    engine.advance_clock(4999)
    assert s.deliveries == 0
    engine.advance_clock(5000)
    assert s.deliveries == 1 and s.last_delivery_time == 5000


def test_flush_delivers_trailing_alarm(config):
    engine = Engine(config)
    s = VirtualSensor("s", frequency_ms=1000)
    engine.register_sensor(s)
    engine.advance_clock(1500)
    engine.dispatch(gate_alarm(1500))
    engine.flush_sensors()
    assert s.deliveries == 1
    assert s.last_delivery_time == 2000
    assert engine.clock == 2000


def test_sensor_status_fields(config):
    engine = Engine(config)
    engine.register_sensor(VirtualSensor("s", frequency_ms=2000))
    status = engine.sensor_status("s")
    assert status == {
        "sensor_id": "s",
        "active": True,
        "frequency_ms": 2000,
        "deliveries": 0,
        "last_delivery_time": None,
        "last_alarm": None,
        "pending": False,
    }
    engine.dispatch(gate_alarm(0))
    assert engine.sensor_status("s")["pending"] is True


def test_sensor_registry_errors(config):
    engine = Engine(config)
    engine.register_sensor(VirtualSensor("s"))
    with pytest.raises(ValueError):
        engine.register_sensor(VirtualSensor("s"))
    with pytest.raises(KeyError):
        engine.set_active("ghost", True)
    with pytest.raises(ValueError):
        engine.set_frequency("s", 0)
    with pytest.raises(ValueError):
        VirtualSensor("x", frequency_ms=-5)


def test_clock_cannot_rewind(config):
    engine = Engine(config)
    engine.advance_clock(5000)
    with pytest.raises(SequencingError):
        engine.advance_clock(4999)


def test_sensors_see_stream_alarms(config):
    scenario = load_scenario(fixture_path("scenario_serious_crash.json"))
    samples, _ = generate(scenario)
    engine = Engine(config)
    s = VirtualSensor("ops", frequency_ms=1000)
    engine.register_sensor(s)
    engine.process_stream(samples)
    assert s.deliveries > 0
    assert s.last_alarm is not None
    assert s.last_alarm.trigger == TRIGGER_GATE


# -- config loading --------------------------------------------------


def test_load_config_fixture(config):
    assert config.classes[0] == "normal"
    assert config.loop_rule.k == 3
    assert [c.key for c in config.attributes][:2] == ["vm.cpu", "vm.memory"]
    assert config.severity_mdd.node_count() >= 1


def test_load_config_detects_model_tampering(tmp_path):
    cfg_doc = json.loads(open(fixture_path("engine_config.json")).read())
    model_bytes = open(fixture_path(cfg_doc["model"]["path"]), "rb").read()
    (tmp_path / "model.json").write_bytes(model_bytes + b" ")
    cfg_doc["model"]["path"] = "model.json"
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg_doc))
    with pytest.raises(ConfigError, match="hash"):
        load_config(p)


def test_load_config_missing_model_file(tmp_path):
    cfg_doc = json.loads(open(fixture_path("engine_config.json")).read())
    cfg_doc["model"]["path"] = "nope.json"
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg_doc))
    with pytest.raises(ConfigError, match="not found"):
        load_config(p)


def test_load_config_requires_model_reference(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"attributes": ["vm.cpu"]}))
    with pytest.raises(ConfigError, match="model"):
        load_config(p)


def test_engine_config_cross_checks(config):
    with pytest.raises(ConfigError, match="spec"):
        EngineConfig(
            specs={k: v for k, v in config.specs.items() if k != "vm.cpu"},
            attributes=config.attributes,
            severity_components=config.severity_components,
            model=config.model,
        )
    with pytest.raises(ConfigError, match="attributes"):
        EngineConfig(
            specs=config.specs,
            attributes=config.attributes[::-1],
            severity_components=config.severity_components,
            model=config.model,
        )
    with pytest.raises(ConfigError, match="cause"):
        EngineConfig(
            specs=config.specs,
            attributes=config.attributes,
            severity_components=config.severity_components,
            model=config.model,
            loop_rule=LoopRule(cause="gremlins"),
        )
