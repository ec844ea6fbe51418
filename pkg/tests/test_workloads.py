import pytest

from audit_arena.collectors import install, preset
from audit_arena.engine import CostModel, SimMachine, seconds
from audit_arena.experiments import RECORD_BYTES, audit_machine
from audit_arena.errors import ConfigError
from audit_arena.workloads import (MalwareSpec, ServerAppSpec, SuperProducerSpec, cloudsuite_victim, drive,
                                   measure_throughput, static_target)


def _measure(m, app, t0_s, t1_s):
    m.run_until(seconds(t0_s))
    a = app.mark(m)
    m.run_until(seconds(t1_s))
    b = app.mark(m)
    return measure_throughput(app, (a, b))


def test_zero_write_fraction_emits_nothing():
    m = SimMachine(cores=2)
    install(m, "sysdig")
    app = drive(SuperProducerSpec(2, 0.0, 10_000.0, 1.0), m)
    m.run_until(seconds(1))
    assert m.counters.generated == 0 and app.events() == 0
    assert all(t.app_ns > 0 for t in app.threads)


def test_effective_rate_is_product():
    assert SuperProducerSpec(4, 1.0, 25_000.0).effective_rate(8) == 100_000
    assert SuperProducerSpec(None, 0.5, 10_000.0).effective_rate(8) == 40_000


def test_offered_rate_realized_without_collector_pressure():
    # the collector gets a core of its own
    m = SimMachine(cores=5)
    install(m, preset("sysdig", 64 * 1024 * 1024))
    drive(SuperProducerSpec(4, 1.0, 25_000.0, 1.0, cores=(0, 1, 2, 3)), m)
    m.run_until(seconds(1))
    assert m.counters.generated == pytest.approx(100_000, rel=0.01)


def test_blocking_collector_caps_generation_near_drain_rate():
    m = SimMachine(cores=2)
    install(m, preset("sysdig-integrity", 1024 * RECORD_BYTES))
    drive(SuperProducerSpec(1, 1.0, 100_000.0, 5.0, cores=(0,)), m)
    m.run_until(seconds(5))
    assert m.counters.generated / 5 == pytest.approx(4000, rel=0.05)
    assert m.counters.dropped == 0


def test_app_alone_throughput():
    m = SimMachine(cores=1)
    app = drive(ServerAppSpec(request_cpu_cost=100.0), m)
    tp = _measure(m, app, 0.1, 1.1)
    assert tp.requests_per_s == pytest.approx(10_000, rel=0.01)
    assert tp.events_per_s == 0


def test_nodrop_per_request_charge():
    costs = CostModel(kernel_record_cost=1.0, consume_cost=1.0)
    m = SimMachine(cores=1, cost_model=costs)
    install(m, preset("nodrop", 10_000 * RECORD_BYTES))
    app = drive(ServerAppSpec(request_cpu_cost=100.0, events_per_request=10), m)
    tp = _measure(m, app, 0.5, 2.5)
    assert tp.requests_per_s == pytest.approx(1e6 / 120, rel=0.01)
    assert m.counters.dropped == 0
    assert audit_machine(m) == []


def test_closed_loop_matches_open_loop_below_saturation():
    closed = SimMachine(cores=1)
    app_c = drive(ServerAppSpec(request_cpu_cost=100.0), closed)
    capacity = _measure(closed, app_c, 0.1, 1.1).requests_per_s
    opened = SimMachine(cores=1)
    app_o = drive(ServerAppSpec(request_cpu_cost=100.0, offered_rate=0.5 * capacity), opened)
    tp = _measure(opened, app_o, 0.1, 1.1)
    assert tp.requests_per_s == pytest.approx(0.5 * capacity, rel=0.01)
    # at full rate the open-loop app completes what the closed-loop one does
    full = SimMachine(cores=1)
    app_f = drive(ServerAppSpec(request_cpu_cost=100.0, offered_rate=capacity), full)
    assert _measure(full, app_f, 0.1, 1.1).requests_per_s == pytest.approx(capacity, rel=0.01)


def test_realized_never_exceeds_offered():
    for name in ("sysdig", "sysdig-integrity", "nodrop"):
        m = SimMachine(cores=2)
        install(m, preset(name, 256 * RECORD_BYTES))
        drive(SuperProducerSpec(2, 1.0, 20_000.0, 1.0), m)
        m.run_until(seconds(1))
        assert m.counters.generated <= 40_000


def test_zero_length_window_rejected():
    m = SimMachine(cores=1)
    app = drive(ServerAppSpec(request_cpu_cost=100.0), m)
    t = app.mark(m)
    with pytest.raises(ValueError):
        measure_throughput(app, (t, t))


def test_markers_have_ordinary_sizes():
    # a collector too slow to drain anything in the window
    m = SimMachine(cores=1, cost_model=CostModel(consume_cost=1e6))
    aud = install(m, preset("sysdig", 64 * 1024))
    drive(MalwareSpec(start_time=100, marker_count=5, inter_marker_gap=10.0), m)
    drive(SuperProducerSpec(1, 1.0, 1000.0, 0.01), m)
    m.run_until(seconds(0.01))
    (buf,) = aud.buffers.buffers.values()
    records = buf.pop_batch(10_000)
    marked = [r for r in records if r.marker == "c2"]
    plain = [r for r in records if r.marker is None]
    assert len(marked) == 5 and plain
    assert {len(r.to_bytes()) for r in marked} == {len(r.to_bytes()) for r in plain}


def test_workload_settings_rejected_when_invalid():
    with pytest.raises(ConfigError):
        SuperProducerSpec(write_fraction=1.5)
    with pytest.raises(ConfigError):
        ServerAppSpec(events_per_request=-1)
    with pytest.raises(ConfigError):
        MalwareSpec(marker_count=0)
    assert cloudsuite_victim().events_per_request == 200
    assert static_target().events_per_request == 2
