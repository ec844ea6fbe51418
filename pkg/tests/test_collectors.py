import pytest

from audit_arena.buffers import BlockProducer, BufferScheme, DropNew, GrowUpTo
from audit_arena.collectors import (DOCUMENTED_ROWS, PRESET_NAMES, CaptureOutcome, CollectorArch, Compute, Reduction,
                                    Sync, fair_split, install, preset)
from audit_arena.engine import NS_PER_US, CostModel, SimMachine, ThreadState, seconds
from audit_arena.errors import ConfigError
from audit_arena.events import encode, write_event
from audit_arena.experiments import RECORD_BYTES, audit_machine
from audit_arena.workloads import EmitterThread, SuperProducerSpec, drive


def test_preset_axes():
    axes = {n: (preset(n).compute, preset(n).scheme, type(preset(n).overflow), preset(n).sync)
            for n in PRESET_NAMES}
    assert axes == {
        "sysdig": (Compute.SINGLE_THREAD, BufferScheme.PER_CORE, DropNew, Sync.ASYNC),
        "audit": (Compute.SINGLE_THREAD, BufferScheme.SINGLE, DropNew, Sync.ASYNC),
        "lttng": (Compute.SINGLE_THREAD, BufferScheme.PER_CORE, GrowUpTo, Sync.ASYNC),
        "camflow": (Compute.PER_CORE_THREADS, BufferScheme.PER_CORE, GrowUpTo, Sync.ASYNC),
        "sysdig-integrity": (Compute.SINGLE_THREAD, BufferScheme.PER_CORE, BlockProducer, Sync.SYNC),
        "sysdig-cpr": (Compute.SINGLE_THREAD, BufferScheme.PER_CORE, BlockProducer, Sync.SYNC),
        "nodrop": (Compute.THREADLET, BufferScheme.PER_THREAD, BlockProducer, Sync.SYNC),
    }
    assert preset("audit").count_mode and preset("audit").netlink
    assert preset("sysdig-cpr").reduction == Reduction(2000.0, 0.70)
    assert set(DOCUMENTED_ROWS) == {"kennyloggings", "hardlog", "quicklog"}


def test_unknown_preset_lists_valid_names():
    with pytest.raises(ConfigError, match="sysdig, audit"):
        preset("sysdg")


@pytest.mark.parametrize("kw", [
    dict(scheme=BufferScheme.PER_CORE, overflow=BlockProducer(), compute=Compute.THREADLET, sync=Sync.SYNC),
    dict(scheme=BufferScheme.PER_THREAD, overflow=DropNew(), compute=Compute.THREADLET, sync=Sync.ASYNC),
    dict(scheme=BufferScheme.PER_CORE, overflow=DropNew(), compute=Compute.SINGLE_THREAD, sync=Sync.ASYNC,
         reduction=Reduction()),
    dict(scheme=BufferScheme.PER_CORE, overflow=DropNew(), compute=Compute.SINGLE_THREAD, sync=Sync.SYNC),
    dict(scheme=BufferScheme.PER_CORE, overflow=BlockProducer(), compute=Compute.SINGLE_THREAD, sync=Sync.ASYNC),
])
def test_invalid_axis_combinations(kw):
    with pytest.raises(ConfigError):
        CollectorArch("x", **kw)


def test_with_capacity_keeps_growth_factor():
    a = preset("lttng").with_capacity(1000)
    assert a.capacity == 1000 and a.overflow == GrowUpTo(8000)


def test_fair_split():
    assert fair_split([5, 0, 5], 4) == [2, 0, 2]
    assert fair_split([1, 10], 6) == [1, 5]
    assert fair_split([2, 2], 10) == [2, 2]
    assert fair_split([], 3) == []


def _running(m, th):
    core = m.cores[th.core]
    core.current = th.tid
    th.state = ThreadState.RUNNING
    return core


def _single_capture_machine(name, capacity):
    m = SimMachine(cores=2)
    aud = install(m, preset(name, capacity))
    th = EmitterThread("p", 1000)
    m.add_thread(th, m.add_process(), core=0)
    _running(m, th)
    return m, aud, th


def test_on_capture_nodrop_continues_until_full():
    m, aud, th = _single_capture_machine("nodrop", 2 * RECORD_BYTES)
    ev = write_event(th.tid)
    assert aud.on_capture(th, ev, 0) is CaptureOutcome.CONTINUE
    assert aud.on_capture(th, ev, 0) is CaptureOutcome.CONTINUE
    assert aud.on_capture(th, ev, 0) is CaptureOutcome.CONSUMER_INVOKED
    assert th.state is ThreadState.IN_CONSUMER
    assert th.cpu_ns == 3 * NS_PER_US


def test_on_capture_sysdig_drops_when_full():
    m, aud, th = _single_capture_machine("sysdig", RECORD_BYTES)
    ev = write_event(th.tid)
    assert aud.on_capture(th, ev, 0) is CaptureOutcome.CONTINUE
    assert aud.on_capture(th, ev, 0) is CaptureOutcome.DROPPED
    assert m.counters.dropped == 1 and m.counters.stored == 1


def test_on_capture_integrity_blocks_until_drained():
    m, aud, th = _single_capture_machine("sysdig-integrity", 3 * RECORD_BYTES)
    ev = write_event(th.tid)
    for _ in range(3):
        assert aud.on_capture(th, ev, 0) is CaptureOutcome.CONTINUE
    assert aud.on_capture(th, ev, 0) is CaptureOutcome.BLOCKED
    assert th.state is ThreadState.BLOCKED_ON_BUFFER
    m.cores[0].current = None
    # 3 records at 250 us each drain within the first tick; the producer wakes at its end
    m.run_until(1_000)
    assert m.counters.consumed == 3 and m.counters.dropped == 0
    assert th.state is not ThreadState.BLOCKED_ON_BUFFER
    assert not aud.buffers.buffers[0].gated


def _prefilled_drain(name, cores, per_buffer, seconds_run):
    m = SimMachine(cores=cores)
    aud = install(m, preset(name))
    rec = encode(write_event(1))
    for buf in aud.buffers.buffers.values():
        for _ in range(per_buffer):
            buf.push(rec)
        aud.wake_drainers(m, buf, 0)
    m.run_until(seconds(seconds_run))
    return m


def test_single_collector_drains_4000_per_second():
    m = _prefilled_drain("sysdig", 2, 10_000, 1.0)
    # one core to itself, no context switches: exactly 10^6 / 250
    assert m.counters.consumed == 4000


def test_per_core_collectors_scale_linearly():
    single = _prefilled_drain("sysdig", 4, 10_000, 0.5).counters.consumed
    per_core = _prefilled_drain("camflow", 4, 10_000, 0.5).counters.consumed
    assert single == 2000
    assert per_core == 4 * single


def test_audit_drain_pays_transport():
    m = SimMachine(cores=2)
    aud = install(m, "audit")
    costs = CostModel()
    assert aud.drain_cost_ns == (costs.consume_cost + costs.transport_cost) * NS_PER_US


def test_collector_lives_in_its_cgroup():
    m = SimMachine(cores=2)
    cg = m.add_cgroup(0.5)
    aud = install(m, "sysdig", collector_cgroup=cg, collector_core=0)
    (col,) = aud.collectors
    assert m.cgroup_of(col).id == cg and col.core == 0


def test_cpr_blocks_producer_most_of_the_time():
    m = SimMachine(cores=1)
    install(m, preset("sysdig-cpr", 256 * 1024))
    app = drive(SuperProducerSpec(1, 1.0, 100_000.0, 2.0), m)
    th = app.threads[0]
    blocked = 0
    for k in range(1, 2001):
        m.run_until(k * 1000)
        blocked += th.state is ThreadState.BLOCKED_ON_BUFFER
    assert blocked / 2000 > 0.9
    assert m.counters.dropped == 0
    assert audit_machine(m) == []


def test_reduction_cost_must_match_capacity():
    m = SimMachine(cost_model=CostModel(reduction_cost=100.0))
    with pytest.raises(ConfigError):
        install(m, "sysdig-cpr")


def test_install_after_producers_rejected():
    from audit_arena.errors import SimulationError
    m = SimMachine()
    m.add_thread(EmitterThread("p", 10), m.add_process())
    with pytest.raises(SimulationError):
        install(m, "sysdig")


def test_integrity_realized_rate_near_drain_rate():
    m = SimMachine(cores=2)
    install(m, preset("sysdig-integrity", 64 * RECORD_BYTES))
    drive(SuperProducerSpec(1, 1.0, 40_000.0, 10.0, cores=(0,)), m)
    m.run_until(seconds(10))
    rate = m.counters.generated / 10
    assert m.counters.dropped == 0
    assert rate == pytest.approx(4000, rel=0.05)
