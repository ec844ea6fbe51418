import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audit_arena.engine import NS_PER_US, Account, CostModel, SimMachine
from audit_arena.errors import SimulationError
from helpers import Burner

FREE_SWITCH = CostModel(context_switch_cost=0)


def test_round_robin_alternates_each_quantum():
    m = SimMachine(cost_model=FREE_SWITCH)
    pid = m.add_process()
    a, b = Burner("a"), Burner("b")
    m.add_thread(a, pid)
    m.add_thread(b, pid)
    m.run_until(10_000)
    order = sorted([(t, "a") for t, _ in a.slices] + [(t, "b") for t, _ in b.slices])
    assert [n for _, n in order] == ["a", "b"] * 5
    assert all(d == 1000 * NS_PER_US for _, d in a.slices + b.slices)


def test_quota_20pct_per_period():
    m = SimMachine()
    cg = m.add_cgroup(0.2)
    th = Burner()
    m.add_thread(th, m.add_process(cg))
    m.run_until(1_000_000)
    peaks = m.cgroups[cg].period_peaks
    assert len(peaks) == 9
    for used in peaks:
        assert abs(used - 20_000 * NS_PER_US) <= 1000 * NS_PER_US


def test_throttled_thread_leaves_core_idle():
    m = SimMachine()
    cg = m.add_cgroup(0.2)
    m.add_thread(Burner(), m.add_process(cg))
    m.run_until(100_000)
    core = m.cores[0]
    assert core.idle_ns == 80_000 * NS_PER_US
    assert core.busy_ns == 20_000 * NS_PER_US


def test_lone_thread_never_switches():
    m = SimMachine()
    m.add_thread(Burner(), m.add_process())
    m.run_until(1_000_000)
    assert m.cores[0].switches == 0
    assert m.scheduler.system_switch_ns == 0


def test_switch_cost_charged_to_system_not_cgroups():
    m = SimMachine()
    pid = m.add_process()
    m.add_thread(Burner(), pid)
    m.add_thread(Burner(), pid)
    m.run_until(10_000)
    core = m.cores[0]
    # one switch per quantum boundary after the first slice
    assert core.switches == 9
    assert core.switch_ns == 9 * 5 * NS_PER_US
    assert m.cgroups[0].ledger[Account.APP] == core.busy_ns
    assert core.busy_ns + core.switch_ns + core.idle_ns == 10_000 * NS_PER_US


def test_switch_to_same_thread_rejected():
    m = SimMachine()
    with pytest.raises(SimulationError):
        m.scheduler.context_switch(m.cores[0], 1, 1, 100)


def test_negative_charge_rejected():
    m = SimMachine()
    th = Burner()
    m.add_thread(th, m.add_process())
    with pytest.raises(SimulationError):
        m.scheduler.charge(th, -1, Account.APP)


def test_period_rolls_budget():
    m = SimMachine(period_us=10_000)
    cg = m.add_cgroup(0.5)
    th = Burner()
    m.add_thread(th, m.add_process(cg))
    m.run_until(100_000)
    assert th.cpu_ns == 50_000 * NS_PER_US


@settings(max_examples=40, deadline=None)
@given(cores=st.integers(1, 3),
       groups=st.lists(st.tuples(st.sampled_from([0.1, 0.2, 0.25, 0.5, 0.8, 1.0]), st.integers(1, 3)),
                       min_size=1, max_size=3),
       switch=st.sampled_from([0, 5, 50]))
def test_quota_and_core_time_conservation(cores, groups, switch):
    m = SimMachine(cores=cores, cost_model=CostModel(context_switch_cost=switch))
    for quota, n in groups:
        pid = m.add_process(m.add_cgroup(quota))
        for _ in range(n):
            m.add_thread(Burner(), pid)
    m.run_until(300_000)
    assert m.scheduler.audit() == []
    q_ns = m.quantum_us * NS_PER_US
    for cg in m.cgroups[1:]:
        limit = cg.budget_ns(cores) + q_ns
        assert all(u <= limit for u in cg.period_peaks + [cg.used_ns])
    busy = sum(c.busy_ns for c in m.cores)
    assert busy == sum(t.cpu_ns for t in m.threads.values())
