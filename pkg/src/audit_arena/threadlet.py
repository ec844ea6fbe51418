"""Self-consuming threadlet: a consumer that runs inside the producing thread.

The consumer is loaded into a thread the first time its buffer fills,
invoked synchronously on buffer-full or thread exit, drains the whole
buffer on the thread's own CPU quota, and then returns control. While it
is active, signals to the host thread are deferred, the protection key
guarding its memory is enabled for that thread only, and the thread's
privileges are temporarily raised.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

from .engine import NS_PER_US, Account, SimMachine, Thread, ThreadState
from .errors import SimulationError

SECTIONS = ("code", "globals", "heap", "stack", "mapped_buffer")
CONSUMER_KEY = 1  # one key per process, shared by all its consumers


class Phase(enum.Enum):
    UNINITIALIZED = "uninitialized"
    LOADED = "loaded"
    ACTIVE = "active"
    EXITING = "exiting"


class Trigger(enum.Enum):
    BUFFER_FULL = "buffer-full"
    THREAD_EXIT = "thread-exit"


class Access(enum.Enum):
    READ = "read"
    WRITE = "write"


class AccessResult(enum.Enum):
    ALLOWED = "allowed"
    VIOLATION = "violation"


@dataclass(frozen=True)
class ProtectionRegion:
    owner: int
    base: int
    key: int = CONSUMER_KEY
    sections: tuple = SECTIONS

    def section_keys(self) -> dict:
        return {name: self.key for name in self.sections}


ESCALATED = {"rlimit_unlimited": True, "seccomp_disabled": True, "capacity_raised": True}


class ConsumerState:
    def __init__(self, owner: int):
        self.owner = owner
        self.phase = Phase.UNINITIALIZED
        self.load_paid = False
        self.load_count = 0
        self.saved_privileges: dict | None = None
        self.deferred_signals: deque = deque()
        self.region: ProtectionRegion | None = None
        self.key_enabled = False
        self.trigger: Trigger | None = None
        # work owed in the current activation
        self.overhead_ns = 0
        self.remaining = 0
        self.progress_ns = 0
        self.exit_owed = False
        self.invoked_at_ns = 0
        self.windows: list[tuple[int, int]] = []
        self.record_windows = True
        self.activations = 0
        self.consumed = 0
        self.batches: list[int] = []


def _consumer_of(thread: Thread) -> ConsumerState:
    if thread.consumer is None:
        thread.consumer = ConsumerState(thread.tid)
    return thread.consumer


def invoke_consumer(machine: SimMachine, thread: Thread, buffer, trigger: Trigger, now_ns: int) -> None:
    """Hand control to the thread's consumer. Costs are paid later by `advance`."""
    c = _consumer_of(thread)
    if c.phase is Phase.ACTIVE:
        raise SimulationError(f"thread {thread.tid}: consumer invoked while already active")
    if c.phase is Phase.EXITING:
        raise SimulationError(f"thread {thread.tid}: consumer invoked after exit")
    if thread.state not in (ThreadState.RUNNING, ThreadState.RUNNABLE):
        raise SimulationError(f"thread {thread.tid}: invoking consumer from state {thread.state}")
    if trigger is Trigger.THREAD_EXIT and buffer.n_records == 0:
        raise SimulationError("thread-exit invocation with an empty buffer")
    costs = machine.cost_model
    t_us = now_ns // NS_PER_US
    overhead = 0
    if c.phase is Phase.UNINITIALIZED:
        overhead += costs.ns("consumer_load_cost")
        c.load_paid = True
        c.load_count += 1
        c.region = ProtectionRegion(thread.tid, machine.rng.getrandbits(64))
        c.phase = Phase.LOADED
        machine.trace.record(t_us, f"t{thread.tid}", f"consumer-loaded:{c.region.base:016x}")
    overhead += costs.ns("consumer_invoke_cost")
    c.overhead_ns = overhead
    c.key_enabled = True
    c.saved_privileges = dict(thread.privileges)
    thread.privileges.update(ESCALATED)
    c.phase = Phase.ACTIVE
    c.trigger = trigger
    c.remaining = buffer.n_records
    c.batches.append(c.remaining)
    c.progress_ns = 0
    c.exit_owed = False
    c.invoked_at_ns = now_ns
    c.activations += 1
    machine.counters.consumer_invocations += 1
    machine.set_state(thread, ThreadState.IN_CONSUMER, now_ns)
    machine.trace.record(t_us, f"t{thread.tid}", f"consumer-invoke:{trigger.value}")
    # the consumer touches its mapped buffer: legitimate, key enabled
    access_check(machine, thread.tid, c.region, Access.READ, now_ns, section="mapped_buffer")


def consumer_exit(machine: SimMachine, thread: Thread, buffer, now_ns: int) -> None:
    c = thread.consumer
    if c is None or c.phase is not Phase.ACTIVE:
        raise SimulationError(f"thread {thread.tid}: consumer exit while not active")
    if buffer.n_records:
        raise SimulationError(f"thread {thread.tid}: consumer exit with {buffer.n_records} records left")
    c.key_enabled = False
    thread.privileges.clear()
    thread.privileges.update(c.saved_privileges)
    c.saved_privileges = None
    if c.record_windows:
        c.windows.append((c.invoked_at_ns, now_ns))
    t_us = now_ns // NS_PER_US
    machine.trace.record(t_us, f"t{thread.tid}", "consumer-exit")
    exiting = c.trigger is Trigger.THREAD_EXIT
    c.phase = Phase.EXITING if exiting else Phase.LOADED
    c.trigger = None
    machine.set_state(thread, ThreadState.EXITED if exiting else ThreadState.RUNNABLE, now_ns)
    # deferred first, then anything that arrived up to now, in arrival order
    _defer_arrived(thread, now_ns)
    while c.deferred_signals:
        _, sig = c.deferred_signals.popleft()
        thread.delivered_signals.append((now_ns, sig))
        machine.trace.record(t_us, f"t{thread.tid}", f"signal-delivered:{sig}")


def _defer_arrived(thread: Thread, now_ns: int) -> None:
    c = thread.consumer
    pend = thread.pending_signals
    while pend and pend[0][0] <= now_ns:
        c.deferred_signals.append(pend.popleft())


def defer_signals(thread: Thread, now_ns: int) -> None:
    """Called at slice start while the consumer is active."""
    if thread.consumer is not None and thread.consumer.phase is Phase.ACTIVE:
        _defer_arrived(thread, now_ns)


def advance(machine: SimMachine, thread: Thread, buffer, budget_ns: int, now_ns: int) -> int:
    """Run the active consumer for up to `budget_ns`; returns ns used.

    Order of work: load/invoke overhead, one consume_cost per queued
    record (records leave the buffer as they are consumed), exit cost.
    """
    c = thread.consumer
    sched = machine.scheduler
    used = 0
    if c.overhead_ns:
        pay = min(c.overhead_ns, budget_ns)
        sched.charge(thread, pay, Account.CONSUMER)
        c.overhead_ns -= pay
        used += pay
        if c.overhead_ns:
            return used
    if c.remaining:
        cost = machine.cost_model.ns("consume_cost")
        left = budget_ns - used
        if cost == 0:
            k = c.remaining
            spent = 0
        else:
            k = min(c.remaining, (left + c.progress_ns) // cost)
            if k:
                spent = k * cost - c.progress_ns
                c.progress_ns = 0
            else:
                spent = 0
        if k:
            runs = buffer.take(k)
            buffer.release(buffer.units_of(runs))
            c.remaining -= k
            c.consumed += k
            machine.counters.consumed += k
        if c.remaining:
            rest = left - spent
            c.progress_ns += rest
            spent += rest
        sched.charge(thread, spent, Account.CONSUMER)
        used += spent
        if c.remaining:
            return used
        c.exit_owed = True
        c.progress_ns = 0
    if not c.exit_owed:
        c.exit_owed = True
    exit_cost = machine.cost_model.ns("consumer_exit_cost")
    need = exit_cost - c.progress_ns
    left = budget_ns - used
    if need > left:
        c.progress_ns += left
        sched.charge(thread, left, Account.CONSUMER)
        return budget_ns
    sched.charge(thread, need, Account.CONSUMER)
    used += need
    c.progress_ns = 0
    c.exit_owed = False
    consumer_exit(machine, thread, buffer, now_ns + used)
    return used


def access_check(machine: SimMachine, actor: int, region: ProtectionRegion, kind: Access,
                 now_ns: int, section: str = "heap", probe: bool = False) -> AccessResult:
    """Key permissions are thread-local: only the owner, while its consumer is active."""
    if section not in region.sections:
        raise ValueError(f"unknown section {section}")
    owner = machine.threads[region.owner]
    c = owner.consumer
    ok = actor == region.owner and c is not None and c.phase is Phase.ACTIVE and c.key_enabled
    if ok:
        if probe:
            machine.counters.allowed_probes += 1
        else:
            machine.counters.allowed_accesses += 1
        return AccessResult.ALLOWED
    machine.counters.violations.append((now_ns // NS_PER_US, actor, region.owner, kind.value, section))
    machine.trace.record(now_ns // NS_PER_US, f"t{actor}", f"violation:{region.owner}:{section}")
    return AccessResult.VIOLATION
