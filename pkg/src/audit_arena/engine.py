"""Deterministic virtual-time engine and machine model.

Virtual time is an integer count of microseconds. Inside a scheduling
quantum, CPU work is tracked in integer nanoseconds so fractional
per-event costs (12.5 us inter-arrival at 80k ev/s) stay exact.
"""

from __future__ import annotations

import enum
import heapq
import random
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Callable

from .errors import ConfigError, InvariantViolation, SimulationError

VirtualTime = int  # microseconds since simulation start

NS_PER_US = 1000
US_PER_S = 1_000_000
DEFAULT_QUANTUM_US = 1_000
DEFAULT_PERIOD_US = 100_000


def seconds(s: float) -> VirtualTime:
    return int(round(s * US_PER_S))


class Account(enum.Enum):
    APP = "app"
    KERNEL_CAPTURE = "kernel-capture"
    CONSUMER = "consumer"
    COLLECTOR = "collector"


class ThreadState(enum.Enum):
    RUNNABLE = "runnable"
    RUNNING = "running"
    BLOCKED_ON_BUFFER = "blocked-on-buffer"
    IN_CONSUMER = "in-consumer"
    SLEEPING = "sleeping"
    EXITED = "exited"


RUNNABLE_STATES = (ThreadState.RUNNABLE, ThreadState.RUNNING, ThreadState.IN_CONSUMER)


@dataclass
class CostModel:
    """Per-action CPU prices in microseconds (fractions allowed)."""

    kernel_record_cost: float = 1.0
    consume_cost: float = 250.0
    context_switch_cost: float = 5.0
    consumer_load_cost: float = 1000.0
    consumer_invoke_cost: float = 10.0
    consumer_exit_cost: float = 10.0
    reduction_cost: float = 500.0
    transport_cost: float = 4.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or v < 0:
                raise ConfigError(f"cost {f.name} must be a non-negative number, got {v!r}")

    def ns(self, name: str) -> int:
        return int(round(getattr(self, name) * NS_PER_US))

    def replace(self, **kw) -> "CostModel":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return CostModel(**d)


@dataclass
class Cgroup:
    id: int
    cpu_quota_fraction: float = 1.0
    period_micros: int = DEFAULT_PERIOD_US
    used_ns: int = 0
    ledger: dict = field(default_factory=lambda: {a: 0 for a in Account})
    period_peaks: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.cpu_quota_fraction <= 1:
            raise ConfigError(f"cgroup {self.id}: quota must be in (0, 1]")

    @property
    def budget_used_this_period(self) -> int:
        return self.used_ns // NS_PER_US

    def budget_ns(self, n_cores: int) -> int:
        return int(self.cpu_quota_fraction * self.period_micros * NS_PER_US * n_cores)


@dataclass
class Core:
    id: int
    current: int | None = None
    busy_until: VirtualTime = 0
    runqueue: list = field(default_factory=list)
    rr: int = 0
    last: int | None = None
    busy_ns: int = 0
    switch_ns: int = 0
    idle_ns: int = 0
    switches: int = 0
    last_pick_ns: int = -1


@dataclass
class Process:
    id: int
    cgroup: int
    threads: list = field(default_factory=list)
    name: str = ""


class Thread:
    """Base simulated thread. Subclasses implement `run`."""

    is_drainer = False

    def __init__(self, name: str = ""):
        self.tid = -1
        self.pid = -1
        self.name = name
        self.state = ThreadState.RUNNABLE
        self.cpu_ns = 0
        self.core: int | None = None
        self.ready_at_ns = 0
        self.pending_signals: deque = deque()
        self.delivered_signals: list = []
        self.consumer = None
        self.privileges = {"rlimit_unlimited": False, "seccomp_disabled": False,
                           "capacity_raised": False}
        self.consumer_ns = 0

    @property
    def cpu_time_used(self) -> int:
        return self.cpu_ns // NS_PER_US

    @property
    def runnable(self) -> bool:
        return self.state in RUNNABLE_STATES

    def run(self, machine: "SimMachine", budget_ns: int, now_ns: int) -> int:
        raise NotImplementedError

    def deliver_signals(self, machine: "SimMachine", now_ns: int) -> None:
        """Deliver pending signals that arrived by `now_ns`, unless a consumer is active."""
        if self.state is ThreadState.IN_CONSUMER:
            return
        pend = self.pending_signals
        while pend and pend[0][0] <= now_ns:
            _, sig = pend.popleft()
            self.delivered_signals.append((now_ns, sig))
            machine.trace.record(now_ns // NS_PER_US, f"t{self.tid}", f"signal-delivered:{sig}")

    def __repr__(self):
        return f"<{type(self).__name__} tid={self.tid} {self.name} {self.state.value}>"


class SimTrace:
    """Newline-delimited `time_us,entity,transition` lines."""

    def __init__(self, verbose: bool = False):
        self.verbose = verbose
        self.lines: list[str] = []

    def record(self, time_us: int, entity: str, transition: str) -> None:
        if self.verbose:
            self.lines.append(f"{time_us},{entity},{transition}")

    def mark(self, time_us: int, transition: str) -> None:
        self.lines.append(f"{time_us},engine,{transition}")

    def count(self, transition: str) -> int:
        suffix = "," + transition
        return sum(1 for ln in self.lines if ln.endswith(suffix))

    def text(self) -> str:
        return "".join(ln + "\n" for ln in self.lines)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.text())


@dataclass
class Counters:
    generated: int = 0
    stored: int = 0
    dropped: int = 0
    consumed: int = 0
    downstream_stored: int = 0
    downstream_consumed: int = 0
    markers_generated: int = 0
    markers_stored: int = 0
    markers_dropped: int = 0
    consumer_invocations: int = 0
    violations: list = field(default_factory=list)
    allowed_probes: int = 0
    allowed_accesses: int = 0
    first_drop_ns: int | None = None


class EventQueue:
    """Min-heap of (time, insertion seq, action)."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, at: VirtualTime, action: Callable) -> None:
        heapq.heappush(self._heap, (at, self._seq, action))
        self._seq += 1

    def pop(self):
        at, _, action = heapq.heappop(self._heap)
        return at, action

    def peek_time(self) -> VirtualTime | None:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


class SimMachine:
    def __init__(self, cores: int = 1, cost_model: CostModel | None = None, rng_seed: int = 0,
                 quantum_us: int = DEFAULT_QUANTUM_US, period_us: int = DEFAULT_PERIOD_US,
                 verbose_trace: bool = False):
        if cores < 1:
            raise ConfigError("core count must be >= 1")
        if quantum_us <= 0 or period_us <= 0 or period_us % quantum_us:
            raise ConfigError("period must be a positive multiple of the quantum")
        from .scheduler import Scheduler

        self.cores = [Core(i) for i in range(cores)]
        self.cost_model = cost_model or CostModel()
        self.rng_seed = rng_seed
        self.rng = random.Random(rng_seed)
        self.quantum_us = quantum_us
        self.period_us = period_us
        self.clock: VirtualTime = 0
        self.cgroups: list[Cgroup] = [Cgroup(0, 1.0, period_us)]  # root, unlimited
        self.processes: list[Process] = []
        self.threads: dict[int, Thread] = {}
        self.queue = EventQueue()
        self.trace = SimTrace(verbose_trace)
        self.counters = Counters()
        self.arch = None
        self.scheduler = Scheduler(self)
        self._next_tick: VirtualTime | None = None
        self._placement = 0
        self.trace.mark(0, "start")

    @property
    def n_cores(self) -> int:
        return len(self.cores)

    @property
    def now_ns(self) -> int:
        return self.clock * NS_PER_US

    def add_cgroup(self, quota: float = 1.0) -> int:
        cg = Cgroup(len(self.cgroups), quota, self.period_us)
        self.cgroups.append(cg)
        return cg.id

    def add_process(self, cgroup: int = 0, name: str = "") -> int:
        if not 0 <= cgroup < len(self.cgroups):
            raise ConfigError(f"unknown cgroup {cgroup}")
        p = Process(len(self.processes), cgroup, name=name)
        self.processes.append(p)
        return p.id

    def add_thread(self, thread: Thread, pid: int, core: int | None = None) -> int:
        if not 0 <= pid < len(self.processes):
            raise ConfigError(f"unknown process {pid}")
        if core is None:
            core = self._placement % self.n_cores
            self._placement += 1
        if not 0 <= core < self.n_cores:
            raise ConfigError(f"unknown core {core}")
        tid = len(self.threads) + 1
        thread.tid = tid
        thread.pid = pid
        thread.core = core
        self.threads[tid] = thread
        self.processes[pid].threads.append(tid)
        self.cores[core].runqueue.append(tid)
        if self.arch is not None:
            self.arch.on_thread_added(self, thread)
        return tid

    def migrate(self, tid: int, core: int) -> None:
        th = self.threads[tid]
        self.cores[th.core].runqueue.remove(tid)
        self.cores[core].runqueue.append(tid)
        th.core = core
        self.trace.record(self.clock, f"t{tid}", f"migrate:{core}")

    def cgroup_of(self, thread: Thread) -> Cgroup:
        return self.cgroups[self.processes[thread.pid].cgroup]

    def set_state(self, thread: Thread, state: ThreadState, now_ns: int | None = None) -> None:
        if thread.state is not state:
            t = self.clock if now_ns is None else now_ns // NS_PER_US
            thread.state = state
            self.trace.record(t, f"t{thread.tid}", state.value)

    def schedule(self, at: VirtualTime, action: Callable) -> None:
        if at < self.clock:
            raise ConfigError(f"cannot schedule at {at} before clock {self.clock}")
        self.queue.push(at, action)

    def inject_signal(self, tid: int, at: VirtualTime, sig: int) -> None:
        def _arrive(machine, tid=tid, sig=sig, at=at):
            machine.threads[tid].pending_signals.append((at * NS_PER_US, sig))
        self.schedule(at, _arrive)

    def _tick(self, machine) -> None:
        t1 = self.clock
        t0 = t1 - self.quantum_us
        self.scheduler.tick(t0 * NS_PER_US, t1 * NS_PER_US)
        self._next_tick = t1 + self.quantum_us
        self.queue.push(self._next_tick, self._tick)

    def run_until(self, end: VirtualTime) -> SimTrace:
        if end < self.clock:
            raise ConfigError("run_until end precedes the clock")
        if self._next_tick is None:
            self._next_tick = self.quantum_us
            self.queue.push(self._next_tick, self._tick)
        q = self.queue
        while len(q) and q.peek_time() <= end:
            at, action = q.pop()
            if at < self.clock:
                raise InvariantViolation(f"clock went backwards: {at} < {self.clock}")
            self.clock = at
            action(self)
        self.clock = end
        return self.trace

    def run_while(self, predicate: Callable[["SimMachine"], bool], limit: VirtualTime) -> None:
        """Advance one quantum at a time while `predicate` holds, up to `limit`."""
        while predicate(self) and self.clock < limit:
            self.run_until(min(limit, self.clock + self.quantum_us))

    def finish(self) -> SimTrace:
        self.trace.mark(self.clock, "end")
        return self.trace

    def thread_on(self, core: Core) -> Thread | None:
        return self.threads.get(core.current) if core.current is not None else None

    def require_running(self, thread: Thread) -> Core:
        core = self.cores[thread.core]
        if core.current != thread.tid:
            raise SimulationError(f"thread {thread.tid} charged while not running")
        return core
