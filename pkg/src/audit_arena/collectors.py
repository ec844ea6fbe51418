"""Collector architectures and the runtime that wires them into a machine.

An architecture is a point in (computation isolation x data isolation x
synchronization). Centralized ones drain buffers with dedicated collector
threads; the threadlet one lets each producing thread drain its own
buffer (see threadlet.py).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from . import threadlet
from .buffers import (AUDIT_MAX_MESSAGES, DEFAULT_CAPACITY, BlockProducer, BufferScheme, BufferSet,
                      DropNew, GrowUpTo, LoggingBuffer, OverflowPolicy, PushOutcome)
from .engine import NS_PER_US, Account, SimMachine, Thread, ThreadState
from .errors import ConfigError, SimulationError
from .events import SimEvent, encode
from .kernel import REASON_FULL, REASON_MAX, emit_slice


class Compute(enum.Enum):
    SINGLE_THREAD = "single-thread"
    PER_CORE_THREADS = "per-core-threads"
    THREADLET = "threadlet"


class Sync(enum.Enum):
    ASYNC = "async"
    SYNC = "sync"


class CaptureOutcome(enum.Enum):
    CONTINUE = "continue"
    DROPPED = "dropped"
    BLOCKED = "blocked"
    CONSUMER_INVOKED = "consumer-invoked"


@dataclass(frozen=True)
class Reduction:
    capacity_events_per_sec_per_core: float = 2000.0
    reduction_ratio: float = 0.70

    @property
    def keep_fraction(self) -> Fraction:
        return 1 - Fraction(str(self.reduction_ratio))


AUDIT_DEFAULT_MESSAGES = 8192
LTTNG_GROWTH_FACTOR = 8


@dataclass(frozen=True)
class CollectorArch:
    name: str
    scheme: BufferScheme
    overflow: OverflowPolicy
    compute: Compute
    sync: Sync
    reduction: Reduction | None = None
    capacity: int = DEFAULT_CAPACITY
    count_mode: bool = False
    netlink: bool = False

    def __post_init__(self):
        if self.compute is Compute.THREADLET:
            if self.scheme is not BufferScheme.PER_THREAD or self.sync is not Sync.SYNC:
                raise ConfigError("threadlet compute requires per-thread buffers and sync mode")
        if self.reduction is not None and self.sync is not Sync.SYNC:
            raise ConfigError("reduction requires sync mode")
        if self.sync is Sync.SYNC and not isinstance(self.overflow, BlockProducer):
            raise ConfigError("sync mode blocks producers; overflow policy must be BlockProducer")
        if self.sync is Sync.ASYNC and isinstance(self.overflow, BlockProducer):
            raise ConfigError("async mode cannot block producers")

    @property
    def centralized(self) -> bool:
        return self.compute is not Compute.THREADLET

    def with_capacity(self, capacity: int) -> "CollectorArch":
        overflow = self.overflow
        if isinstance(overflow, GrowUpTo):
            factor = max(1, overflow.max_capacity // self.capacity)
            overflow = GrowUpTo(capacity * factor)
        return replace(self, capacity=capacity, overflow=overflow)


def _sysdig(capacity=DEFAULT_CAPACITY):
    return CollectorArch("sysdig", BufferScheme.PER_CORE, DropNew(), Compute.SINGLE_THREAD,
                         Sync.ASYNC, capacity=capacity)


def _audit(capacity=AUDIT_DEFAULT_MESSAGES):
    return CollectorArch("audit", BufferScheme.SINGLE, DropNew(), Compute.SINGLE_THREAD, Sync.ASYNC,
                         capacity=capacity, count_mode=True, netlink=True)


def _lttng(capacity=DEFAULT_CAPACITY):
    return CollectorArch("lttng", BufferScheme.PER_CORE, GrowUpTo(capacity * LTTNG_GROWTH_FACTOR),
                         Compute.SINGLE_THREAD, Sync.ASYNC, capacity=capacity)


def _camflow(capacity=DEFAULT_CAPACITY):
    return CollectorArch("camflow", BufferScheme.PER_CORE, GrowUpTo(capacity * LTTNG_GROWTH_FACTOR),
                         Compute.PER_CORE_THREADS, Sync.ASYNC, capacity=capacity)


def _integrity(capacity=DEFAULT_CAPACITY):
    return CollectorArch("sysdig-integrity", BufferScheme.PER_CORE, BlockProducer(),
                         Compute.SINGLE_THREAD, Sync.SYNC, capacity=capacity)


def _cpr(capacity=DEFAULT_CAPACITY):
    return replace(_integrity(capacity), name="sysdig-cpr", reduction=Reduction())


def _nodrop(capacity=DEFAULT_CAPACITY):
    return CollectorArch("nodrop", BufferScheme.PER_THREAD, BlockProducer(), Compute.THREADLET,
                         Sync.SYNC, capacity=capacity)


PRESETS = {
    "sysdig": _sysdig,
    "audit": _audit,
    "lttng": _lttng,
    "camflow": _camflow,
    "sysdig-integrity": _integrity,
    "sysdig-cpr": _cpr,
    "nodrop": _nodrop,
}
PRESET_NAMES = tuple(PRESETS)
NO_CONSUMER = "none"

# designs without a named preset, expressed on the same axes.
DOCUMENTED_ROWS = {
    "kennyloggings": (Compute.SINGLE_THREAD, BufferScheme.SINGLE, Sync.ASYNC),
    "hardlog": (Compute.SINGLE_THREAD, BufferScheme.SINGLE, Sync.SYNC),
    "quicklog": (Compute.SINGLE_THREAD, BufferScheme.SINGLE, Sync.ASYNC),
}


def preset(name: str, capacity: int | None = None) -> CollectorArch:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}") from None
    return factory() if capacity is None else factory(capacity)


def fair_split(available: list[int], k: int) -> list[int]:
    """Split k pops over buffers round-robin, never exceeding what each holds."""
    out = [0] * len(available)
    live = [i for i, a in enumerate(available) if a > 0]
    while k > 0 and live:
        share, extra = divmod(k, len(live))
        nxt = []
        for j, i in enumerate(live):
            want = share + (1 if j < extra else 0)
            give = min(want, available[i] - out[i])
            out[i] += give
            k -= give
            if out[i] < available[i]:
                nxt.append(i)
        if share == 0 and extra == 0:
            break
        live = nxt
    return out


class CollectorThread(Thread):
    """Centralized drain loop over a fixed set of buffers."""

    is_drainer = True

    def __init__(self, auditor: "Auditor", keys: list[int], name: str = "collector",
                 downstream: bool = False):
        super().__init__(name)
        self.auditor = auditor
        self.keys = keys
        self.downstream = downstream
        self.progress_ns = 0
        self.drained = 0

    def owned(self) -> list[LoggingBuffer]:
        bs = self.auditor.downstream if self.downstream else self.auditor.buffers
        return [bs.buffers[k] for k in self.keys if k in bs.buffers]

    def has_work(self) -> bool:
        return any(b.n_records for b in self.owned())

    def run(self, machine: SimMachine, budget_ns: int, now_ns: int) -> int:
        owned = self.owned()
        cost = self.auditor.drain_cost_ns
        avail = [b.n_records for b in owned]
        total = sum(avail)
        if total == 0:
            machine.set_state(self, ThreadState.SLEEPING, now_ns)
            return 0
        k = total if cost == 0 else min(total, (budget_ns + self.progress_ns) // cost)
        if k == 0:
            self.progress_ns += budget_ns
            machine.scheduler.charge(self, budget_ns, Account.COLLECTOR)
            return budget_ns
        spent = k * cost - self.progress_ns
        self.progress_ns = 0
        if k == total:
            # starved before the slice ended
            machine.set_state(self, ThreadState.SLEEPING, now_ns + spent)
        else:
            self.progress_ns = budget_ns - spent
            spent = budget_ns
        machine.scheduler.charge(self, spent, Account.COLLECTOR)
        end = now_ns + spent
        for buf, n in zip(owned, fair_split(avail, k)):
            if n:
                runs = buf.take(n)
                buf.begin_release(now_ns, end, buf.units_of(runs))
                self.auditor.mark_dirty(buf)
        self.drained += k
        if self.downstream:
            machine.counters.downstream_consumed += k
        else:
            machine.counters.consumed += k
        return spent


class ReductionWorker(Thread):
    """Per-core in-kernel reduction pass feeding the user-space collector."""

    is_drainer = True

    def __init__(self, auditor: "Auditor", core: int):
        super().__init__(f"reducer{core}")
        self.auditor = auditor
        self.key = core
        self.progress_ns = 0
        self.reduced = 0
        self.kept = 0

    def run(self, machine: SimMachine, budget_ns: int, now_ns: int) -> int:
        a = self.auditor
        src = a.buffers.buffers[self.key]
        dst = a.downstream.buffers[self.key]
        if src.n_records == 0:
            machine.set_state(self, ThreadState.SLEEPING, now_ns)
            return 0
        cost = a.reduction_cost_ns
        k = src.n_records if cost == 0 else min(src.n_records, (budget_ns + self.progress_ns) // cost)
        # reduced output must fit downstream
        room = dst.capacity - dst.used
        keep_frac = a.arch.reduction.keep_fraction
        size = src.runs[0][1]
        unit = 1 if dst.count_mode else size
        while k and self._kept_for(k, keep_frac) * unit > room:
            k -= 1
        if k == 0:
            if self._kept_for(1, keep_frac) * unit > room:
                machine.set_state(self, ThreadState.SLEEPING, now_ns)
                return 0
            self.progress_ns += budget_ns
            machine.scheduler.charge(self, budget_ns, Account.COLLECTOR)
            return budget_ns
        spent = k * cost - self.progress_ns
        self.progress_ns = 0
        if k == src.n_records:
            machine.set_state(self, ThreadState.SLEEPING, now_ns + spent)
        else:
            self.progress_ns = budget_ns - spent
            spent = budget_ns
        machine.scheduler.charge(self, spent, Account.COLLECTOR)
        runs = src.take(k)
        src.begin_release(now_ns, now_ns + spent, src.units_of(runs))
        a.mark_dirty(src)
        kept = self._kept_for(k, keep_frac)
        self.reduced += k
        self.kept += kept
        machine.counters.consumed += k
        machine.counters.downstream_stored += kept
        left = kept
        for r in runs:
            take = min(left, r[2])
            if take:
                dst.append(r[0], r[1], take, r[3], r[4], r[5])
                dst.used += take if dst.count_mode else take * r[1]
                dst.stats.pushed += take
                left -= take
        a.wake_drainers(machine, dst, now_ns + spent)
        return spent

    def _kept_for(self, k: int, frac: Fraction) -> int:
        return int((self.reduced + k) * frac) - int(self.reduced * frac)


class Auditor:
    """Runtime instance of an architecture installed on one machine.

    `arch=None` models the no-consumer baseline: events are generated
    but nothing is captured or buffered.
    """

    def __init__(self, arch: CollectorArch | None, machine: SimMachine, collector_cgroup: int = 0,
                 collector_core: int | None = None):
        self.arch = arch
        self.m = machine
        costs = machine.cost_model
        self.capture_ns = 0 if arch is None else costs.ns("kernel_record_cost")
        self.drain_cost_ns = costs.ns("consume_cost")
        if arch is not None and arch.netlink:
            self.drain_cost_ns += costs.ns("transport_cost")
        self.reduction_cost_ns = 0
        self.collectors: list[CollectorThread] = []
        self.reducers: list[ReductionWorker] = []
        self.downstream: BufferSet | None = None
        self._dirty: dict[int, LoggingBuffer] = {}
        self._waiting: dict[int, LoggingBuffer] = {}
        n = machine.n_cores
        if arch is None:
            self.buffers = None
        else:
            self.buffers = BufferSet(arch.scheme, n, arch.capacity, arch.overflow, arch.count_mode)
        machine.arch = self
        if arch is None or not arch.centralized:
            return
        if collector_core is None:
            collector_core = n - 1
        pid = machine.add_process(collector_cgroup, name=f"{arch.name}-collector")
        keys = list(range(n)) if arch.scheme is BufferScheme.PER_CORE else [0]
        if arch.reduction is not None:
            self.reduction_cost_ns = costs.ns("reduction_cost")
            implied = 1e6 / costs.reduction_cost if costs.reduction_cost else float("inf")
            if abs(implied - arch.reduction.capacity_events_per_sec_per_core) > 1e-6 * implied:
                raise ConfigError(
                    f"reduction capacity {arch.reduction.capacity_events_per_sec_per_core} ev/s "
                    f"disagrees with reduction_cost {costs.reduction_cost} us")
            self.downstream = BufferSet(BufferScheme.PER_CORE, n, arch.capacity, DropNew(),
                                        arch.count_mode)
            kpid = machine.add_process(0, name="cpr-kernel")
            for c in range(n):
                w = ReductionWorker(self, c)
                machine.add_thread(w, kpid, core=c)
                self.reducers.append(w)
            downstream = True
        else:
            downstream = False
        if arch.compute is Compute.PER_CORE_THREADS:
            for c in range(n):
                t = CollectorThread(self, [c], name=f"collector{c}", downstream=downstream)
                machine.add_thread(t, pid, core=c)
                self.collectors.append(t)
        else:
            t = CollectorThread(self, keys, downstream=downstream)
            machine.add_thread(t, pid, core=collector_core)
            self.collectors.append(t)
        for t in self.collectors + self.reducers:
            t.state = ThreadState.SLEEPING

    # -- bookkeeping -------------------------------------------------------

    def on_thread_added(self, machine: SimMachine, thread: Thread) -> None:
        if self.buffers is not None and getattr(thread, "captures", False):
            self.buffers.add_thread(thread.tid)
            buf = self.buffers.buffers.get(self.buffers.route(thread.tid, thread.core))
            if buf is not None:
                limit = buf.max_capacity
                biggest = 1 if buf.count_mode else thread.pattern.max_size
                if biggest > limit:
                    raise ConfigError(f"record of {biggest} bytes exceeds buffer maximum {limit}")

    def mark_dirty(self, buf: LoggingBuffer) -> None:
        self._dirty[id(buf)] = buf

    def all_buffers(self) -> list[LoggingBuffer]:
        out = [] if self.buffers is None else self.buffers.all_buffers()
        if self.downstream is not None:
            out += self.downstream.all_buffers()
        return out

    def wake_drainers(self, machine: SimMachine, buf: LoggingBuffer, now_ns: int) -> None:
        downstream = self.downstream is not None and buf in self.downstream.buffers.values()
        if self.reducers and not downstream:
            w = self.reducers[buf.id]
            if w.state is ThreadState.SLEEPING:
                machine.set_state(w, ThreadState.RUNNABLE, now_ns)
            return
        for t in self.collectors:
            if t.state is ThreadState.SLEEPING and buf.id in t.keys:
                machine.set_state(t, ThreadState.RUNNABLE, now_ns)

    def end_tick(self, machine: SimMachine, t1_ns: int) -> None:
        for buf in self._dirty.values():
            buf.settle()
        self._dirty.clear()
        if self._waiting:
            done = [k for k, b in self._waiting.items() if b.n_records == 0 and b.used == 0]
            for k in done:
                buf = self._waiting.pop(k)
                buf.gated = False
                for tid in buf.waiters:
                    th = machine.threads[tid]
                    if th.state is ThreadState.BLOCKED_ON_BUFFER:
                        machine.set_state(th, ThreadState.RUNNABLE, t1_ns)
                buf.waiters.clear()
        for w in self.reducers:
            if w.state is ThreadState.SLEEPING and self.buffers.buffers[w.key].n_records:
                machine.set_state(w, ThreadState.RUNNABLE, t1_ns)
        for t in self.collectors:
            if t.state is ThreadState.SLEEPING and t.has_work():
                machine.set_state(t, ThreadState.RUNNABLE, t1_ns)

    def block(self, machine: SimMachine, thread: Thread, buf: LoggingBuffer, now_ns: int) -> None:
        machine.set_state(thread, ThreadState.BLOCKED_ON_BUFFER, now_ns)
        buf.waiters.append(thread.tid)
        buf.gated = True
        self._waiting[id(buf)] = buf
        self.wake_drainers(machine, buf, now_ns)

    # -- single-event reference path -----------------------------------------

    def on_capture(self, thread: Thread, event: SimEvent, now_ns: int) -> CaptureOutcome:
        """Capture one event for a running thread.

        This is the unbatched path; `run_emitter` applies the same rules to a
        whole slice at once through the emit kernel.
        """
        m = self.m
        m.scheduler.charge(thread, self.capture_ns, Account.KERNEL_CAPTURE)
        if self.buffers is None:
            m.counters.generated += 1
            return CaptureOutcome.CONTINUE
        record = encode(event)
        buf = self.buffers.buffers[self.buffers.route(thread.tid, thread.core)]
        buf.credit_until(now_ns)
        outcome = buf.push(record, now_ns // NS_PER_US)
        if outcome is PushOutcome.WOULD_BLOCK:
            if self.arch.compute is Compute.THREADLET:
                threadlet.invoke_consumer(m, thread, buf, threadlet.Trigger.BUFFER_FULL, now_ns)
                return CaptureOutcome.CONSUMER_INVOKED
            self.block(m, thread, buf, now_ns)
            return CaptureOutcome.BLOCKED
        m.counters.generated += 1
        marker = event.marker is not None
        m.counters.markers_generated += marker
        if outcome is PushOutcome.DROPPED:
            m.counters.dropped += 1
            m.counters.markers_dropped += marker
            if m.counters.first_drop_ns is None:
                m.counters.first_drop_ns = now_ns
            return CaptureOutcome.DROPPED
        m.counters.stored += 1
        m.counters.markers_stored += marker
        self.wake_drainers(m, buf, now_ns)
        return CaptureOutcome.CONTINUE

    # -- batched producer path ---------------------------------------------

    def run_emitter(self, machine: SimMachine, th, budget_ns: int, now_ns: int) -> int:
        threadlet_mode = self.arch is not None and self.arch.compute is Compute.THREADLET
        used = 0
        if th.state is ThreadState.IN_CONSUMER:
            threadlet.defer_signals(th, now_ns)
            used += threadlet.advance(machine, th, self.buffers.buffers[th.tid], budget_ns, now_ns)
            if th.state is not ThreadState.RUNNABLE:
                return used
            machine.set_state(th, ThreadState.RUNNING, now_ns + used)
        else:
            th.deliver_signals(machine, now_ns)
        th.on_slice(machine, now_ns + used)
        counters = machine.counters
        capturing = self.buffers is not None and th.captures
        capture_ns = self.capture_ns if capturing else 0
        while used < budget_ns:
            t = now_ns + used
            if th.done(t):
                return used + self._exit(machine, th, budget_ns - used, t, threadlet_mode)
            limit = budget_ns - used
            stop_limited = th.stop_at_ns is not None and th.stop_at_ns - t < limit
            if stop_limited:
                limit = th.stop_at_ns - t
            allowed = th.allowed_events(t)
            if allowed == 0 and th.phase_ns >= th.app_ns:
                th.sleep_until_arrival(machine, t)
                return used
            if capturing:
                buf = self.buffers.buffers[self.buffers.route(th.tid, th.core)]
                # a gated buffer takes nothing until it has drained
                cap, max_cap = (0, 0) if buf.gated else (buf.capacity, buf.max_capacity)
                r = emit_slice(limit, t, th.app_ns, capture_ns, th.phase_ns, th.sizes_for_kernel,
                               th.size_idx, allowed, buf.count_mode, buf.used, cap, max_cap,
                               buf.rel_a, buf.rel_e, buf.rel_total, buf.credited,
                               buf.blocking, th.out_sizes)
            else:
                buf = None
                r = emit_slice(limit, t, th.app_ns, 0, th.phase_ns, th.sizes_for_kernel, th.size_idx,
                               allowed, True, 0, 1 << 62, 1 << 62, 0, 0, 0, 0, False, th.out_sizes)
            dt, phase, idx, emitted, stored, dropped = r[:6]
            reason, first_drop = r[10], r[11]
            if capturing and emitted and machine.trace.verbose:
                self._trace_captures(machine, th, t, emitted)
            th.phase_ns = phase
            th.size_idx = idx
            capture_total = emitted * capture_ns
            machine.scheduler.charge(th, dt - capture_total, Account.APP)
            machine.scheduler.charge(th, capture_total, Account.KERNEL_CAPTURE)
            used += dt
            th.emitted += emitted
            if capturing:
                counters.generated += emitted
                counters.stored += stored
                counters.dropped += dropped
                if th.marker:
                    counters.markers_generated += emitted
                    counters.markers_stored += stored
                    counters.markers_dropped += dropped
                self._apply(machine, th, buf, r, t)
                th.account(stored, dropped)
                if first_drop >= 0 and counters.first_drop_ns is None:
                    counters.first_drop_ns = t + first_drop
            if capturing and threadlet_mode and reason != REASON_FULL and stored and self._no_room(th, buf):
                # the consumer takes over as soon as the buffer is full
                reason = REASON_FULL
            if reason == REASON_FULL:
                if not threadlet_mode:
                    self.block(machine, th, buf, t + dt)
                    return used
                threadlet.invoke_consumer(machine, th, buf, threadlet.Trigger.BUFFER_FULL, t + dt)
                used += threadlet.advance(machine, th, buf, budget_ns - used, now_ns + used)
                if th.state is not ThreadState.RUNNABLE:
                    return used
                machine.set_state(th, ThreadState.RUNNING, now_ns + used)
            elif reason != REASON_MAX and dt < limit:
                # the next capture does not fit in what is left
                if not stop_limited:
                    return used
                # keep doing app work up to the stop time
                machine.scheduler.charge(th, limit - dt, Account.APP)
                th.phase_ns = min(th.app_ns, th.phase_ns + limit - dt)
                used += limit - dt
        return used

    @staticmethod
    def _no_room(th, buf) -> bool:
        units = 1 if buf.count_mode else th.pattern.sizes[th.size_idx]
        return buf.used + units > buf.max_capacity

    def _apply(self, machine, th, buf, r, t):
        stored = r[4]
        buf.used, buf.credited = r[7], r[9]
        if not buf.gated:
            buf.capacity = r[8]
        buf.stats.pushed += r[4] + r[5]
        buf.stats.dropped += r[5]
        if r[5] and buf.first_drop_us is None:
            buf.first_drop_us = (t + r[11]) // NS_PER_US
        if buf.rel_total:
            self.mark_dirty(buf)
        if not stored:
            return
        ts = t // NS_PER_US
        if th.pattern.uniform:
            buf.append(th.tid, th.pattern.sizes[0], stored, th.marker, ts, th.args_for(th.pattern.sizes[0]))
        else:
            out = th.out_sizes
            i = 0
            while i < stored:
                s = int(out[i])
                j = i + 1
                while j < stored and out[j] == s:
                    j += 1
                buf.append(th.tid, s, j - i, th.marker, ts, th.args_for(s))
                i = j
        if self.arch.centralized:
            self.wake_drainers(machine, buf, t)

    def _trace_captures(self, machine, th, t, emitted):
        first = th.app_ns - th.phase_ns if th.phase_ns < th.app_ns else 0
        stride = th.app_ns + self.capture_ns
        rec = machine.trace.record
        ent = f"t{th.tid}"
        for k in range(emitted):
            rec((t + first + k * stride) // NS_PER_US, ent, "capture")

    def _exit(self, machine, th, budget_ns, t, threadlet_mode) -> int:
        if threadlet_mode:
            buf = self.buffers.buffers[th.tid]
            if buf.n_records:
                threadlet.invoke_consumer(machine, th, buf, threadlet.Trigger.THREAD_EXIT, t)
                return threadlet.advance(machine, th, buf, budget_ns, t)
            if th.consumer is not None:
                th.consumer.phase = threadlet.Phase.EXITING
        machine.set_state(th, ThreadState.EXITED, t)
        return 0


def install(machine: SimMachine, arch: CollectorArch | str | None, **kw) -> Auditor:
    if isinstance(arch, str):
        arch = None if arch == NO_CONSUMER else preset(arch)
    if machine.threads and any(getattr(t, "emits", False) for t in machine.threads.values()):
        raise SimulationError("install the collector before adding producer threads")
    return Auditor(arch, machine, **kw)


def out_buffer(max_events: int) -> np.ndarray:
    return np.zeros(max(1, max_events), dtype=np.int64)
