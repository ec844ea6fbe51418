"""Bounded FIFO logging buffers, ownership schemes and overflow policies."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

from .errors import ConfigError, SimulationError
from .events import KIND_SYSCALL, EventRecord

DEFAULT_CAPACITY = 8 * 1024 * 1024
AUDIT_MAX_MESSAGES = 77_000


class BufferScheme(enum.Enum):
    PER_THREAD = "per-thread"
    PER_CORE = "per-core"
    SINGLE = "single"


class PushOutcome(enum.Enum):
    STORED = "stored"
    DROPPED = "dropped"
    WOULD_BLOCK = "would-block"


@dataclass(frozen=True)
class DropNew:
    pass


@dataclass(frozen=True)
class GrowUpTo:
    max_capacity: int


@dataclass(frozen=True)
class BlockProducer:
    pass


OverflowPolicy = DropNew | GrowUpTo | BlockProducer


@dataclass
class BufferStats:
    pushed: int = 0
    dropped: int = 0
    popped: int = 0


# run layout: [tid, size, count, marker, first_ts_us, arg_lengths]
TID, SIZE, COUNT, MARKER, TS, ARGS = range(6)


class LoggingBuffer:
    """FIFO of records, stored as runs of equal-sized records from one thread.

    `used` is measured in bytes, or in records when `count_mode` is set.
    Space popped by a concurrently running drainer is handed back gradually
    over the drainer's slice (see `begin_release`), so `used` may briefly
    exceed the bytes actually queued until `settle` is called.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY, policy: OverflowPolicy = DropNew(),
                 count_mode: bool = False, buffer_id: int = 0):
        if capacity <= 0:
            raise ConfigError("buffer capacity must be positive")
        if isinstance(policy, GrowUpTo) and policy.max_capacity < capacity:
            raise ConfigError("GrowUpTo maximum must be at least the initial capacity")
        self.id = buffer_id
        self.policy = policy
        self.count_mode = count_mode
        self.capacity = capacity
        self.max_capacity = policy.max_capacity if isinstance(policy, GrowUpTo) else capacity
        self.used = 0
        self.n_records = 0
        self.n_bytes = 0
        self.stats = BufferStats()
        self.runs: deque[list] = deque()
        self.markers = 0
        self.waiters: list[int] = []
        # set once a producer blocks; cleared when the buffer drains
        self.gated = False
        # linear release window of space popped by drainers this tick
        self.rel_a = 0
        self.rel_e = 0
        self.rel_total = 0
        self.credited = 0
        self.first_drop_us: int | None = None

    def __len__(self) -> int:
        return self.n_records

    @property
    def used_bytes(self) -> int:
        return self.n_bytes

    @property
    def free(self) -> int:
        return self.capacity - self.used

    @property
    def blocking(self) -> bool:
        return isinstance(self.policy, BlockProducer)

    def _units(self, size: int) -> int:
        return 1 if self.count_mode else size

    def push(self, record: EventRecord, now_us: int | None = None) -> PushOutcome:
        units = self._units(record.total_size)
        if self.gated and self.blocking:
            return PushOutcome.WOULD_BLOCK
        if units > self.max_capacity:
            raise ConfigError(
                f"record of {record.total_size} bytes exceeds buffer maximum {self.max_capacity}")
        while self.used + units > self.capacity and self.capacity < self.max_capacity:
            self.capacity = min(self.capacity * 2, self.max_capacity)
        if self.used + units > self.capacity:
            if self.blocking:
                return PushOutcome.WOULD_BLOCK
            self.stats.pushed += 1
            self.stats.dropped += 1
            if self.first_drop_us is None:
                self.first_drop_us = record.timestamp if now_us is None else now_us
            return PushOutcome.DROPPED
        self.stats.pushed += 1
        self.used += units
        self.append(record.tid, record.total_size, 1, record.marker is not None,
                    record.timestamp, record.arg_lengths)
        return PushOutcome.STORED

    def append(self, tid: int, size: int, count: int, marker: bool, ts_us: int, args=()) -> None:
        """Enqueue `count` records of one size. Capacity accounting is the caller's job."""
        if count <= 0:
            return
        runs = self.runs
        if runs:
            last = runs[-1]
            if last[TID] == tid and last[SIZE] == size and last[MARKER] == marker and last[TS] == ts_us:
                last[COUNT] += count
                self._grow_totals(size, count, marker)
                return
        runs.append([tid, size, count, marker, ts_us, tuple(args)])
        self._grow_totals(size, count, marker)

    def _grow_totals(self, size, count, marker):
        self.n_records += count
        self.n_bytes += size * count
        if marker:
            self.markers += count

    def take(self, n: int) -> list[list]:
        """Remove up to n records from the front; returns the removed runs.

        Does not touch `used`; pair with `release` or `begin_release`.
        """
        out = []
        runs = self.runs
        while n > 0 and runs:
            head = runs[0]
            k = head[COUNT]
            if k <= n:
                runs.popleft()
                out.append(head)
                n -= k
            else:
                piece = head.copy()
                piece[COUNT] = n
                head[COUNT] = k - n
                out.append(piece)
                n = 0
        for r in out:
            self.n_records -= r[COUNT]
            self.n_bytes -= r[SIZE] * r[COUNT]
            if r[MARKER]:
                self.markers -= r[COUNT]
            self.stats.popped += r[COUNT]
        return out

    def units_of(self, runs) -> int:
        if self.count_mode:
            return sum(r[COUNT] for r in runs)
        return sum(r[SIZE] * r[COUNT] for r in runs)

    def release(self, units: int) -> None:
        self.used -= units

    def pop_batch(self, max_events: int) -> list[EventRecord]:
        if max_events < 1:
            raise ValueError("max_events must be >= 1")
        runs = self.take(max_events)
        self.release(self.units_of(runs))
        out = []
        for r in runs:
            for _ in range(r[COUNT]):
                out.append(EventRecord(KIND_SYSCALL, r[TS], r[TID], r[SIZE], r[ARGS],
                                       "c2" if r[MARKER] else None))
        return out

    # gradual release of space popped by a drainer running in parallel

    def begin_release(self, a_ns: int, e_ns: int, units: int) -> None:
        if units <= 0:
            return
        if self.rel_total:
            self.rel_a = min(self.rel_a, a_ns)
            self.rel_e = max(self.rel_e, e_ns)
        else:
            self.rel_a, self.rel_e = a_ns, e_ns
        self.rel_total += units

    def credit_until(self, t_ns: int) -> None:
        if not self.rel_total:
            return
        span = self.rel_e - self.rel_a
        if t_ns >= self.rel_e or span <= 0:
            target = self.rel_total
        elif t_ns <= self.rel_a:
            return
        else:
            target = self.rel_total * (t_ns - self.rel_a) // span
        if target > self.credited:
            self.used -= target - self.credited
            self.credited = target

    def settle(self) -> None:
        if self.rel_total:
            self.used -= self.rel_total - self.credited
            self.rel_total = self.credited = 0

    def check(self) -> None:
        s = self.stats
        if s.pushed != s.popped + s.dropped + self.n_records:
            raise SimulationError(f"buffer {self.id}: conservation broken {s} residual={self.n_records}")
        if not self.rel_total:
            expect = self.n_records if self.count_mode else self.n_bytes
            if self.used != expect:
                raise SimulationError(f"buffer {self.id}: used={self.used} but queue holds {expect}")
        if self.used > self.capacity:
            raise SimulationError(f"buffer {self.id}: used {self.used} > capacity {self.capacity}")


class BufferSet:
    """The buffers of one collector architecture and the routing rule over them."""

    def __init__(self, scheme: BufferScheme, n_cores: int, capacity: int, policy: OverflowPolicy,
                 count_mode: bool = False):
        self.scheme = scheme
        self.capacity = capacity
        self.policy = policy
        self.count_mode = count_mode
        self.buffers: dict[int, LoggingBuffer] = {}
        self.retired: list[LoggingBuffer] = []
        if scheme is BufferScheme.PER_CORE:
            for c in range(n_cores):
                self._make(c)
        elif scheme is BufferScheme.SINGLE:
            self._make(0)

    def _make(self, key: int) -> LoggingBuffer:
        buf = LoggingBuffer(self.capacity, self.policy, self.count_mode, buffer_id=key)
        self.buffers[key] = buf
        return buf

    def add_thread(self, tid: int) -> None:
        if self.scheme is BufferScheme.PER_THREAD and tid not in self.buffers:
            self._make(tid)

    def remove_thread(self, tid: int) -> None:
        if self.scheme is BufferScheme.PER_THREAD:
            buf = self.buffers.get(tid)
            if buf is not None and buf.n_records == 0:
                self.retired.append(buf)
                del self.buffers[tid]

    def route(self, tid: int, core: int | None) -> int:
        if self.scheme is BufferScheme.PER_THREAD:
            if tid not in self.buffers:
                raise SimulationError(f"unknown thread {tid}")
            return tid
        if self.scheme is BufferScheme.PER_CORE:
            if core is None or core not in self.buffers:
                raise SimulationError(f"thread {tid} is not on a known core")
            return core
        return 0

    def all_buffers(self) -> list[LoggingBuffer]:
        return list(self.buffers.values()) + self.retired
