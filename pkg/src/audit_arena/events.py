"""Provenance event taxonomy and byte-level record encoding.

A record is a fixed 24-byte header followed by one framed field per
argument. Each field is a 2-byte stored length and the (possibly
truncated) payload. Payload content is synthesized as zero bytes; only
sizes matter to the simulation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence, Union

HEADER = struct.Struct("<4sQQI")
ARG_HEADER = struct.Struct("<H")

METADATA_BYTES = HEADER.size  # 24
ARG_HEADER_BYTES = ARG_HEADER.size  # 2
MAX_ARG_PAYLOAD = 80
ID_FIELD_BYTES = 8

KIND_SYSCALL = b"SYSC"
KIND_SWITCH = b"TSWT"
KIND_SIGNAL = b"SIGN"

C2_MARKER = "c2"


@dataclass(frozen=True)
class Syscall:
    nr: int
    args: tuple[int, ...] = ()

    def arg_lengths(self) -> tuple[int, ...]:
        return self.args


@dataclass(frozen=True)
class ThreadSwitch:
    prev_tid: int
    next_tid: int

    def arg_lengths(self) -> tuple[int, ...]:
        return (ID_FIELD_BYTES, ID_FIELD_BYTES)


@dataclass(frozen=True)
class Signal:
    signal_id: int
    pid: int

    def arg_lengths(self) -> tuple[int, ...]:
        return (ID_FIELD_BYTES, ID_FIELD_BYTES)


EventKind = Union[Syscall, ThreadSwitch, Signal]

_KIND_TAGS = {Syscall: KIND_SYSCALL, ThreadSwitch: KIND_SWITCH, Signal: KIND_SIGNAL}


@dataclass(frozen=True)
class SimEvent:
    kind: EventKind
    tid: int
    timestamp: int = 0
    marker: str | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("event timestamp must be non-negative")
        if any(n < 0 for n in self.kind.arg_lengths()):
            raise ValueError("argument lengths must be non-negative")


@dataclass(frozen=True)
class EventRecord:
    kind_tag: bytes
    timestamp: int
    tid: int
    total_size: int
    arg_lengths: tuple[int, ...] = ()
    marker: str | None = field(default=None, compare=False)

    def to_bytes(self) -> bytes:
        parts = [HEADER.pack(self.kind_tag, self.timestamp, self.tid, self.total_size)]
        for n in self.arg_lengths:
            parts.append(ARG_HEADER.pack(n))
            parts.append(bytes(n))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EventRecord":
        tag, ts, tid, total = HEADER.unpack_from(raw, 0)
        if total != len(raw):
            raise ValueError(f"record claims {total} bytes, got {len(raw)}")
        off = HEADER.size
        lengths = []
        while off < total:
            (n,) = ARG_HEADER.unpack_from(raw, off)
            lengths.append(n)
            off += ARG_HEADER.size + n
        if off != total:
            raise ValueError("truncated argument payload")
        return cls(tag, ts, tid, total, tuple(lengths))


def stored_length(arg_len: int) -> int:
    return min(arg_len, MAX_ARG_PAYLOAD)


def size_from_lengths(arg_lengths: Sequence[int]) -> int:
    return METADATA_BYTES + sum(ARG_HEADER_BYTES + min(n, MAX_ARG_PAYLOAD) for n in arg_lengths)


def encode(event: SimEvent) -> EventRecord:
    """Encode an event, truncating each argument independently to 80 bytes."""
    lengths = tuple(stored_length(n) for n in event.kind.arg_lengths())
    total = METADATA_BYTES + sum(ARG_HEADER_BYTES + n for n in lengths)
    return EventRecord(
        kind_tag=_KIND_TAGS[type(event.kind)],
        timestamp=event.timestamp,
        tid=event.tid,
        total_size=total,
        arg_lengths=lengths,
        marker=event.marker,
    )


def record_size(event: SimEvent) -> int:
    return size_from_lengths(event.kind.arg_lengths())


# write(fd, buf, count) with a 100-byte buffer: 24 + 10 + 82 + 10
WRITE_ARGS = (8, 100, 8)
WRITE_NR = 1


def write_event(tid: int, timestamp: int = 0, marker: str | None = None, payload: int = 100) -> SimEvent:
    return SimEvent(Syscall(WRITE_NR, (8, payload, 8)), tid, timestamp, marker)


class SizePattern:
    """Cyclic sequence of record sizes emitted by one thread.

    A single-entry pattern is the common case (every event the same size).
    Longer patterns come from an argument-size histogram.
    """

    __slots__ = ("sizes", "prefix")

    def __init__(self, sizes: Sequence[int]):
        if not sizes:
            raise ValueError("size pattern must not be empty")
        if any(s <= 0 for s in sizes):
            raise ValueError("record sizes must be positive")
        self.sizes = tuple(int(s) for s in sizes)
        acc = [0]
        for s in self.sizes:
            acc.append(acc[-1] + s)
        self.prefix = tuple(acc)

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def uniform(self) -> bool:
        return len(self.sizes) == 1

    @property
    def max_size(self) -> int:
        return max(self.sizes)

    def span_bytes(self, start: int, count: int) -> int:
        """Total bytes of `count` consecutive records starting at pattern index `start`."""
        n = len(self.sizes)
        full, rem = divmod(count, n)
        start %= n
        total = full * self.prefix[n]
        end = start + rem
        if end <= n:
            total += self.prefix[end] - self.prefix[start]
        else:
            total += self.prefix[n] - self.prefix[start] + self.prefix[end - n]
        return total

    @classmethod
    def from_histogram(cls, histogram: Sequence[tuple[Sequence[int], int]], rng, length: int = 64):
        """Draw `length` record sizes from weighted argument-length tuples."""
        choices = [size_from_lengths(args) for args, _ in histogram]
        weights = [w for _, w in histogram]
        return cls(rng.choices(choices, weights=weights, k=length))
