"""Parametric application models driven on a SimMachine.

Every producer is an `EmitterThread`: a loop of captured events separated
by app work. It only makes progress while scheduled, so throttling,
blocking and consumer time all suppress generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernel, threadlet
from .engine import NS_PER_US, SimMachine, Thread, ThreadState
from .errors import ConfigError
from .events import WRITE_ARGS, SizePattern, size_from_lengths

NS_PER_S = 1_000_000_000


class EmitterThread(Thread):
    """A thread alternating captured events with app work.

    One cycle is: capture, then `app_ns` of app work. `events_per_unit`
    groups events into units of useful work (requests); with `captures`
    off, every cycle is one unit of pure work and nothing is recorded.
    Open-loop threads (`rate` units/s) sleep until the next arrival once
    caught up; closed-loop ones run flat out.
    """

    emits = True

    def __init__(self, name: str, app_ns: int, pattern: SizePattern | None = None,
                 arg_map: dict | None = None, events_per_unit: int = 1, captures: bool = True,
                 rate: float | None = None, start_ns: int = 0, stop_at_ns: int | None = None,
                 total_events: int | None = None, marker: bool = False, quantum_ns: int = 1_000_000):
        super().__init__(name)
        if app_ns < 0:
            raise ConfigError(f"{name}: negative app work per event")
        if rate is not None and rate <= 0:
            raise ConfigError(f"{name}: arrival rate must be positive")
        self.pattern = pattern or SizePattern([size_from_lengths(WRITE_ARGS)])
        self.arg_map = arg_map or {self.pattern.sizes[0]: WRITE_ARGS}
        self.app_ns = int(app_ns)
        self.phase_ns = self.app_ns  # start at a capture point
        self.events_per_unit = events_per_unit
        self.captures = captures
        self.rate = rate
        self.start_ns = start_ns
        self.ready_at_ns = start_ns
        self.stop_at_ns = stop_at_ns
        self.total_events = total_events
        self.marker = marker
        self.emitted = 0
        self.size_idx = 0
        sizes = np.asarray(self.pattern.sizes, dtype=np.int64)
        self.sizes_for_kernel = sizes if kernel.COMPILED else self.pattern.sizes
        per_call = 1 if self.pattern.uniform else quantum_ns // max(1, self.app_ns) + 2
        self.out_sizes = np.zeros(per_call, dtype=np.int64)
        self.latency_area = 0.0  # backlog-units x seconds, for Little's law
        self._last_sample_ns = start_ns

    @property
    def units(self) -> int:
        if not self.captures:
            return self.emitted
        return self.emitted // self.events_per_unit

    def args_for(self, size: int):
        return self.arg_map.get(size, ())

    def arrived_units(self, t_ns: int) -> int:
        if t_ns < self.start_ns:
            return 0
        return int((t_ns - self.start_ns) * self.rate / NS_PER_S) + 1

    def _per_unit(self) -> int:
        return self.events_per_unit if self.captures else 1

    def allowed_events(self, t_ns: int) -> int:
        allowed = -1
        if self.rate is not None:
            allowed = max(0, self.arrived_units(t_ns) * self._per_unit() - self.emitted)
        if self.total_events is not None:
            left = self.total_events - self.emitted
            allowed = left if allowed < 0 else min(allowed, left)
        return allowed

    def done(self, t_ns: int) -> bool:
        if self.stop_at_ns is not None and t_ns >= self.stop_at_ns:
            return True
        return (self.total_events is not None and self.emitted >= self.total_events
                and self.phase_ns >= self.app_ns)

    def sleep_until_arrival(self, machine: SimMachine, t_ns: int) -> None:
        n = self.arrived_units(t_ns)
        self.ready_at_ns = self.start_ns + math.ceil(n * NS_PER_S / self.rate)
        if self.ready_at_ns <= t_ns:
            self.ready_at_ns = t_ns + 1

    def account(self, stored: int, dropped: int) -> None:
        """Hook called after each batch of captures."""

    def on_slice(self, machine: SimMachine, t_ns: int) -> None:
        if self.rate is not None and t_ns > self._last_sample_ns:
            backlog = max(0, self.arrived_units(t_ns) - self.units)
            self.latency_area += backlog * (t_ns - self._last_sample_ns) / NS_PER_S
            self._last_sample_ns = t_ns

    def run(self, machine: SimMachine, budget_ns: int, now_ns: int) -> int:
        return machine.arch.run_emitter(machine, self, budget_ns, now_ns)


class ProbeThread(EmitterThread):
    """Adversarial thread that pokes consumer memory outside consumer windows."""

    def __init__(self, *args, probe_interval_ns: int = 1_000_000, probe_tid: int | None = None, **kw):
        super().__init__(*args, **kw)
        self.probe_interval_ns = probe_interval_ns
        self.probe_tid = probe_tid
        self.next_probe_ns = 0
        self.probes = 0

    def on_slice(self, machine: SimMachine, t_ns: int) -> None:
        super().on_slice(machine, t_ns)
        if t_ns < self.next_probe_ns or self.state is ThreadState.IN_CONSUMER:
            return
        owner = machine.threads[self.probe_tid] if self.probe_tid else self
        region = owner.consumer.region if owner.consumer is not None else None
        if region is None:
            return
        self.probes += 1
        threadlet.access_check(machine, self.tid, region, threadlet.Access.WRITE, t_ns,
                               section="heap", probe=True)
        self.next_probe_ns = t_ns + self.probe_interval_ns


# -- specs ---------------------------------------------------------------------


def _pattern(histogram, machine: SimMachine):
    if not histogram:
        return None, None
    pattern = SizePattern.from_histogram(histogram, machine.rng)
    arg_map = {size_from_lengths(args): tuple(args) for args, _ in histogram}
    return pattern, arg_map


def _gap_ns(rate_per_s: float) -> int:
    return int(round(NS_PER_S / rate_per_s))


@dataclass(frozen=True)
class SuperProducerSpec:
    """`process_count` processes looping write + count++ in a fixed proportion."""

    process_count: int | None = None
    write_fraction: float = 1.0
    peak_rate_per_proc: float = 10_000.0
    duration: float = 30.0
    cgroup: int = 0
    cores: tuple[int, ...] | None = None
    arg_histogram: tuple | None = None

    def __post_init__(self):
        if not 0 <= self.write_fraction <= 1:
            raise ConfigError("write_fraction must be in [0, 1]")
        if self.peak_rate_per_proc <= 0 or self.duration <= 0:
            raise ConfigError("peak rate and duration must be positive")
        if self.process_count is not None and self.process_count < 1:
            raise ConfigError("process_count must be >= 1")

    def procs(self, n_cores: int) -> int:
        return self.process_count or n_cores

    def effective_rate(self, n_cores: int) -> float:
        return self.procs(n_cores) * self.peak_rate_per_proc * self.write_fraction


@dataclass(frozen=True)
class ServerAppSpec:
    """A request-serving app. `offered_rate=None` means closed-loop.

    Closed-loop apps run `concurrency` workers flat out. Open-loop apps
    split `offered_rate` requests/s evenly over `concurrency` threads.
    """

    name: str = "app"
    request_cpu_cost: float = 100.0
    events_per_request: int = 0
    offered_rate: float | None = None
    concurrency: int = 1
    cgroup: int = 0
    cores: tuple[int, ...] | None = None
    arg_histogram: tuple | None = None

    def __post_init__(self):
        if self.events_per_request < 0:
            raise ConfigError(f"{self.name}: events_per_request must be >= 0")
        if self.request_cpu_cost <= 0 and self.events_per_request == 0:
            raise ConfigError(f"{self.name}: a request must cost something")
        if self.request_cpu_cost < 0:
            raise ConfigError(f"{self.name}: request cost must be >= 0")
        if self.concurrency < 1:
            raise ConfigError(f"{self.name}: concurrency must be >= 1")
        if self.offered_rate is not None and self.offered_rate <= 0:
            raise ConfigError(f"{self.name}: offered rate must be positive")

    @property
    def closed_loop(self) -> bool:
        return self.offered_rate is None


@dataclass(frozen=True)
class MalwareSpec:
    """Burst of command-and-control events, all tagged as markers."""

    start_time: int = 0
    marker_count: int = 5
    inter_marker_gap: float = 1.0
    cgroup: int = 0
    core: int | None = None

    def __post_init__(self):
        if self.marker_count < 1 or self.inter_marker_gap < 0 or self.start_time < 0:
            raise ConfigError("malware needs >= 1 marker, a non-negative gap and start time")


@dataclass(frozen=True)
class ProbeSpec:
    """Well-formed producer that also probes consumer memory every `interval_us`."""

    rate: float = 10_000.0
    interval_us: int = 1_000
    cgroup: int = 0
    core: int | None = None
    probe_tid: int | None = None


# victim/target stand-ins for the web-serving scenario
def cloudsuite_victim(offered_rate=None, concurrency=6, request_cpu_cost=7_300.0, events_per_request=200,
                      cgroup=0, cores=None) -> ServerAppSpec:
    return ServerAppSpec("victim", request_cpu_cost, events_per_request, offered_rate, concurrency,
                         cgroup, cores)


def static_target(offered_rate=None, request_cpu_cost=2_000.0, events_per_request=2, cgroup=0,
                  cores=None) -> ServerAppSpec:
    return ServerAppSpec("target", request_cpu_cost, events_per_request, offered_rate, 1, cgroup, cores)


# -- installation ------------------------------------------------------------


@dataclass
class App:
    name: str
    pid: int
    threads: list[EmitterThread]
    closed_loop: bool = True
    concurrency: int = 1
    marks: dict = field(default_factory=dict)

    def completed(self) -> int:
        return sum(t.units for t in self.threads)

    def events(self) -> int:
        return sum(t.emitted for t in self.threads if t.captures)

    def mark(self, machine: SimMachine) -> int:
        """Snapshot progress at the current clock; returns the time key."""
        self.marks[machine.clock] = (self.completed(), self.events(),
                                     sum(t.latency_area for t in self.threads))
        return machine.clock


@dataclass(frozen=True)
class Throughput:
    requests_per_s: float
    events_per_s: float
    latency_mean_us: float


def _ensure_runtime(machine: SimMachine) -> None:
    if machine.arch is None:
        from .collectors import install
        install(machine, None)


def _place(cores, i):
    return None if not cores else cores[i % len(cores)]


def drive(spec, machine: SimMachine, start_us: int = 0) -> App:
    """Add the threads for `spec` to `machine`; they start emitting at `start_us`."""
    _ensure_runtime(machine)
    q_ns = machine.quantum_us * NS_PER_US
    capture_ns = machine.cost_model.ns("kernel_record_cost")
    start_ns = start_us * NS_PER_US
    if isinstance(spec, SuperProducerSpec):
        pattern, arg_map = _pattern(spec.arg_histogram, machine)
        threads = []
        first_pid = None
        stop = start_ns + int(round(spec.duration * NS_PER_S))
        for i in range(spec.procs(machine.n_cores)):
            pid = machine.add_process(spec.cgroup, name=f"super{i}")
            first_pid = pid if first_pid is None else first_pid
            rate = spec.peak_rate_per_proc * spec.write_fraction
            if rate == 0:
                th = EmitterThread(f"super{i}", q_ns, captures=False, start_ns=start_ns, stop_at_ns=stop,
                                   quantum_ns=q_ns)
            else:
                gap = _gap_ns(rate)
                if gap <= capture_ns:
                    raise ConfigError(f"rate {rate} ev/s leaves no time for capture ({capture_ns} ns)")
                th = EmitterThread(f"super{i}", gap - capture_ns, pattern, arg_map, start_ns=start_ns,
                                   stop_at_ns=stop, quantum_ns=q_ns)
            machine.add_thread(th, pid, core=_place(spec.cores, i))
            threads.append(th)
        return App("super-producer", first_pid, threads)
    if isinstance(spec, ServerAppSpec):
        pattern, arg_map = _pattern(spec.arg_histogram, machine)
        pid = machine.add_process(spec.cgroup, name=spec.name)
        epr = spec.events_per_request
        cost_ns = int(round(spec.request_cpu_cost * NS_PER_US))
        threads = []
        for i in range(spec.concurrency):
            rate = None if spec.closed_loop else spec.offered_rate / spec.concurrency
            if epr == 0:
                th = EmitterThread(f"{spec.name}{i}", cost_ns, captures=False, rate=rate,
                                   start_ns=start_ns, quantum_ns=q_ns)
            else:
                app = cost_ns // epr
                if app + capture_ns == 0:
                    raise ConfigError(f"{spec.name}: zero cost per event")
                th = EmitterThread(f"{spec.name}{i}", app, pattern, arg_map, events_per_unit=epr,
                                   rate=rate, start_ns=start_ns, quantum_ns=q_ns)
            machine.add_thread(th, pid, core=_place(spec.cores, i))
            threads.append(th)
        return App(spec.name, pid, threads, spec.closed_loop, spec.concurrency)
    if isinstance(spec, MalwareSpec):
        pid = machine.add_process(spec.cgroup, name="malware")
        th = EmitterThread("malware", int(round(spec.inter_marker_gap * NS_PER_US)),
                           start_ns=spec.start_time * NS_PER_US, total_events=spec.marker_count,
                           marker=True, quantum_ns=q_ns)
        machine.add_thread(th, pid, core=spec.core)
        return App("malware", pid, [th])
    if isinstance(spec, ProbeSpec):
        pid = machine.add_process(spec.cgroup, name="probe")
        th = ProbeThread("probe", _gap_ns(spec.rate) - capture_ns, start_ns=start_ns,
                         probe_interval_ns=spec.interval_us * NS_PER_US, probe_tid=spec.probe_tid,
                         quantum_ns=q_ns)
        machine.add_thread(th, pid, core=spec.core)
        return App("probe", pid, [th])
    raise ConfigError(f"unknown workload spec {type(spec).__name__}")


def measure_throughput(app: App, window: tuple[int, int]) -> Throughput:
    """Completed requests per second between two marked clock values (us)."""
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("throughput window must have positive length")
    try:
        c0, e0, a0 = app.marks[t0]
        c1, e1, a1 = app.marks[t1]
    except KeyError as exc:
        raise ValueError(f"no progress mark at {exc.args[0]} us; call app.mark() then") from None
    secs = (t1 - t0) / 1e6
    rps = (c1 - c0) / secs
    if rps == 0:
        latency = math.inf
    elif app.closed_loop:
        latency = app.concurrency / rps * 1e6
    else:
        latency = (a1 - a0) / secs / rps * 1e6
    return Throughput(rps, (e1 - e0) / secs, latency)
