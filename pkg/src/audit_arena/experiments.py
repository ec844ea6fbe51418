"""Research-question harnesses, analytic oracles, audits and CSV output."""

from __future__ import annotations

import csv
import math
import os
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from .buffers import BufferScheme, GrowUpTo
from .collectors import NO_CONSUMER, Auditor, CollectorArch, install, preset
from .engine import NS_PER_US, Account, CostModel, SimMachine, ThreadState, seconds
from .errors import ConfigError, InvariantViolation
from .events import WRITE_ARGS, size_from_lengths
from .workloads import (EmitterThread, ServerAppSpec, SuperProducerSpec, cloudsuite_victim, drive,
                        measure_throughput, static_target)

RECORD_BYTES = size_from_lengths(WRITE_ARGS)  # 126
KiB = 1024


@dataclass(frozen=True)
class Setup:
    """Machine-level knobs shared by every harness."""

    cores: int | None = None
    costs: CostModel = field(default_factory=CostModel)
    quantum_us: int = 1_000
    period_us: int = 100_000
    capacity: int | None = None
    collector_quota: float | None = None
    collector_core: int | None = None
    growth_factor: int | None = None
    verbose_trace: bool = False

    def machine(self, cores: int, seed: int) -> SimMachine:
        return SimMachine(cores=self.cores or cores, cost_model=self.costs, rng_seed=seed,
                          quantum_us=self.quantum_us, period_us=self.period_us,
                          verbose_trace=self.verbose_trace)

    def arch(self, name: str, capacity: int | None = None) -> CollectorArch | None:
        """Preset `name` at `capacity` (or the configured one), with any growth override."""
        if name == NO_CONSUMER:
            return None
        arch = preset(name, capacity or self.capacity)
        if self.growth_factor is not None:
            if not isinstance(arch.overflow, GrowUpTo):
                raise ConfigError(f"growth_factor does not apply to {name}, whose buffers do not grow")
            if self.growth_factor < 1:
                raise ConfigError("growth_factor must be >= 1")
            arch = replace(arch, overflow=GrowUpTo(arch.capacity * self.growth_factor))
        return arch

    def install(self, m: SimMachine, name: str, arch: CollectorArch | None = None) -> Auditor:
        if arch is None and name != NO_CONSUMER:
            arch = self.arch(name)
        cg = 0 if self.collector_quota is None else m.add_cgroup(self.collector_quota)
        core = self.collector_core if self.collector_core is not None else m.n_cores - 1
        return install(m, arch, collector_cgroup=cg, collector_core=core)


# -- oracles -----------------------------------------------------------------


def drain_rate(costs: CostModel, netlink: bool = False) -> float:
    per_event = costs.consume_cost + (costs.transport_cost if netlink else 0.0)
    return 1e6 / per_event


def buffer_events(capacity_bytes: int, record_bytes: int = RECORD_BYTES) -> int:
    return capacity_bytes // record_bytes


def fluid_drop_fraction(lam: float, mu: float, duration_s: float, buffer_ev: float) -> float:
    """Loss of a deterministic fluid queue with a finite buffer, dropping new arrivals."""
    return max(0.0, ((lam - mu) * duration_s - buffer_ev) / (lam * duration_s))


def fluid_time_to_first_drop(lam: float, mu: float, buffer_ev: float) -> float:
    return math.inf if lam <= mu else buffer_ev / (lam - mu)


# -- metrics and audits -------------------------------------------------------


@dataclass
class MetricsLedger:
    framework: str
    generated: int
    recorded: int
    consumed: int
    dropped: int
    residual: int
    downstream_recorded: int = 0
    downstream_consumed: int = 0
    downstream_residual: int = 0
    cpu_by_cgroup: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    throughput: dict = field(default_factory=dict)
    attacks: list = field(default_factory=list)

    @classmethod
    def from_machine(cls, m: SimMachine, framework: str) -> "MetricsLedger":
        c = m.counters
        auditor = m.arch
        residual = down_res = 0
        if auditor is not None and auditor.buffers is not None:
            residual = sum(b.n_records for b in auditor.buffers.all_buffers())
            if auditor.downstream is not None:
                down_res = sum(b.n_records for b in auditor.downstream.all_buffers())
        cpu = {cg.id: {a.value: ns / 1e9 for a, ns in cg.ledger.items()} for cg in m.cgroups}
        return cls(framework, c.generated, c.stored, c.consumed, c.dropped, residual,
                   c.downstream_stored, c.downstream_consumed, down_res, cpu, list(c.violations))

    def conservation_problems(self) -> list[str]:
        out = []
        if self.generated != self.consumed + self.dropped + self.residual:
            out.append(f"{self.framework}: generated {self.generated} != consumed {self.consumed} + "
                       f"dropped {self.dropped} + residual {self.residual}")
        if self.recorded != self.generated - self.dropped:
            out.append(f"{self.framework}: recorded {self.recorded} != generated - dropped")
        if self.downstream_recorded != self.downstream_consumed + self.downstream_residual:
            out.append(f"{self.framework}: downstream {self.downstream_recorded} != "
                       f"{self.downstream_consumed} + {self.downstream_residual}")
        return out


def audit_machine(m: SimMachine) -> list[str]:
    """Conservation, quota and consumer-isolation checks; empty list when healthy."""
    problems = list(m.scheduler.audit())
    auditor = m.arch
    if auditor is not None:
        for buf in auditor.all_buffers():
            s = buf.stats
            if s.pushed != s.popped + s.dropped + buf.n_records:
                problems.append(f"buffer {buf.id}: pushed {s.pushed} != popped {s.popped} + "
                                f"dropped {s.dropped} + residual {buf.n_records}")
            if buf.blocking and s.dropped:
                problems.append(f"buffer {buf.id}: blocking policy dropped {s.dropped}")
        name = auditor.arch.name if auditor.arch is not None else NO_CONSUMER
        problems += MetricsLedger.from_machine(m, name).conservation_problems()
    # consumer work only ever lands in the owning thread's cgroup
    per_cg = {cg.id: 0 for cg in m.cgroups}
    for th in m.threads.values():
        per_cg[m.cgroup_of(th).id] += th.consumer_ns
    for cg in m.cgroups:
        if cg.ledger[Account.CONSUMER] != per_cg[cg.id]:
            problems.append(f"cgroup {cg.id}: consumer work {cg.ledger[Account.CONSUMER]} ns "
                            f"!= its threads' {per_cg[cg.id]} ns")
    return problems


def enforce(m: SimMachine) -> None:
    problems = audit_machine(m)
    if problems:
        raise InvariantViolation("; ".join(problems))


@dataclass
class HarnessResult:
    harness: str
    preset: str
    seed: int
    columns: tuple
    rows: list
    summary: dict = field(default_factory=dict)

    def csv_name(self) -> str:
        return f"{self.harness}_{self.preset}_{self.seed}.csv"

    def write_csv(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / self.csv_name()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(v) for v in row])
        return path


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v) or math.isnan(v):
            return ""
        return f"{v:.6f}"
    return v


def default_out_dir() -> Path:
    return Path(os.environ.get("AUDIT_ARENA_OUT", "results"))


def _all_exited(apps):
    threads = [t for a in apps for t in a.threads]
    return lambda m: any(t.state is not ThreadState.EXITED for t in threads)


def _drained(m: SimMachine) -> bool:
    a = m.arch
    if a is None or a.buffers is None:
        return True
    return all(b.n_records == 0 for b in a.all_buffers())


# -- drop sweep (rq1) ----------------------------------------------------------


RQ1_COLUMNS = ("rate", "generated", "handled", "dropped", "drop_fraction", "consumed", "residual")


def rq1_point(name: str, rate: float, duration: float = 30.0, seed: int = 0, setup: Setup | None = None,
              drain: bool = True) -> tuple[tuple, SimMachine]:
    """One super-producer run; the producer is pinned to core 0, the collector to the last core."""
    setup = setup or Setup()
    cores = 1 if name in ("nodrop", NO_CONSUMER) else 2
    m = setup.machine(cores, seed)
    setup.install(m, name)
    app = drive(SuperProducerSpec(process_count=1, peak_rate_per_proc=rate, duration=duration, cores=(0,)), m)
    end = seconds(duration)
    m.run_until(end)
    if drain:
        # producers exit at the stop time; let consumers and collectors finish
        limit = end + seconds(3600)
        m.run_while(lambda mm: _all_exited([app])(mm) or not _drained(mm), limit)
    m.finish()
    enforce(m)
    c = m.counters
    lg = MetricsLedger.from_machine(m, name)
    handled = c.generated - c.dropped
    frac = c.dropped / c.generated if c.generated else 0.0
    return (rate, c.generated, handled, c.dropped, frac, lg.consumed, lg.residual), m


def rq1_drop_sweep(name: str, rates, duration: float = 30.0, seed: int = 0,
                   setup: Setup | None = None, drain: bool = True) -> HarnessResult:
    rates = list(rates)
    if not rates:
        raise ConfigError("rq1 needs at least one rate")
    if any(b <= a for a, b in zip(rates, rates[1:])):
        raise ConfigError("rq1 rates must be strictly ascending")
    rows = [rq1_point(name, r, duration, seed, setup, drain)[0] for r in rates]
    return HarnessResult("rq1", name, seed, RQ1_COLUMNS, rows)


def rq1_default_rates(costs: CostModel | None = None, points: int = 12, max_multiple: int = 20) -> list[float]:
    """Evenly spaced rates up to `max_multiple` x the single-collector drain rate."""
    mu = drain_rate(costs or CostModel())
    top = mu * max_multiple
    return [top * (i + 1) / points for i in range(points)]


# -- PDoS ------------------------------------------------------------------------


@dataclass(frozen=True)
class AttackOutcome:
    trial: int
    start_us: int
    marker_count: int
    markers_recorded: int
    success: bool


class MalwareThread(EmitterThread):
    """Replays one marker burst per trial at pre-drawn start times."""

    def __init__(self, starts_us: list[int], marker_count: int, gap_ns: int, quantum_ns: int):
        super().__init__("malware", gap_ns, marker=True, start_ns=starts_us[0] * NS_PER_US,
                         total_events=marker_count * len(starts_us), quantum_ns=quantum_ns)
        self.starts_ns = [s * NS_PER_US for s in starts_us]
        self.marker_count = marker_count
        self.stored_at_burst_end: list[int] = []
        self.stored_total = 0

    def _burst(self) -> int:
        return self.emitted // self.marker_count

    def allowed_events(self, t_ns: int) -> int:
        b = self._burst()
        if b >= len(self.starts_ns):
            return 0
        in_burst = self.emitted - b * self.marker_count
        if in_burst == 0 and t_ns < self.starts_ns[b]:
            return 0
        return self.marker_count - in_burst

    def sleep_until_arrival(self, machine, t_ns: int) -> None:
        self.ready_at_ns = self.starts_ns[self._burst()]

    def account(self, stored: int, dropped: int) -> None:
        self.stored_total += stored
        if self.emitted % self.marker_count == 0 and len(self.stored_at_burst_end) < self._burst():
            self.stored_at_burst_end.append(self.stored_total)


@dataclass(frozen=True)
class PdosLayout:
    """Four cores; victim workers saturate cores 0-2, the collector owns core 3."""

    cores: int = 4
    victim_cores: tuple = (0, 0, 1, 1, 2, 2)
    victim_request_cost: float = 7_300.0
    victim_events_per_request: int = 200
    target_rate: float = 50.0
    target_core: int = 1
    malware_core: int = 0
    marker_count: int = 5
    inter_marker_gap_us: float = 1.0
    trial_spacing_us: int = 20_000
    warmup_limit_s: float = 120.0
    settle_us: int = 100_000


PDOS_COLUMNS = ("trial", "start_us", "marker_count", "markers_recorded", "success")


def _saturated(auditor: Auditor, keys) -> bool:
    bufs = auditor.buffers.buffers
    return all(bufs[k].first_drop_us is not None for k in keys)


def pdos_trials(name: str, trials: int = 100, seed: int = 0, scenario: str = "default",
                success_any_dropped: bool = False, setup: Setup | None = None,
                layout: PdosLayout | None = None) -> HarnessResult:
    """Saturate with the victim, wait, then strike with marker bursts.

    All trials run in one engine after a single warm-up: trial i fires its
    burst at a seeded jitter inside its own `trial_spacing_us` window.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if scenario not in ("default", "cgroup"):
        raise ConfigError(f"unknown pdos scenario {scenario!r}")
    setup = setup or Setup()
    lay = layout or PdosLayout()
    m = setup.machine(lay.cores, seed)
    auditor = setup.install(m, name)
    if scenario == "cgroup":
        target_cg, victim_cg = m.add_cgroup(0.2), m.add_cgroup(0.8)
    else:
        target_cg = victim_cg = 0
    victim = drive(cloudsuite_victim(None, len(lay.victim_cores), lay.victim_request_cost,
                                     lay.victim_events_per_request, victim_cg, lay.victim_cores), m)
    drive(static_target(lay.target_rate, cgroup=target_cg, cores=(lay.target_core,)), m)
    # warm-up: run until every victim core's buffer has overflowed once
    keys = sorted({auditor.buffers.route(t.tid, t.core) for t in victim.threads}) if auditor.buffers else []
    limit = seconds(lay.warmup_limit_s)
    if auditor.buffers is not None and not any(b.blocking for b in auditor.buffers.all_buffers()):
        m.run_while(lambda mm: not _saturated(auditor, keys), limit)
        if not _saturated(auditor, keys):
            raise InvariantViolation(f"{name}: victim never saturated the buffers within {lay.warmup_limit_s}s")
    else:
        m.run_until(seconds(2))
    m.run_until(m.clock + lay.settle_us)
    base = m.clock
    rng = random.Random(seed)
    starts = [base + i * lay.trial_spacing_us + rng.randrange(lay.trial_spacing_us // 2) for i in range(trials)]
    pid = m.add_process(target_cg, name="malware")
    mal = MalwareThread(starts, lay.marker_count, int(round(lay.inter_marker_gap_us * NS_PER_US)),
                        m.quantum_us * NS_PER_US)
    m.add_thread(mal, pid, core=lay.malware_core)
    m.run_while(lambda mm: mal.state is not ThreadState.EXITED,
                base + trials * lay.trial_spacing_us + seconds(lay.warmup_limit_s))
    m.finish()
    enforce(m)
    if len(mal.stored_at_burst_end) != trials:
        raise InvariantViolation(f"malware completed {len(mal.stored_at_burst_end)} of {trials} bursts")
    rows, outcomes, prev = [], [], 0
    for i, (s, total) in enumerate(zip(starts, mal.stored_at_burst_end)):
        recorded = total - prev
        prev = total
        ok = recorded < lay.marker_count if success_any_dropped else recorded == 0
        outcomes.append(AttackOutcome(i, s, lay.marker_count, recorded, ok))
        rows.append((i, s, lay.marker_count, recorded, int(ok)))
    k = sum(o.success for o in outcomes)
    res = HarnessResult("pdos", name, seed, PDOS_COLUMNS, rows,
                        {"successes": k, "trials": trials, "scenario": scenario})
    res.summary["outcomes"] = outcomes
    return res


# -- PADoS -----------------------------------------------------------------------


PADOS_COLUMNS = ("victim_rate", "target_throughput", "victim_throughput", "target_latency_us")
PADOS_VICTIM_RATES = (5.0, 10.0, 20.0, 40.0, 80.0, 120.0, 160.0, 200.0)


@dataclass(frozen=True)
class PadosLayout:
    """One core shared by a closed-loop target and an open-loop victim."""

    cores: int = 1
    target_request_cost: float = 2_000.0
    target_events_per_request: int = 2
    victim_request_cost: float = 2_000.0
    victim_events_per_request: int = 200
    target_quota: float = 0.2
    victim_quota: float = 0.8
    capacity: int = 1024 * KiB
    duration_s: float = 10.0
    warmup_s: float = 1.0


def pados_point(name: str, scenario: str, victim_rate: float, seed: int = 0, setup: Setup | None = None,
                layout: PadosLayout | None = None) -> tuple:
    setup = setup or Setup()
    lay = layout or PadosLayout()
    m = setup.machine(lay.cores, seed)
    arch = setup.arch(name, setup.capacity or lay.capacity)
    setup.install(m, name, arch)
    if scenario == "cgroup":
        target_cg, victim_cg = m.add_cgroup(lay.target_quota), m.add_cgroup(lay.victim_quota)
    elif scenario == "default":
        target_cg = victim_cg = 0
    else:
        raise ConfigError(f"unknown pados scenario {scenario!r}")
    target = drive(ServerAppSpec("target", lay.target_request_cost, lay.target_events_per_request, None, 1,
                                 target_cg), m)
    victim = drive(ServerAppSpec("victim", lay.victim_request_cost, lay.victim_events_per_request,
                                 victim_rate, 1, victim_cg), m)
    w0 = seconds(lay.warmup_s)
    w1 = seconds(lay.duration_s)
    m.run_until(w0)
    target.mark(m), victim.mark(m)
    m.run_until(w1)
    target.mark(m), victim.mark(m)
    m.finish()
    enforce(m)
    t = measure_throughput(target, (w0, w1))
    v = measure_throughput(victim, (w0, w1))
    return (victim_rate, t.requests_per_s, v.requests_per_s, t.latency_mean_us)


def pados_run(name: str, scenario: str = "cgroup", victim_rates=PADOS_VICTIM_RATES, seed: int = 0,
              setup: Setup | None = None, layout: PadosLayout | None = None) -> HarnessResult:
    rows = [pados_point(name, scenario, r, seed, setup, layout) for r in victim_rates]
    return HarnessResult("pados", name, seed, PADOS_COLUMNS, rows, {"scenario": scenario})


def pados_with_baseline(name: str, scenario: str = "cgroup", victim_rates=PADOS_VICTIM_RATES, seed: int = 0,
                        setup: Setup | None = None, layout: PadosLayout | None = None) -> HarnessResult:
    """Throughput of `name` next to the no-consumer baseline at each victim rate."""
    run = pados_run(name, scenario, victim_rates, seed, setup, layout)
    base = pados_run(NO_CONSUMER, scenario, victim_rates, seed, setup, layout)
    rows = []
    for (r, tp, vp, lat), (_, btp, _, _) in zip(run.rows, base.rows):
        rows.append((r, tp, btp, 1 - tp / btp if btp else 0.0, vp, lat))
    cols = ("victim_rate", "target_throughput", "no_consumer_throughput", "target_loss", "victim_throughput",
            "target_latency_us")
    return HarnessResult("pados", name, seed, cols, rows, {"scenario": scenario})


def curve_flatness(values) -> float:
    """Largest relative deviation from the mean."""
    values = list(values)
    mean = sum(values) / len(values)
    return max(abs(v - mean) for v in values) / mean if mean else 0.0


# -- reduction futility (rq4) -----------------------------------------------------


RQ4_COLUMNS = ("cores", "offered_rate", "realized_rate", "realized_over_offered", "recorded",
               "downstream_consumed", "downstream_over_recorded")


def rq4_reduction_run(rate: float = 100_000.0, cores: int = 1, duration: float = 10.0, seed: int = 0,
                      capacity: int = 256 * KiB, setup: Setup | None = None) -> HarnessResult:
    """Super producer under sysdig-cpr; one producer per core at `rate` ev/s each."""
    setup = setup or Setup()
    m = setup.machine(cores, seed)
    arch = setup.arch("sysdig-cpr", setup.capacity or capacity)
    setup.install(m, "sysdig-cpr", arch)
    app = drive(SuperProducerSpec(process_count=cores, peak_rate_per_proc=rate, duration=duration,
                                  cores=tuple(range(cores))), m)
    end = seconds(duration)
    m.run_until(end)
    generated = m.counters.generated
    m.run_while(lambda mm: _all_exited([app])(mm) or not _drained(mm), end + seconds(3600))
    m.finish()
    enforce(m)
    c = m.counters
    offered = rate * cores
    realized = generated / duration
    down = c.downstream_consumed / c.stored if c.stored else 0.0
    row = (cores, offered, realized, realized / offered, c.stored, c.downstream_consumed, down)
    return HarnessResult("rq4", "sysdig-cpr", seed, RQ4_COLUMNS, [row])


# -- buffer sweep (rq5) ------------------------------------------------------------


RQ5_COLUMNS = ("size_bytes", "size_events", "duration_s", "generated", "dropped", "drop_fraction",
               "time_to_first_drop_s", "oracle_drop_fraction", "oracle_time_to_first_drop_s")
RQ5_SIZES_EV = (1024, 2048, 4096, 8192, 16384)


def rq5_buffer_sweep(name: str, sizes_ev=RQ5_SIZES_EV, rate_multiple: float = 10.0, fill_multiple: float = 100.0,
                     seed: int = 0, setup: Setup | None = None) -> HarnessResult:
    if name == NO_CONSUMER:
        raise ConfigError("rq5 sweeps buffer sizes; it needs a collector preset")
    sizes_ev = list(sizes_ev)
    if any(b <= a for a, b in zip(sizes_ev, sizes_ev[1:])):
        raise ConfigError("rq5 sizes must be strictly ascending")
    setup = setup or Setup()
    mu = drain_rate(setup.costs)
    lam = rate_multiple * mu
    rows = []
    for b in sizes_ev:
        fill = fluid_time_to_first_drop(lam, mu, b)
        if math.isinf(fill):
            raise ConfigError("rq5 needs an offered rate above the drain rate")
        duration = round(fill * fill_multiple, 3)
        m = setup.machine(2, seed)
        arch = setup.arch(name, b * RECORD_BYTES)
        if arch.scheme is BufferScheme.SINGLE and arch.count_mode:
            arch = setup.arch(name, b)
        setup.install(m, name, arch)
        drive(SuperProducerSpec(process_count=1, peak_rate_per_proc=lam, duration=duration, cores=(0,)), m)
        m.run_until(seconds(duration))
        m.finish()
        enforce(m)
        c = m.counters
        frac = c.dropped / c.generated if c.generated else 0.0
        ttfd = c.first_drop_ns / 1e9 if c.first_drop_ns is not None else math.inf
        rows.append((b * RECORD_BYTES, b, duration, c.generated, c.dropped, frac, ttfd,
                     fluid_drop_fraction(lam, mu, duration, b), fill))
    return HarnessResult("rq5", name, seed, RQ5_COLUMNS, rows, {"lambda": lam, "mu": mu})


def r_squared(xs, ys) -> float:
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0 or syy == 0:
        return 1.0 if syy == 0 else 0.0
    return sxy * sxy / (sxx * syy)


# -- fluid agreement --------------------------------------------------------------


FLUID_COLUMNS = ("rate", "buffer_events", "duration_s", "drop_fraction", "oracle_drop_fraction", "abs_error")
# one point under the drain rate, two above it with different buffers
FLUID_POINTS = ((2_000.0, 16_384), (10_000.0, 16_384), (40_000.0, 8 * 1024 * KiB // RECORD_BYTES))


def fluid_agreement(points=FLUID_POINTS, duration: float = 30.0, seed: int = 0,
                    setup: Setup | None = None) -> HarnessResult:
    """sysdig with its collector alone on a second core, against the fluid loss formula."""
    setup = setup or Setup()
    mu = drain_rate(setup.costs)
    rows = []
    for lam, b in points:
        sub = Setup(costs=setup.costs, quantum_us=setup.quantum_us, period_us=setup.period_us,
                    capacity=b * RECORD_BYTES)
        row, _ = rq1_point("sysdig", lam, duration, seed, sub, drain=False)
        frac = row[4]
        oracle = fluid_drop_fraction(lam, mu, duration, b)
        rows.append((lam, b, duration, frac, oracle, abs(frac - oracle)))
    return HarnessResult("fluid", "sysdig", seed, FLUID_COLUMNS, rows, {"mu": mu})


# -- calibration ------------------------------------------------------------------


@dataclass
class Calibration:
    target: str
    feasible: bool
    delta: dict
    message: str

    def snippet(self) -> str:
        if not self.delta:
            return "# defaults already satisfy the target; no change\n"
        lines = []
        for section in sorted({s for s, _ in self.delta}):
            lines.append(f"[{section}]")
            for (sec, key), v in sorted(self.delta.items()):
                if sec == section:
                    lines.append(f"{key} = {v:g}" if isinstance(v, float) else f"{key} = {v}")
        return "\n".join(lines) + "\n"


CALIBRATION_TARGETS = ("audit-1pct", "lttng-1core", "drop-ordering")


def _bisect(f, lo, hi, iters=80):
    """Smallest x in [lo, hi] with f(x) true, assuming f is monotone."""
    if not f(hi):
        return None
    if f(lo):
        return lo
    for _ in range(iters):
        mid = (lo + hi) / 2
        if f(mid):
            hi = mid
        else:
            lo = mid
    return hi


def calibrate(target: str, costs: CostModel | None = None, duration_s: float = 30.0,
              nearly_all: float = 0.9, reference_rate: float = 10_000.0) -> Calibration:
    """Fit cost or buffer deltas on the fluid model. Never mutates defaults.

    audit-1pct: transport cost at which audit drops `nearly_all` events once
    the producer runs at 1% of its peak rate (peak = one capture per
    kernel_record_cost).
    lttng-1core: growth ceiling at which a 1-core lttng run at
    `reference_rate` drops nothing (collector gets half the core).
    drop-ordering: checks audit >= sysdig >= lttng drop fractions at
    `reference_rate`, fitting the transport cost if audit is too low.
    """
    costs = costs or CostModel()
    if target not in CALIBRATION_TARGETS:
        raise ConfigError(f"unknown calibration target {target!r}; valid: {', '.join(CALIBRATION_TARGETS)}")
    audit_b = preset("audit").capacity
    if target == "audit-1pct":
        if costs.kernel_record_cost <= 0:
            return Calibration(target, False, {}, "peak rate is unbounded with zero capture cost")
        lam = 0.01 * 1e6 / costs.kernel_record_cost

        def ok(transport):
            mu = 1e6 / (costs.consume_cost + transport)
            return fluid_drop_fraction(lam, mu, duration_s, audit_b) >= nearly_all

        if ok(costs.transport_cost):
            return Calibration(target, True, {}, "already satisfied")
        x = _bisect(ok, costs.transport_cost, 1e9)
        if x is None:
            return Calibration(target, False, {}, f"no transport cost reaches {nearly_all:.0%} drops at {lam:g} ev/s")
        x = math.ceil(x * 1000) / 1000
        return Calibration(target, True, {("costs", "transport_cost"): x},
                           f"audit drops >= {nearly_all:.0%} at {lam:g} ev/s")
    if target == "lttng-1core":
        lt = preset("lttng")
        mu = drain_rate(costs) / 2
        need_ev = max(0.0, (reference_rate - mu) * duration_s)
        need_bytes = math.ceil(need_ev) * RECORD_BYTES
        if need_bytes <= lt.overflow.max_capacity:
            return Calibration(target, True, {}, "already satisfied")
        factor = math.ceil(need_bytes / lt.capacity)
        return Calibration(target, True, {("collector", "growth_factor"): factor},
                           f"lttng ceiling of {factor}x the initial buffer holds {need_ev:.0f} events")
    # drop-ordering
    sys_b = buffer_events(preset("sysdig").capacity)
    lt_b = buffer_events(preset("lttng").overflow.max_capacity)
    mu = drain_rate(costs)
    d_sys = fluid_drop_fraction(reference_rate, mu, duration_s, sys_b)
    d_lt = fluid_drop_fraction(reference_rate, mu, duration_s, lt_b)
    if d_sys < d_lt:
        return Calibration(target, False, {}, "sysdig cannot drop less than lttng with a smaller buffer")

    def ok(transport):
        mu_a = 1e6 / (costs.consume_cost + transport)
        return fluid_drop_fraction(reference_rate, mu_a, duration_s, audit_b) >= d_sys

    if ok(costs.transport_cost):
        return Calibration(target, True, {}, "already satisfied")
    x = _bisect(ok, costs.transport_cost, 1e9)
    if x is None:
        return Calibration(target, False, {}, "audit cannot be made to drop more than sysdig")
    return Calibration(target, True, {("costs", "transport_cost"): math.ceil(x * 1000) / 1000},
                       "audit raised above sysdig")


def asdict_rows(result: HarnessResult) -> list[dict]:
    return [dict(zip(result.columns, r)) for r in result.rows]

