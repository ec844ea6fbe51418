"""Multicore quota scheduler.

Each core keeps its own run queue and picks round-robin among threads
that are runnable, past their ready time, and whose cgroup still has
budget in the current accounting period. Cgroup quotas are hard: an
exhausted cgroup is throttled until the next period boundary even if
the core would otherwise idle.

Time advances in lockstep quanta. Within a quantum, cores whose first
pick is a drainer (collector, reduction worker) are simulated first so
producers on other cores see the space those drainers free up. The
remaining cores go in an order that rotates every quantum.
"""

from __future__ import annotations

from .engine import NS_PER_US, Account, Core, SimMachine, Thread, ThreadState
from .errors import SimulationError


class Scheduler:
    def __init__(self, machine: SimMachine):
        self.m = machine
        self.system_switch_ns = 0
        self._period_start_ns = 0
        self.simulated_ns = 0

    # -- accounting --------------------------------------------------------

    def charge(self, thread: Thread, ns: int, account: Account) -> None:
        if ns < 0:
            raise SimulationError("negative charge")
        if ns == 0:
            return
        core = self.m.require_running(thread)
        thread.cpu_ns += ns
        if account is Account.CONSUMER:
            thread.consumer_ns += ns
        cg = self.m.cgroup_of(thread)
        cg.used_ns += ns
        cg.ledger[account] += ns
        core.busy_ns += ns

    def context_switch(self, core: Core, prev: int | None, nxt: int, budget_ns: int) -> int:
        if prev == nxt:
            raise SimulationError("context switch to the same thread")
        cost = min(self.m.cost_model.ns("context_switch_cost"), budget_ns)
        core.switch_ns += cost
        core.switches += 1
        self.system_switch_ns += cost
        return cost

    def remaining_ns(self, thread: Thread) -> int:
        cg = self.m.cgroup_of(thread)
        if cg.cpu_quota_fraction >= 1:
            return 1 << 62
        return cg.budget_ns(self.m.n_cores) - cg.used_ns

    # -- selection ---------------------------------------------------------

    def _eligible(self, th: Thread, now_ns: int) -> bool:
        return th.runnable and th.ready_at_ns <= now_ns and self.remaining_ns(th) > 0

    def pick_next(self, core: Core, now_ns: int, skip=()) -> int | None:
        """Round-robin pick; a thread that woke since the last pick goes first."""
        rq = core.runqueue
        n = len(rq)
        threads = self.m.threads
        first = None
        for k in range(n):
            tid = rq[(core.rr + k) % n]
            if tid in skip:
                continue
            th = threads[tid]
            if self._eligible(th, now_ns):
                if th.ready_at_ns > core.last_pick_ns:
                    return tid
                if first is None:
                    first = tid
        return first

    def _advance_rr(self, core: Core, tid: int) -> None:
        core.rr = (core.runqueue.index(tid) + 1) % len(core.runqueue)

    def _next_ready(self, core: Core, now_ns: int, end_ns: int, exclude: int | None = None) -> int | None:
        best = None
        for tid in core.runqueue:
            if tid == exclude:
                continue
            th = self.m.threads[tid]
            if th.runnable and now_ns < th.ready_at_ns < end_ns and self.remaining_ns(th) > 0:
                if best is None or th.ready_at_ns < best:
                    best = th.ready_at_ns
        return best

    # -- time stepping -----------------------------------------------------

    def _roll_period(self, t0_ns: int) -> None:
        period_ns = self.m.period_us * NS_PER_US
        if t0_ns and t0_ns % period_ns == 0:
            for cg in self.m.cgroups:
                cg.period_peaks.append(cg.used_ns)
                cg.used_ns = 0
            self._period_start_ns = t0_ns

    def tick(self, t0_ns: int, t1_ns: int) -> None:
        self._roll_period(t0_ns)
        m = self.m
        n = m.n_cores
        rot = (t0_ns // (m.quantum_us * NS_PER_US)) % n
        order = []
        for core in m.cores:
            tid = self.pick_next(core, t0_ns)
            first_drains = tid is not None and m.threads[tid].is_drainer
            # rotate producer cores so no core always sees freed space first
            order.append((0 if first_drains else 1, (core.id - rot) % n, core.id))
        order.sort()
        for _, _, cid in order:
            self.run_core(m.cores[cid], t0_ns, t1_ns)
        if m.arch is not None:
            m.arch.end_tick(m, t1_ns)
        self.simulated_ns = t1_ns

    def run_core(self, core: Core, t0_ns: int, t1_ns: int) -> None:
        m = self.m
        now = t0_ns
        skip: set[int] = set()
        while now < t1_ns:
            tid = self.pick_next(core, now, skip)
            if tid is None:
                nxt = self._next_ready(core, now, t1_ns)
                stop = nxt if nxt is not None else t1_ns
                core.idle_ns += stop - now
                now = stop
                continue
            th = m.threads[tid]
            if core.last is not None and core.last != tid:
                cost = self.context_switch(core, core.last, tid, t1_ns - now)
                now += cost
                m.trace.record(now // NS_PER_US, f"core{core.id}", f"switch:{core.last}->{tid}")
            core.last = tid
            if now >= t1_ns:
                break
            self._advance_rr(core, tid)
            core.last_pick_ns = now
            budget = min(t1_ns - now, self.remaining_ns(th))
            # a sleeper waking mid-quantum preempts at its ready time
            wake = self._next_ready(core, now, now + budget, exclude=tid)
            if wake is not None:
                budget = wake - now
            core.current = tid
            was = th.state
            if was is ThreadState.RUNNABLE:
                th.state = ThreadState.RUNNING
            used = th.run(m, budget, now)
            if th.state is ThreadState.RUNNING:
                th.state = ThreadState.RUNNABLE
            core.current = None
            if used < 0 or used > budget:
                raise SimulationError(f"thread {tid} used {used} of budget {budget}")
            now += used
            if used == 0 and th.ready_at_ns <= now:
                skip.add(tid)
        core.busy_until = t1_ns // NS_PER_US

    # -- audits ------------------------------------------------------------

    def audit(self) -> list[str]:
        """Return a list of broken scheduling invariants (empty when healthy)."""
        m = self.m
        problems = []
        elapsed = self.simulated_ns
        for core in m.cores:
            total = core.busy_ns + core.switch_ns + core.idle_ns
            if total != elapsed:
                problems.append(f"core {core.id}: busy+switch+idle={total} != elapsed {elapsed}")
        slack = m.quantum_us * NS_PER_US
        for cg in m.cgroups:
            if cg.cpu_quota_fraction >= 1:
                continue
            limit = cg.budget_ns(m.n_cores) + slack
            for i, used in enumerate(cg.period_peaks + [cg.used_ns]):
                if used > limit:
                    problems.append(f"cgroup {cg.id} period {i}: {used} ns > {limit}")
        return problems
