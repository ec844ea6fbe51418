from audit_arena.engine import Account, Thread


class Burner(Thread):
    """Spends every slice it is given on app work."""

    def __init__(self, name="burn"):
        super().__init__(name)
        self.slices = []

    def run(self, machine, budget_ns, now_ns):
        machine.scheduler.charge(self, budget_ns, Account.APP)
        self.slices.append((now_ns, budget_ns))
        return budget_ns
