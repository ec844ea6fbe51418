class ConfigError(ValueError):
    """Invalid configuration or an impossible request (e.g. scheduling in the past)."""


class SimulationError(RuntimeError):
    """Logic error inside the simulator: charging an idle thread, bad state transition."""


class InvariantViolation(AssertionError):
    """A run-time audit (conservation, quota, monotonicity) failed."""
