"""Simulator for provenance auditing pipelines facing event floods.

It models machines, cgroups, logging buffers, collector architectures and
per-thread in-context consumers, plus the harnesses that measure event
loss and co-tenant slowdown.
"""

from .buffers import BlockProducer, BufferScheme, DropNew, GrowUpTo, LoggingBuffer, PushOutcome
from .collectors import NO_CONSUMER, PRESET_NAMES, CollectorArch, install, preset
from .engine import CostModel, SimMachine, ThreadState, seconds
from .errors import ConfigError, InvariantViolation, SimulationError
from .events import SimEvent, encode, record_size
from .kernel import COMPILED
from .workloads import MalwareSpec, ProbeSpec, ServerAppSpec, SuperProducerSpec, drive

__version__ = "0.1.0"

__all__ = [
    "BlockProducer", "BufferScheme", "COMPILED", "CollectorArch", "ConfigError", "CostModel", "DropNew",
    "GrowUpTo", "InvariantViolation", "LoggingBuffer", "MalwareSpec", "NO_CONSUMER", "PRESET_NAMES",
    "ProbeSpec", "PushOutcome", "ServerAppSpec", "SimEvent", "SimMachine", "SimulationError",
    "SuperProducerSpec", "ThreadState", "drive", "encode", "install", "preset", "record_size", "seconds",
]
