"""In-order core model: event issue, store buffer, DVFS power and governors."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from mcsim.config import DvfsParams
from mcsim.errors import FrequencyOutOfRange
from mcsim.trace import Kind, TraceEvent

__all__ = [
    "DvfsParams",
    "StoreBufferEntry",
    "CoreState",
    "LocalCompletion",
    "MemoryRequest",
    "Forwarded",
    "Enqueued",
    "FenceDone",
    "MustDrain",
    "issue_event",
    "drain_store_buffer",
    "knee_frequency",
    "voltage_at",
    "dynamic_power",
    "governor_select",
]

# ondemand thresholds
UP_THRESHOLD = 0.8
DOWN_THRESHOLD = 0.3


@dataclass(frozen=True)
class StoreBufferEntry:
    address: int
    size: int
    value: int
    enqueue_cycle: int


@dataclass
class CoreStats:
    instructions: int = 0
    busy_cycles: int = 0
    stall_cycles: int = 0


@dataclass
class CoreState:
    core_id: int
    current_frequency: float = 4.0e9
    store_buffer_depth: int = 0
    consistency_mode: str = "SC"
    store_buffer: deque = field(default_factory=deque)
    stats: CoreStats = field(default_factory=CoreStats)

    @property
    def buffer_full(self):
        return len(self.store_buffer) >= self.store_buffer_depth

    def enqueue_store(self, ev: TraceEvent, cycle: int):
        assert len(self.store_buffer) < self.store_buffer_depth
        self.store_buffer.append(StoreBufferEntry(ev.address, ev.size_bytes, ev.value, cycle))

    def forward(self, address: int, size: int):
        """Youngest buffered store covering exactly ``address``/``size``.

        Returns ``(hit, value)``; ``hit`` is None when a buffered store only
        partially overlaps, meaning the load must wait for the buffer to drain.
        """
        for entry in reversed(self.store_buffer):
            if entry.address == address and entry.size == size:
                return True, entry.value
            if entry.address < address + size and address < entry.address + entry.size:
                return None, 0
        return False, 0


# --- issue outcomes -----------------------------------------------------------

@dataclass(frozen=True)
class LocalCompletion:
    cycles: int


@dataclass(frozen=True)
class MemoryRequest:
    kind: Kind
    address: int
    size: int
    value: int = 0


@dataclass(frozen=True)
class Forwarded:
    value: int


@dataclass(frozen=True)
class Enqueued:
    pass


@dataclass(frozen=True)
class FenceDone:
    pass


@dataclass(frozen=True)
class MustDrain:
    """The event cannot issue until the store buffer drains further."""


def issue_event(core: CoreState, ev: TraceEvent, cycle: int = 0):
    """Decide what issuing ``ev`` does on ``core``.

    Enqueues stores into the buffer as a side effect; every other outcome
    leaves the core untouched and tells the caller what to do next.
    """
    buffered = bool(core.store_buffer)
    if ev.kind is Kind.COMPUTE:
        return LocalCompletion(ev.cycles)
    if ev.kind is Kind.FENCE:
        return MustDrain() if buffered else FenceDone()
    if core.consistency_mode == "SC" and buffered:
        return MustDrain()
    if ev.kind is Kind.LOAD:
        if buffered:
            hit, value = core.forward(ev.address, ev.size_bytes)
            if hit is None:
                return MustDrain()
            if hit:
                return Forwarded(value)
        return MemoryRequest(Kind.LOAD, ev.address, ev.size_bytes)
    # store
    if core.store_buffer_depth == 0:
        return MemoryRequest(Kind.STORE, ev.address, ev.size_bytes, ev.value)
    if core.buffer_full:
        return MustDrain()
    core.enqueue_store(ev, cycle)
    return Enqueued()


def drain_store_buffer(core: CoreState, start_cycle: int = 0, port_busy=()) -> list:
    """Drain the whole buffer oldest-first, one entry per free port cycle.

    ``port_busy`` holds cycles in which the L1 port is unavailable. Returns
    ``(cycle, MemoryRequest)`` pairs in issue order.
    """
    busy = set(port_busy)
    out = []
    cycle = start_cycle
    while core.store_buffer:
        if cycle not in busy:
            e = core.store_buffer.popleft()
            out.append((cycle, MemoryRequest(Kind.STORE, e.address, e.size, e.value)))
        cycle += 1
    return out


# --- DVFS -----------------------------------------------------------------------

def knee_frequency(p: DvfsParams) -> float:
    """Frequency below which the supply voltage is pinned at ``v_min``."""
    return p.f_base * (p.v_min / p.v_dd)


def voltage_at(p: DvfsParams, f: float) -> float:
    if f >= knee_frequency(p):
        return p.v_dd * f / p.f_base
    return p.v_min


def dynamic_power(p: DvfsParams, f: float) -> float:
    """Dynamic power in watts at frequency ``f``, calibrated so P(f_base) = TDP.

    Power goes as V^2 f; with V proportional to f above the knee the
    dependence is cubic, below it V stays at v_min and power is linear in f.
    Frequencies above f_base extrapolate the same V(f) line.
    """
    if not (0 < f <= p.f_turbo * (1 + 1e-12)):
        raise FrequencyOutOfRange(f"frequency {f} Hz outside (0, {p.f_turbo}]")
    v = voltage_at(p, f)
    return p.tdp_watts * (v / p.v_dd) ** 2 * (f / p.f_base)


def governor_select(policy: str, utilization: float, current_step: int, steps) -> int:
    """Index of the next frequency step for ``policy``."""
    top = len(steps) - 1
    if policy == "performance":
        return top
    if policy == "powersave":
        return 0
    if policy == "ondemand":
        if utilization > UP_THRESHOLD:
            return min(current_step + 1, top)
        if utilization < DOWN_THRESHOLD:
            return max(current_step - 1, 0)
        return current_step
    raise ValueError(f"unknown governor {policy!r}")


def frequency_for(steps, index: Optional[int]) -> float:
    return steps[len(steps) - 1 if index is None else index]
