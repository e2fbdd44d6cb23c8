"""Per-thread trace events: text format, parser, renderer and synthetic generators."""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from mcsim.errors import CrossesBlockBoundary, TraceSyntaxError

MAX_VALUE = (1 << 64) - 1


class Kind(str, Enum):
    LOAD = "L"
    STORE = "S"
    COMPUTE = "C"
    FENCE = "F"


@dataclass(frozen=True)
class TraceEvent:
    thread_id: int
    kind: Kind
    address: int = 0
    size_bytes: int = 0
    value: int = 0
    cycles: int = 0

    @classmethod
    def load(cls, tid, address, size=8):
        return cls(tid, Kind.LOAD, address, size)

    @classmethod
    def store(cls, tid, address, size=8, value=0):
        return cls(tid, Kind.STORE, address, size, value)

    @classmethod
    def compute(cls, tid, cycles):
        return cls(tid, Kind.COMPUTE, cycles=cycles)

    @classmethod
    def fence(cls, tid):
        return cls(tid, Kind.FENCE)

    @property
    def is_memory(self):
        return self.kind in (Kind.LOAD, Kind.STORE)


def check_event(ev: TraceEvent, block_size: int = 64, where: str = "event"):
    """Raise if ``ev`` breaks the event invariants for ``block_size``."""
    if ev.kind in (Kind.LOAD, Kind.STORE):
        size = ev.size_bytes
        if size < 1 or size & (size - 1) or size > block_size:
            raise CrossesBlockBoundary(f"{where}: size {size} is not a power of two <= {block_size}")
        if ev.address < 0:
            raise CrossesBlockBoundary(f"{where}: negative address")
        if ev.address % block_size + size > block_size:
            raise CrossesBlockBoundary(
                f"{where}: access 0x{ev.address:x}+{size} crosses a {block_size}-byte block boundary"
            )
        if ev.kind is Kind.STORE and not (0 <= ev.value < (1 << (8 * size))):
            raise CrossesBlockBoundary(f"{where}: value {ev.value} does not fit in {size} bytes")
    elif ev.kind is Kind.COMPUTE and ev.cycles < 1:
        raise ValueError(f"{where}: compute cycles must be >= 1")


def _int(token, line_no, what, base=10):
    try:
        return int(token, base)
    except ValueError:
        raise TraceSyntaxError(line_no, f"bad {what} {token!r}") from None


def parse_trace(stream, block_size: int = 64) -> list:
    """Parse trace text (an iterable of lines or a string) into events in file order."""
    if isinstance(stream, str):
        stream = stream.splitlines()
    events = []
    for line_no, line in enumerate(stream, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) < 2 or not parts[0].startswith("T"):
            raise TraceSyntaxError(line_no, f"expected 'T<tid> <op> ...', got {text!r}")
        tid = _int(parts[0][1:], line_no, "thread id")
        if tid < 0:
            raise TraceSyntaxError(line_no, "negative thread id")
        op, args = parts[1], parts[2:]
        expected = {"L": 2, "S": 3, "C": 1, "F": 0}.get(op)
        if expected is None:
            raise TraceSyntaxError(line_no, f"unknown op {op!r}")
        if len(args) != expected:
            raise TraceSyntaxError(line_no, f"op {op} takes {expected} operands, got {len(args)}")
        if op == "L":
            ev = TraceEvent.load(tid, _int(args[0], line_no, "address", 16), _int(args[1], line_no, "size"))
        elif op == "S":
            value = _int(args[2], line_no, "value", 16 if args[2].lower().startswith("0x") else 10)
            ev = TraceEvent.store(tid, _int(args[0], line_no, "address", 16), _int(args[1], line_no, "size"), value)
        elif op == "C":
            ev = TraceEvent.compute(tid, _int(args[0], line_no, "cycles"))
            if ev.cycles < 1:
                raise TraceSyntaxError(line_no, "compute cycles must be >= 1")
        else:
            ev = TraceEvent.fence(tid)
        check_event(ev, block_size, f"line {line_no}")
        events.append(ev)
    return events


def render_event(ev: TraceEvent) -> str:
    if ev.kind is Kind.LOAD:
        return f"T{ev.thread_id} L 0x{ev.address:x} {ev.size_bytes}"
    if ev.kind is Kind.STORE:
        return f"T{ev.thread_id} S 0x{ev.address:x} {ev.size_bytes} {ev.value}"
    if ev.kind is Kind.COMPUTE:
        return f"T{ev.thread_id} C {ev.cycles}"
    return f"T{ev.thread_id} F"


def render_trace(events) -> str:
    return "".join(render_event(ev) + "\n" for ev in events)


def load_trace(path, block_size: int = 64) -> list:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh, block_size)


def split_threads(events) -> dict:
    """Group events by thread id, preserving per-thread order."""
    out = {}
    for ev in events:
        out.setdefault(ev.thread_id, []).append(ev)
    return dict(sorted(out.items()))


# --- synthetic generators ---------------------------------------------------

def generate_trace(pattern: str, params: dict | None = None, seed: int = 0) -> list:
    """Deterministic synthetic trace for ``pattern``.

    Patterns: ``Streaming``, ``RandomUniform``, ``FalseSharing``, ``RowLocal``.
    """
    params = dict(params or {})
    if not (0 <= seed < 1 << 64):
        raise ValueError("seed must be an unsigned 64-bit integer")
    gen = _GENERATORS.get(pattern)
    if gen is None:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {sorted(_GENERATORS)}")
    return gen(params, random.Random(seed))


def _streaming(p, rng):
    block = p.get("block_size", 64)
    start = p.get("start", 0)
    tid = p.get("thread", 0)
    size = p.get("size", 8)
    store = p.get("kind", "L") == "S"
    out = []
    for i in range(p.get("blocks", 8)):
        addr = start + i * block
        out.append(TraceEvent.store(tid, addr, size, i & 0xFF) if store else TraceEvent.load(tid, addr, size))
    return out


def _random_uniform(p, rng):
    block = p.get("block_size", 64)
    threads = p.get("threads", 1)
    count = p.get("events", 100)
    footprint = p.get("footprint_blocks", 16)
    base = p.get("base", 0)
    store_frac = p.get("store_fraction", 0.5)
    compute_frac = p.get("compute_fraction", 0.0)
    fence_frac = p.get("fence_fraction", 0.0)
    size = p.get("size", 8)
    slots = block // size
    per_thread = []
    for tid in range(threads):
        evs = []
        for _ in range(count):
            r = rng.random()
            if r < compute_frac:
                evs.append(TraceEvent.compute(tid, rng.randint(1, p.get("compute_max", 4))))
                continue
            if r < compute_frac + fence_frac:
                evs.append(TraceEvent.fence(tid))
                continue
            addr = base + rng.randrange(footprint) * block + rng.randrange(slots) * size
            if rng.random() < store_frac:
                evs.append(TraceEvent.store(tid, addr, size, rng.getrandbits(min(64, 8 * size))))
            else:
                evs.append(TraceEvent.load(tid, addr, size))
        per_thread.append(evs)
    return _round_robin(per_thread)


def _false_sharing(p, rng):
    block = p.get("block_size", 64)
    base = p.get("base", 0)
    n = p.get("stores_per_thread", 4)
    stride = block if p.get("padded", False) else p.get("size", 8)
    size = p.get("size", 8)
    out = []
    for i in range(n):
        for tid in (0, 1):
            out.append(TraceEvent.store(tid, base + tid * stride, size, i + 1))
    return out


def _row_local(p, rng):
    block = p.get("block_size", 64)
    row_size = p.get("row_size", 2048)
    bases = p.get("row_bases", [0])
    count = p.get("accesses_per_row", row_size // block)
    per_row = []
    for tid, base in enumerate(bases):
        per_row.append(
            [TraceEvent.load(tid, base + (j * block) % row_size, p.get("size", 8)) for j in range(count)]
        )
    return _round_robin(per_row)


def _round_robin(per_thread):
    out = []
    longest = max((len(t) for t in per_thread), default=0)
    for i in range(longest):
        for evs in per_thread:
            if i < len(evs):
                out.append(evs[i])
    return out


_GENERATORS = {
    "Streaming": _streaming,
    "RandomUniform": _random_uniform,
    "FalseSharing": _false_sharing,
    "RowLocal": _row_local,
}
