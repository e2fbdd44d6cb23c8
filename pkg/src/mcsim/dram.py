"""DRAM: address interleaving, per-bank row buffers, command timing, scheduling."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from mcsim.config import DramConfig, DramGeometry, TimingParams, log2
from mcsim.errors import AddressOutOfRange, NoAccesses
from mcsim.kernels import extract_fields


@dataclass(frozen=True)
class DecodedAddress:
    channel: int
    rank: int
    bank: int
    row: int
    column: int


def field_order(scheme: str):
    """Field names low to high, above the block offset."""
    if scheme == "CacheBlockInterleave":
        return ("channel", "rank", "bank", "colhi", "row")
    if scheme == "RowInterleave":
        return ("colhi", "channel", "rank", "bank", "row")
    if scheme == "NonInterleaved":
        return ("colhi", "row", "channel", "rank", "bank")
    raise ValueError(f"unknown interleaving scheme {scheme!r}")


def decode_address(address: int, scheme: str, geometry: DramGeometry, block_size: int = 64) -> DecodedAddress:
    off = log2(block_size)
    widths = {
        "channel": log2(geometry.channels),
        "rank": log2(geometry.ranks),
        "bank": log2(geometry.banks),
        "row": log2(geometry.rows),
        "colhi": log2(geometry.row_size) - off,
    }
    order = field_order(scheme)
    total = off + sum(widths.values())
    if address < 0 or address >> total:
        raise AddressOutOfRange(f"address 0x{address:x} beyond {total}-bit physical space")
    fields = extract_fields(address, [off] + [widths[n] for n in order])
    vals = dict(zip(order, fields[1:]))
    return DecodedAddress(
        vals["channel"], vals["rank"], vals["bank"], vals["row"], (vals["colhi"] << off) | fields[0]
    )


@dataclass
class MemRequest:
    address: int
    decoded: DecodedAddress
    thread_id: int = 0
    arrival: int = 0
    kind: str = "Read"
    seq: int = 0
    token: object = None
    start: Optional[int] = None
    completion: Optional[int] = None
    outcome: Optional[str] = None

    @property
    def bank_key(self):
        return (self.decoded.rank, self.decoded.bank)

    @property
    def row(self):
        return self.decoded.row


@dataclass
class BankState:
    open_row: Optional[int] = None
    busy_until: int = 0
    last_access_end: int = 0
    last_act: Optional[int] = None
    last_pre: Optional[int] = None
    last_cas: Optional[int] = None


@dataclass(frozen=True)
class Command:
    cycle: int
    channel: int
    rank: int
    bank: int
    cmd: str
    arg: int

    def render(self) -> str:
        return f"{self.cycle} {self.channel} {self.rank}.{self.bank} {self.cmd} {self.arg}"


@dataclass
class ServiceResult:
    completion: int
    commands: list
    outcome: str
    data_start: int


def row_outcome(bank: BankState, row: int) -> str:
    if bank.open_row is None:
        return "miss"
    return "hit" if bank.open_row == row else "conflict"


def service(req: MemRequest, bank: BankState, timing: TimingParams, bus_free: int, now: int,
            channel: int = 0) -> ServiceResult:
    """Issue the command sequence for ``req`` starting no earlier than ``now``.

    Updates ``bank``; the caller owns the channel's data bus (``bus_free``).
    """
    t = max(now, bank.busy_until)
    d = req.decoded
    cmds = []
    outcome = row_outcome(bank, d.row)
    if outcome == "conflict":
        cmds.append(Command(t, channel, d.rank, d.bank, "PRE", bank.open_row))
        bank.last_pre = t
        t += timing.t_rp
    if outcome != "hit":
        cmds.append(Command(t, channel, d.rank, d.bank, "ACT", d.row))
        bank.last_act = t
        t += timing.t_rcd
    cas = max(t, bus_free - timing.t_cl)
    cmds.append(Command(cas, channel, d.rank, d.bank, "RD" if req.kind == "Read" else "WR", d.column))
    data_start = cas + timing.t_cl
    completion = data_start + timing.t_bl
    bank.last_cas = cas
    bank.open_row = d.row
    bank.busy_until = completion
    bank.last_access_end = completion
    return ServiceResult(completion, cmds, outcome, data_start)


def schedule_next(queue, banks, policy: str = "FRFCFS", slowdown=None, threshold: float = 1.5):
    """Pick the next request from ``queue`` (all issuable), or None.

    ``banks`` maps a request's bank key to its BankState. ``slowdown`` maps
    thread id to its estimated slowdown, used by ThreadFair.
    """
    if not queue:
        return None
    oldest = min(queue, key=lambda r: (r.arrival, r.seq))
    if policy == "FCFS":
        return oldest
    if policy == "ThreadFair" and slowdown:
        threads = {r.thread_id for r in queue}
        worst = max(sorted(threads), key=lambda t: slowdown.get(t, 1.0))
        if slowdown.get(worst, 1.0) > threshold:
            return min((r for r in queue if r.thread_id == worst), key=lambda r: (r.arrival, r.seq))
    hits = [r for r in queue if banks[r.bank_key].open_row == r.row]
    if hits:
        return min(hits, key=lambda r: (r.arrival, r.seq))
    return oldest


class ChannelController:
    def __init__(self, channel: int, cfg: DramConfig):
        self.channel = channel
        self.cfg = cfg
        self.timing = cfg.timing
        self.banks = {
            (r, b): BankState() for r in range(cfg.geometry.ranks) for b in range(cfg.geometry.banks)
        }
        self.queue: list = []
        self.bus_free = 0
        self.commands: list = []
        self.bursts: list = []
        self.served: list = []
        self.row_hits = 0
        self.row_misses = 0
        self.row_conflicts = 0
        self._wait = {}
        self._busy = {}

    def enqueue(self, req: MemRequest):
        self.queue.append(req)

    def _apply_timeout(self, now):
        if self.cfg.row_policy != "Timeout":
            return
        n = self.cfg.timeout_cycles
        for (rank, b), bank in self.banks.items():
            if bank.open_row is not None and now >= bank.last_access_end + n and bank.busy_until <= bank.last_access_end + n:
                pre = bank.last_access_end + n
                self.commands.append(Command(pre, self.channel, rank, b, "PRE", bank.open_row))
                bank.last_pre = pre
                bank.open_row = None
                bank.busy_until = pre + self.timing.t_rp

    def slowdown_estimates(self, now):
        est = {}
        threads = set(self._busy) | {r.thread_id for r in self.queue}
        for t in threads:
            wait = self._wait.get(t, 0) + sum(now - r.arrival for r in self.queue if r.thread_id == t and r.arrival <= now)
            busy = self._busy.get(t, 0)
            est[t] = (wait + busy) / busy if busy else (1.0 + wait)
        return est

    def tick(self, now: int) -> list:
        """Service every request that can start at ``now``; return the served ones."""
        self._apply_timeout(now)
        done = []
        while True:
            ready = [r for r in self.queue if r.arrival <= now and self.banks[r.bank_key].busy_until <= now]
            if not ready:
                break
            est = self.slowdown_estimates(now) if self.cfg.scheduler == "ThreadFair" else None
            req = schedule_next(ready, self.banks, self.cfg.scheduler, est, self.cfg.fair_threshold)
            self.queue.remove(req)
            bank = self.banks[req.bank_key]
            res = service(req, bank, self.timing, self.bus_free, now, self.channel)
            self.bus_free = res.completion
            self.bursts.append((res.data_start, res.completion))
            self.commands.extend(res.commands)
            req.start, req.completion, req.outcome = now, res.completion, res.outcome
            if res.outcome == "hit":
                self.row_hits += 1
            elif res.outcome == "miss":
                self.row_misses += 1
            else:
                self.row_conflicts += 1
            self._wait[req.thread_id] = self._wait.get(req.thread_id, 0) + (now - req.arrival)
            self._busy[req.thread_id] = self._busy.get(req.thread_id, 0) + (res.completion - now)
            if self.cfg.row_policy == "ClosedRow" and not any(
                r.bank_key == req.bank_key and r.row == req.row for r in self.queue if r.arrival <= now
            ):
                d = req.decoded
                self.commands.append(Command(res.completion, self.channel, d.rank, d.bank, "PRE", d.row))
                bank.last_pre = res.completion
                bank.open_row = None
                bank.busy_until = res.completion + self.timing.t_rp
            self.served.append(req)
            done.append(req)
        return done

    def next_event(self, now: int) -> Optional[int]:
        times = [max(r.arrival, self.banks[r.bank_key].busy_until) for r in self.queue]
        later = [t for t in times if t > now]
        if later:
            return min(later)
        return now + 1 if times else None


class DramSystem:
    """All channel controllers plus address decoding."""

    def __init__(self, cfg: DramConfig, block_size: int = 64):
        self.cfg = cfg
        self.block_size = block_size
        self.channels = [ChannelController(c, cfg) for c in range(cfg.geometry.channels)]
        self._seq = itertools.count()

    def decode(self, address: int) -> DecodedAddress:
        return decode_address(address, self.cfg.interleaving, self.cfg.geometry, self.block_size)

    def submit(self, address: int, kind: str, thread_id: int, arrival: int, token=None) -> MemRequest:
        req = MemRequest(address, self.decode(address), thread_id, arrival, kind, next(self._seq), token)
        self.channels[req.decoded.channel].enqueue(req)
        return req

    def tick(self, now: int) -> list:
        done = []
        for ch in self.channels:
            done.extend(ch.tick(now))
        return done

    def pending(self) -> bool:
        return any(ch.queue for ch in self.channels)

    def next_event(self, now: int) -> Optional[int]:
        times = [t for t in (ch.next_event(now) for ch in self.channels) if t is not None]
        return min(times) if times else None

    def run_to_completion(self, start: int = 0) -> list:
        """Tick until every queued request is served; return them in service order."""
        now, served = start, []
        while self.pending():
            served.extend(self.tick(now))
            nxt = self.next_event(now)
            now = nxt if nxt is not None and nxt > now else now + 1
        return served

    def command_log(self) -> list:
        cmds = [c for ch in self.channels for c in ch.commands]
        return sorted(cmds, key=lambda c: (c.cycle, c.channel, c.rank, c.bank))

    @property
    def row_hits(self):
        return sum(ch.row_hits for ch in self.channels)

    @property
    def row_misses(self):
        return sum(ch.row_misses for ch in self.channels)

    @property
    def row_conflicts(self):
        return sum(ch.row_conflicts for ch in self.channels)


def audit_commands(commands, timing: TimingParams, bursts_by_channel=None) -> list:
    """Return timing violations found in a command log (empty when clean).

    Checks per bank: ACT only on a precharged bank and >= t_rp after PRE;
    column commands only to the open row and >= t_rcd after ACT; PRE not
    before the previous burst ends. Checks per channel: data bursts
    (CAS + t_cl, length t_bl) never overlap.
    """
    problems = []
    by_bank = {}
    for c in sorted(commands, key=lambda c: c.cycle):
        by_bank.setdefault((c.channel, c.rank, c.bank), []).append(c)
    bursts = {}
    for key, cmds in by_bank.items():
        open_row, last_act, last_pre, burst_end = None, None, None, -1
        for c in cmds:
            if c.cmd == "PRE":
                if open_row is None:
                    problems.append(f"{key} PRE at {c.cycle} with no open row")
                if c.cycle < burst_end:
                    problems.append(f"{key} PRE at {c.cycle} before burst end {burst_end}")
                open_row, last_pre = None, c.cycle
            elif c.cmd == "ACT":
                if open_row is not None:
                    problems.append(f"{key} ACT at {c.cycle} while row {open_row} open")
                if last_pre is not None and c.cycle - last_pre < timing.t_rp:
                    problems.append(f"{key} ACT at {c.cycle} violates t_rp after PRE {last_pre}")
                open_row, last_act = c.arg, c.cycle
            else:
                if open_row is None:
                    problems.append(f"{key} {c.cmd} at {c.cycle} with no open row")
                if last_act is not None and c.cycle - last_act < timing.t_rcd:
                    problems.append(f"{key} {c.cmd} at {c.cycle} violates t_rcd after ACT {last_act}")
                start = c.cycle + timing.t_cl
                burst_end = start + timing.t_bl
                bursts.setdefault(key[0], []).append((start, burst_end))
    for ch, spans in bursts.items():
        spans.sort()
        for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
            if s1 < e0:
                problems.append(f"channel {ch} bursts overlap: [{s0},{e0}) and [{s1},{e1})")
    return problems


# --- AMAT -------------------------------------------------------------------

@dataclass
class LatencyStats:
    count: int = 0
    total: int = 0
    # level name -> [accesses, misses, latency beyond this level summed over misses]
    levels: dict = field(default_factory=dict)

    def record(self, latency: int):
        self.count += 1
        self.total += latency


def amat_compose(hit_time: float, miss_rate: float, miss_penalty: float) -> float:
    return hit_time + miss_rate * miss_penalty


def amat_summary(stats) -> float:
    """Average memory access time in cycles.

    ``stats`` is a LatencyStats or an iterable of per-access latencies.
    """
    if isinstance(stats, LatencyStats):
        count, total = stats.count, stats.total
    else:
        lat = list(stats)
        count, total = len(lat), sum(lat)
    if count == 0:
        raise NoAccesses("no memory accesses recorded")
    return total / count


def amat_per_level(stats: LatencyStats, latencies: dict) -> dict:
    """Per-level hit_time + miss_rate * miss_penalty from recorded counts."""
    out = {}
    for name, (accesses, misses, beyond) in stats.levels.items():
        if not accesses:
            continue
        penalty = beyond / misses if misses else 0.0
        out[name] = amat_compose(latencies[name], misses / accesses, penalty)
    return out
