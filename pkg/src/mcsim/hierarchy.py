"""Memory system: private caches, the sliced LLC, coherence and DRAM glued together.

Accesses are performed functionally at issue time (the global transaction
order); their timing is computed alongside and may depend on a pending
DRAM fill, signalled through a :class:`Token`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from mcsim.cache import CacheLevel, MshrFile, MshrResult, llc_latency
from mcsim.coherence import DIR, CoherenceFabric, MsgKind
from mcsim.config import SystemConfig
from mcsim.dram import DramSystem, LatencyStats


class Token:
    """Completion handle for a DRAM fill; ``complete`` is set once it is scheduled."""

    __slots__ = ("complete", "block", "slice")

    def __init__(self, block, slice_idx):
        self.complete = None
        self.block = block
        self.slice = slice_idx

    def done_by(self, now):
        return self.complete is not None and self.complete <= now


@dataclass
class AccessResult:
    ready: Optional[int] = None
    token: Optional[Token] = None
    stall: bool = False
    value: int = 0
    l1_write_hit: bool = False
    hit_level: str = ""
    # private levels looked up before the hit (all of them on a miss)
    private_probes: int = 0
    private_hit: bool = False
    llc_miss: bool = False


@dataclass
class LevelCounters:
    hits: int = 0
    misses: int = 0

    @property
    def accesses(self):
        return self.hits + self.misses


@dataclass
class PerformRecord:
    seq: int
    core: int
    thread: int
    kind: str
    address: int
    size: int
    value: int


class MemorySystem:
    def __init__(self, cfg: SystemConfig, dram: Optional[DramSystem] = None):
        self.cfg = cfg
        d = cfg.derived
        self.block_size = cfg.block_size
        self.offset_bits = d.offset_bits
        self.n = cfg.core_count
        idx = {id(lvl): i for i, lvl in enumerate(cfg.cache_levels)}
        self.private_cfgs = cfg.private_levels
        self.privates = [
            [CacheLevel(c, cfg.block_size, d.level_sets[idx[id(c)]]) for c in self.private_cfgs]
            for _ in range(self.n)
        ]
        self.llc = CacheLevel(cfg.llc, cfg.block_size, d.level_sets[-1])
        self.mshrs = [MshrFile(cfg.llc.mshr_per_slice) for _ in range(cfg.llc.slice_count)]
        self.fabric = CoherenceFabric(cfg.coherence.protocol, cfg.coherence.transport, self.n)
        self.dram = dram if dram is not None else DramSystem(cfg.dram, cfg.block_size)
        self.memory: dict = {}
        self.data: list = [dict() for _ in range(self.n)]
        self.bus_free = 0
        self.counters = {c.name: LevelCounters() for c in self.private_cfgs}
        self.counters[cfg.llc.name] = LevelCounters()
        self.latency = LatencyStats()
        self.latency.levels = {name: [0, 0, 0] for name in self.counters}
        self.back_invalidations = 0
        self.llc_fills = 0
        self.mshr_allocations = 0
        self.mshr_merges = 0
        self.mshr_stalls = 0
        self.upgrades = 0
        self.dram_writebacks = 0
        self.track_values = cfg.value_tracking
        self.log: list = []
        self._seq = 0
        self.swmr_checks = True

    # -- data helpers -------------------------------------------------------

    def _mem_block(self, block):
        buf = self.memory.get(block)
        return bytearray(buf) if buf is not None else bytearray(self.block_size)

    @staticmethod
    def _read(buf, offset, size):
        return int.from_bytes(buf[offset:offset + size], "little")

    @staticmethod
    def _write(buf, offset, size, value):
        buf[offset:offset + size] = value.to_bytes(size, "little")

    def coherent_value(self, address: int, size: int) -> int:
        """Current architectural value at ``address`` (owner copy, else LLC, else memory)."""
        block = address >> self.offset_bits
        off = address & (self.block_size - 1)
        for core, st in self.fabric.holders(block).items():
            if st in ("M", "E", "S"):
                return self._read(self.data[core][block], off, size)
        line = self.llc.lines.get(block)
        if line is not None:
            return self._read(line.data, off, size)
        return self._read(self._mem_block(block), off, size)

    # -- private copies -----------------------------------------------------

    def private_contains(self, core, block) -> bool:
        return self.privates[core][-1].contains(block)

    def _drop_private(self, core, block):
        for lvl in self.privates[core]:
            lvl.remove(block)
        return self.data[core].pop(block, None)

    def _install_private(self, core, block, data, thread, now):
        """Fill ``block`` into every private level of ``core``."""
        levels = self.privates[core]
        self.data[core][block] = data
        for i, lvl in enumerate(levels):
            victim = lvl.fill(block, core)
            if victim is None:
                continue
            if i == len(levels) - 1:
                self._evict_private(core, victim.tag, thread, now)
            # inner-level victims stay in the outer levels

    def _evict_private(self, core, block, thread, now):
        for lvl in self.privates[core][:-1]:
            lvl.remove(block)
        st = self.fabric.state(core, block)
        data = self.data[core].pop(block, None)
        self.fabric.evict(core, block, now)
        if st == "M":
            self._writeback_to_llc(block, data, core, thread, now)

    # -- LLC ----------------------------------------------------------------

    def _llc_fill(self, block, core, data, thread, now, dirty=False, token=None):
        victim = self.llc.fill(block, core, data=data, dirty=dirty)
        line = self.llc.lines[block]
        line.token = token
        if victim is None:
            return
        vdata, vdirty = victim.data, victim.dirty
        if self.cfg.llc.inclusion == "Inclusive":
            cores, owner, _ = self.fabric.back_invalidate(victim.tag, now)
            self.back_invalidations += len(cores)
            for c in cores:
                pdata = self._drop_private(c, victim.tag)
                if c == owner:
                    vdata, vdirty = pdata, True
        if vdirty:
            self.memory[victim.tag] = bytes(vdata)
            self.dram.submit(victim.tag << self.offset_bits, "Write", thread, now)
            self.dram_writebacks += 1

    def _writeback_to_llc(self, block, data, core, thread, now):
        line = self.llc.lines.get(block)
        if line is not None:
            line.data = bytearray(data)
            line.dirty = True
        else:
            self._llc_fill(block, core, bytearray(data), thread, now, dirty=True)

    def _purge_mshrs(self, now):
        for m in self.mshrs:
            done = [b for b, e in m.entries.items() if e.token is not None and e.token.done_by(now)]
            for b in done:
                m.release(b)

    # -- the access path ------------------------------------------------------

    def access(self, core: int, kind: str, address: int, size: int, value: int, now: int,
               thread: int = 0) -> AccessResult:
        """Perform a load (``kind`` "L") or store ("S") for ``core`` at ``now``."""
        block = address >> self.offset_bits
        off = address & (self.block_size - 1)
        is_write = kind == "S"
        st = self.fabric.state(core, block)
        sufficient = st in ("M", "E") if is_write else st != "I"

        lat = 0
        hit_level = ""
        hit_idx = None
        for i, lvl in enumerate(self.privates[core]):
            lat += lvl.latency
            present = lvl.lookup(address) is not None
            cnt = self.counters[lvl.name]
            if present:
                cnt.hits += 1
                if hit_idx is None:
                    hit_idx = i
                break
            cnt.misses += 1
        if hit_idx is not None and sufficient:
            hit_level = self.privates[core][hit_idx].name
            for lvl in self.privates[core][:hit_idx]:
                lvl.fill(block, core)
            if is_write and st == "E":
                self.fabric.core_request(core, "Write", block, now)
            res = AccessResult(ready=now + lat, hit_level=hit_level, l1_write_hit=is_write and hit_idx == 0,
                               private_probes=hit_idx + 1, private_hit=True)
            self._perform(res, core, thread, kind, address, size, value, block, off)
            return res

        # private miss, or a write needing ownership
        slice_idx = self.llc.slice_of(address)
        self._purge_mshrs(now)
        holders = self.fabric.holders(block)
        remote_owner = next((c for c, s in holders.items() if c != core and s in ("M", "E")), None)
        upgrade = is_write and st == "S"
        line = self.llc.lines.get(block)
        need_dram = line is None and remote_owner is None and not upgrade
        token = None
        if need_dram:
            mshr = self.mshrs[slice_idx]
            r = mshr.allocate(block, core)
            if r is MshrResult.STALL_FULL:
                self.mshr_stalls += 1
                # nothing happened; the retry will count these lookups again
                for lvl in self.privates[core]:
                    self.counters[lvl.name].misses -= 1
                    lvl.misses -= 1
                return AccessResult(stall=True)
            token = Token(block, slice_idx)
            mshr.entries[block].token = token
            self.mshr_allocations += 1
        llc_lat = llc_latency(core, slice_idx, self.cfg.llc, self.cfg.interconnect)
        if line is not None:
            self.llc.touch(block)
        llc_cnt = self.counters[self.llc.name]
        if not upgrade:
            if line is not None:
                llc_cnt.hits += 1
            else:
                llc_cnt.misses += 1
        else:
            self.upgrades += 1
        arrive = now + lat + llc_lat

        if need_dram:
            self.dram.submit(block << self.offset_bits, "Read", thread, arrive, token)
            self._llc_fill(block, core, self._mem_block(block), thread, now, token=token)
            self.llc_fills += 1
            line = self.llc.lines[block]
        elif line is not None and line.token is not None and not line.token.done_by(arrive):
            token = line.token
            self.mshr_merges += 1
            if block in self.mshrs[slice_idx].entries:
                self.mshrs[slice_idx].entries[block].merged += 1

        extra = 0
        if self.cfg.coherence.transport == "snoopy":
            start = max(arrive, self.bus_free)
            self.bus_free = start + self.cfg.coherence.bus_occupancy_cycles
            extra += start - arrive

        # snapshot suppliers' data before the transaction invalidates them
        supplier_data = {c: self.data[c].get(block) for c in holders if c != core}
        txn = self.fabric.core_request(core, "Write" if is_write else "Read", block, now)
        if self.swmr_checks:
            self.fabric.check_swmr(block)
        if txn.forwarded and self.cfg.coherence.transport == "directory":
            extra += self.cfg.coherence.forward_cycles
        if txn.writeback_from is not None:
            self._writeback_to_llc(block, supplier_data[txn.writeback_from], txn.writeback_from, thread, now)
        for c in txn.invalidated:
            self._drop_private(c, block)

        if upgrade:
            data = self.data[core][block]
        elif isinstance(txn.data_source, int):
            data = bytearray(supplier_data[txn.data_source])
        else:
            line = self.llc.lines.get(block)
            data = bytearray(line.data) if line is not None else self._mem_block(block)
        if upgrade:
            # the outermost level holds the block, so inner fills evict nothing that matters
            for lvl in self.privates[core]:
                lvl.fill(block, core)
        else:
            self._install_private(core, block, data, thread, now)

        ready = arrive + extra
        res = AccessResult(ready=ready, token=token, hit_level="DRAM" if need_dram else self.llc.name,
                           private_probes=len(self.privates[core]), llc_miss=need_dram)
        self._perform(res, core, thread, kind, address, size, value, block, off)
        return res

    def _perform(self, res, core, thread, kind, address, size, value, block, off):
        buf = self.data[core][block]
        if kind == "S":
            self._write(buf, off, size, value)
            res.value = value
        else:
            res.value = self._read(buf, off, size)
        if self.track_values:
            self.log.append(PerformRecord(self._seq, core, thread, kind, address, size, res.value))
        self._seq += 1

    def record_latency(self, res: AccessResult, latency: int):
        """Account one completed access of ``latency`` cycles for AMAT."""
        self.latency.record(latency)
        lv = self.latency.levels
        run = 0
        for i, cfg in enumerate(self.private_cfgs[:res.private_probes]):
            run += cfg.latency_cycles
            entry = lv[cfg.name]
            entry[0] += 1
            if res.private_hit and i == res.private_probes - 1:
                return
            entry[1] += 1
            entry[2] += latency - run
        entry = lv[self.cfg.llc.name]
        entry[0] += 1
        if res.llc_miss:
            entry[1] += 1
            entry[2] += max(0, latency - run - self.cfg.llc.latency_cycles)

    # -- statistics -----------------------------------------------------------

    def level_stats(self) -> dict:
        return {name: {"hits": c.hits, "misses": c.misses} for name, c in self.counters.items()}


def check_data_values(log, block_size: int = 64) -> list:
    """Replay performed accesses on a flat byte memory; return mismatching loads."""
    flat = {}
    bad = []
    for rec in sorted(log, key=lambda r: r.seq):
        if rec.kind == "S":
            for i in range(rec.size):
                flat[rec.address + i] = (rec.value >> (8 * i)) & 0xFF
        else:
            expect = sum(flat.get(rec.address + i, 0) << (8 * i) for i in range(rec.size))
            if expect != rec.value:
                bad.append((rec, expect))
    return bad
