"""Cache primitives: tag stores with LRU, slice decoding, NUCA latency, MSHRs."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from mcsim.config import CacheConfig, InterconnectConfig, log2
from mcsim.kernels import LruSets, xor_fold


def slice_of(address: int, llc: CacheConfig, offset_bits: int) -> int:
    """Index of the LLC slice holding ``address``."""
    if llc.slice_count == 1:
        return 0
    block = address >> offset_bits
    if llc.slice_decoder == "XorHash":
        return xor_fold(block, log2(llc.slice_count))
    return block & (llc.slice_count - 1)


@dataclass(frozen=True)
class RingLayout:
    """Slices sit at ring stops ``0..slice_count-1``; core ``c`` attaches at stop ``c % slice_count``."""

    slice_count: int
    hop_latency_cycles: int

    def attachment(self, core: int) -> int:
        return core % self.slice_count

    def ring_hops(self, core: int, slice_idx: int) -> int:
        d = abs(self.attachment(core) - slice_idx)
        return min(d, self.slice_count - d)


def nuca_latency(core: int, slice_idx: int, layout: RingLayout, base_latency: int) -> int:
    return base_latency + layout.ring_hops(core, slice_idx) * layout.hop_latency_cycles


def llc_latency(core: int, slice_idx: int, llc: CacheConfig, ic: InterconnectConfig) -> int:
    """LLC access latency: NUCA over a ring, or uniform over a shared bus."""
    if ic.layout == "bus":
        return llc.latency_cycles + ic.bus_cycles
    return nuca_latency(core, slice_idx, RingLayout(llc.slice_count, ic.hop_latency_cycles), llc.latency_cycles)


@dataclass
class CacheBlock:
    tag: int
    state: str = "I"
    dirty: bool = False
    data: Optional[bytearray] = None


class CacheLevel:
    """One cache level (private or a sliced shared LLC) with strict LRU."""

    def __init__(self, config: CacheConfig, block_size: int, num_sets: int):
        self.config = config
        self.name = config.name
        self.block_size = block_size
        self.offset_bits = log2(block_size)
        self.ways = config.associativity
        self.num_sets = num_sets
        self.slices = config.slice_count
        self.sets_per_slice = num_sets // self.slices
        self.tags = LruSets(num_sets, self.ways)
        self.lines: dict = {}
        self.hits = 0
        self.misses = 0
        all_ways = (1 << self.ways) - 1
        self._masks = {}
        for core, ways in (config.way_partition or {}).items():
            self._masks[core] = sum(1 << w for w in ways)
        self._all_ways = all_ways

    @property
    def latency(self):
        return self.config.latency_cycles

    def slice_of(self, address: int) -> int:
        return slice_of(address, self.config, self.offset_bits)

    def set_index(self, block: int) -> int:
        local = (block >> log2(self.slices)) % self.sets_per_slice
        if self.slices == 1:
            return local
        return slice_of(block << self.offset_bits, self.config, self.offset_bits) * self.sets_per_slice + local

    def allowed_mask(self, core: Optional[int]) -> int:
        return self._masks.get(core, self._all_ways)

    def contains(self, block: int) -> bool:
        return block in self.lines

    def lookup(self, address: int) -> Optional[int]:
        """Hit latency, or None on a miss. Hits become most recently used."""
        block = address >> self.offset_bits
        s = self.set_index(block)
        w = self.tags.find(s, block)
        if w < 0:
            self.misses += 1
            return None
        self.hits += 1
        self.tags.touch(s, w)
        return self.latency

    def touch(self, block: int):
        s = self.set_index(block)
        w = self.tags.find(s, block)
        if w >= 0:
            self.tags.touch(s, w)

    def fill(self, block: int, core: Optional[int] = None, **line) -> Optional[CacheBlock]:
        """Install ``block``; return the evicted victim line, if any."""
        if block in self.lines:
            self.touch(block)
            for k, v in line.items():
                setattr(self.lines[block], k, v)
            return None
        s = self.set_index(block)
        way = self.tags.victim(s, self.allowed_mask(core))
        old = self.tags.install(s, way, block)
        self.lines[block] = CacheBlock(block, **line)
        if old >= 0:
            return self.lines.pop(old)
        return None

    def remove(self, block: int) -> Optional[CacheBlock]:
        line = self.lines.pop(block, None)
        if line is not None:
            s = self.set_index(block)
            self.tags.invalidate(s, self.tags.find(s, block))
        return line

    def way_of(self, block: int) -> int:
        return self.tags.find(self.set_index(block), block)

    def lru_positions(self, set_idx: int) -> list:
        return self.tags.positions(set_idx)


@dataclass
class FillOutcome:
    victim: Optional[int] = None
    writeback: bool = False
    back_invalidations: list = field(default_factory=list)


def fill_and_evict(level: CacheLevel, address: int, state: str = "S", core: Optional[int] = None,
                   holders=lambda block: (), dirty: bool = False) -> FillOutcome:
    """Fill ``address`` into ``level`` and report the eviction consequences.

    The victim is the LRU line among ``core``'s allowed ways. A dirty victim
    needs a writeback; an inclusive shared level must also invalidate every
    private copy (``holders(block)`` lists the cores holding it).
    """
    block = address >> level.offset_bits
    victim = level.fill(block, core, state=state, dirty=dirty)
    out = FillOutcome()
    if victim is None:
        return out
    out.victim = victim.tag
    out.writeback = victim.dirty
    if level.config.shared and level.config.inclusion == "Inclusive":
        out.back_invalidations = sorted(holders(victim.tag))
    return out


class MshrResult(str, Enum):
    ALLOCATED = "Allocated"
    MERGED = "Merged"
    STALL_FULL = "StallFull"


@dataclass
class MshrEntry:
    block: int
    core: int
    merged: int = 0
    token: object = None


class MshrFile:
    """Miss status holding registers of one LLC slice."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: dict = {}
        self.stalls = 0

    def allocate(self, block: int, core: int = 0) -> MshrResult:
        entry = self.entries.get(block)
        if entry is not None:
            entry.merged += 1
            return MshrResult.MERGED
        if len(self.entries) >= self.capacity:
            self.stalls += 1
            return MshrResult.STALL_FULL
        self.entries[block] = MshrEntry(block, core)
        return MshrResult.ALLOCATED

    def release(self, block: int):
        self.entries.pop(block, None)

    def live(self) -> int:
        return len(self.entries)
