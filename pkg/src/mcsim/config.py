"""Machine configuration: types, validation, and JSON loading."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from mcsim.errors import ConfigError, EmptyAffinity, InconsistentBlockSize, NonPowerOfTwo

PROTOCOLS = ("MSI", "MESI")
TRANSPORTS = ("snoopy", "directory")
CONSISTENCY_MODES = ("SC", "TSO")
GOVERNORS = ("performance", "powersave", "ondemand")
SLICE_DECODERS = ("BitSelect", "XorHash")
INCLUSION_POLICIES = ("Inclusive", "NonInclusive")
LAYOUTS = ("ring", "bus")
INTERLEAVINGS = ("CacheBlockInterleave", "RowInterleave", "NonInterleaved")
ROW_POLICIES = ("OpenRow", "ClosedRow", "Timeout")
SCHEDULERS = ("FCFS", "FRFCFS", "ThreadFair")


def is_pow2(n) -> bool:
    return isinstance(n, int) and n > 0 and (n & (n - 1)) == 0


def log2(n: int) -> int:
    return n.bit_length() - 1


@dataclass
class DvfsParams:
    """Voltage/frequency operating range of one core.

    Defaults describe a hypothetical 4.0 GHz part with an 88 W TDP at
    V_dd = 1.2 V, V_min = 1.0 V and a 4.4 GHz turbo step.
    """

    f_base: float = 4.0e9
    f_turbo: float = 4.4e9
    v_dd: float = 1.2
    v_min: float = 1.0
    tdp_watts: float = 88.0
    activity_alpha: float = 1.0
    capacitance_c: Optional[float] = None


@dataclass
class CoreConfig:
    base_frequency_hz: float = 4.0e9
    dvfs: DvfsParams = field(default_factory=DvfsParams)
    store_buffer_depth: int = 0
    consistency_mode: str = "SC"
    governor: str = "performance"
    # ascending; empty means (f_base, f_turbo)
    frequency_steps: list = field(default_factory=list)
    static_watts: float = 0.0


@dataclass
class CacheConfig:
    name: str = "L1D"
    capacity: int = 32 * 1024
    associativity: int = 8
    latency_cycles: int = 4
    shared: bool = False
    slice_count: int = 1
    slice_decoder: str = "BitSelect"
    inclusion: str = "Inclusive"
    mshr_per_slice: int = 8
    way_partition: Optional[dict] = None
    block_size: Optional[int] = None


@dataclass
class CoherenceConfig:
    protocol: str = "MESI"
    transport: str = "directory"
    bus_occupancy_cycles: int = 2
    # extra cycles per indirection (remote owner supply or invalidation round)
    forward_cycles: int = 6


@dataclass
class InterconnectConfig:
    layout: str = "ring"
    hop_latency_cycles: int = 2
    bus_cycles: int = 4


@dataclass
class DramGeometry:
    channels: int = 1
    ranks: int = 1
    banks: int = 8
    rows: int = 32768
    row_size: int = 2048


@dataclass
class TimingParams:
    t_rcd: int = 10
    t_cl: int = 10
    t_bl: int = 4
    t_rp: int = 10


@dataclass
class DramConfig:
    geometry: DramGeometry = field(default_factory=DramGeometry)
    timing: TimingParams = field(default_factory=TimingParams)
    interleaving: str = "CacheBlockInterleave"
    row_policy: str = "OpenRow"
    timeout_cycles: int = 50
    scheduler: str = "FRFCFS"
    fair_threshold: float = 1.5


@dataclass
class OsConfig:
    quantum_cycles: int = 10000
    context_switch_cycles: int = 200
    affinity: dict = field(default_factory=dict)
    governor_interval_cycles: Optional[int] = None


@dataclass
class Derived:
    offset_bits: int
    level_sets: list
    level_index_bits: list
    slice_bits: int
    channel_bits: int
    rank_bits: int
    bank_bits: int
    row_bits: int
    column_bits: int
    address_bits: int


def default_cache_levels(core_count: int = 1) -> list:
    slices = 1 << log2(max(1, core_count))
    return [
        CacheConfig("L1D", 32 * 1024, 8, 4),
        CacheConfig("L2", 256 * 1024, 8, 12),
        CacheConfig("LLC", 2 * 1024 * 1024, 16, 30, shared=True, slice_count=slices, mshr_per_slice=16),
    ]


@dataclass
class SystemConfig:
    core_count: int = 1
    block_size: int = 64
    per_core: list = field(default_factory=list)
    cache_levels: list = field(default_factory=list)
    coherence: CoherenceConfig = field(default_factory=CoherenceConfig)
    interconnect: InterconnectConfig = field(default_factory=InterconnectConfig)
    dram: DramConfig = field(default_factory=DramConfig)
    os: OsConfig = field(default_factory=OsConfig)
    value_tracking: bool = False
    deadlock_cycles: int = 100000
    derived: Optional[Derived] = None

    @property
    def private_levels(self):
        return [c for c in self.cache_levels if not c.shared and not c.name.upper().startswith("L1I")]

    @property
    def llc(self) -> CacheConfig:
        return self.cache_levels[-1]


def _pow2(value, name, exc=NonPowerOfTwo):
    if not is_pow2(value):
        raise exc(name, f"must be a power of two, got {value!r}")


def _choice(value, name, options):
    if value not in options:
        raise ConfigError(name, f"must be one of {', '.join(options)}, got {value!r}")


def _positive(value, name):
    if not isinstance(value, (int, float)) or value <= 0:
        raise ConfigError(name, f"must be positive, got {value!r}")


def validate_config(raw: SystemConfig) -> SystemConfig:
    """Check invariants and return a normalized copy with derived bit widths."""
    cfg = copy.deepcopy(raw)
    if not isinstance(cfg.core_count, int) or cfg.core_count < 1:
        raise ConfigError("core_count", f"must be >= 1, got {cfg.core_count!r}")
    n = cfg.core_count
    _pow2(cfg.block_size, "block_size")

    if not cfg.per_core:
        cfg.per_core = [CoreConfig() for _ in range(n)]
    elif len(cfg.per_core) == 1 and n > 1:
        cfg.per_core = [copy.deepcopy(cfg.per_core[0]) for _ in range(n)]
    elif len(cfg.per_core) != n:
        raise ConfigError("per_core", f"expected {n} entries, got {len(cfg.per_core)}")
    for i, core in enumerate(cfg.per_core):
        _validate_core(core, f"per_core[{i}]")

    if not cfg.cache_levels:
        cfg.cache_levels = default_cache_levels(n)
    level_sets, level_bits = [], []
    for i, lvl in enumerate(cfg.cache_levels):
        sets = _validate_cache(lvl, f"cache_levels[{i}]", cfg.block_size, n)
        level_sets.append(sets)
        level_bits.append(log2(sets))
    shared = [i for i, lvl in enumerate(cfg.cache_levels) if lvl.shared]
    if len(shared) != 1 or shared[0] != len(cfg.cache_levels) - 1:
        raise ConfigError("cache_levels", "exactly one shared LLC is required and it must be the last level")
    if not cfg.private_levels:
        raise ConfigError("cache_levels", "at least one private data cache level is required")

    coh = cfg.coherence
    _choice(coh.protocol, "coherence.protocol", PROTOCOLS)
    _choice(coh.transport, "coherence.transport", TRANSPORTS)
    if coh.bus_occupancy_cycles < 1 or coh.forward_cycles < 0:
        raise ConfigError("coherence", "bus_occupancy_cycles >= 1 and forward_cycles >= 0 required")

    ic = cfg.interconnect
    _choice(ic.layout, "interconnect.layout", LAYOUTS)
    if ic.hop_latency_cycles < 0 or ic.bus_cycles < 0:
        raise ConfigError("interconnect", "latencies must be non-negative")

    dram = cfg.dram
    geo = dram.geometry
    for name in ("channels", "ranks", "banks", "rows", "row_size"):
        _pow2(getattr(geo, name), f"dram.geometry.{name}")
    if geo.row_size < cfg.block_size:
        raise ConfigError("dram.geometry.row_size", "must be >= block_size")
    for name in ("t_rcd", "t_cl", "t_bl", "t_rp"):
        v = getattr(dram.timing, name)
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"dram.timing.{name}", f"must be an integer >= 1, got {v!r}")
    _choice(dram.interleaving, "dram.interleaving", INTERLEAVINGS)
    _choice(dram.row_policy, "dram.row_policy", ROW_POLICIES)
    _choice(dram.scheduler, "dram.scheduler", SCHEDULERS)
    if dram.timeout_cycles < 0:
        raise ConfigError("dram.timeout_cycles", "must be >= 0")

    osc = cfg.os
    if osc.quantum_cycles < 1:
        raise ConfigError("os.quantum_cycles", "must be >= 1")
    if osc.context_switch_cycles < 0:
        raise ConfigError("os.context_switch_cycles", "must be >= 0")
    affinity = {}
    for key, cores in osc.affinity.items():
        tid = int(key)
        if not cores:
            raise EmptyAffinity(f"os.affinity[{tid}]", "affinity set is empty")
        bad = [c for c in cores if not (0 <= int(c) < n)]
        if bad:
            raise ConfigError(f"os.affinity[{tid}]", f"unknown core ids {bad}")
        affinity[tid] = sorted({int(c) for c in cores})
    osc.affinity = dict(sorted(affinity.items()))
    if osc.governor_interval_cycles is None:
        osc.governor_interval_cycles = osc.quantum_cycles

    if cfg.deadlock_cycles < 1:
        raise ConfigError("deadlock_cycles", "must be >= 1")

    offset_bits = log2(cfg.block_size)
    column_bits = log2(geo.row_size)
    bits = dict(
        channel_bits=log2(geo.channels),
        rank_bits=log2(geo.ranks),
        bank_bits=log2(geo.banks),
        row_bits=log2(geo.rows),
    )
    cfg.derived = Derived(
        offset_bits=offset_bits,
        level_sets=level_sets,
        level_index_bits=level_bits,
        slice_bits=log2(cfg.llc.slice_count),
        column_bits=column_bits,
        address_bits=column_bits + sum(bits.values()),
        **bits,
    )
    return cfg


def _validate_core(core: CoreConfig, where: str):
    d = core.dvfs
    _positive(core.base_frequency_hz, f"{where}.base_frequency_hz")
    if not (0 < d.v_min <= d.v_dd):
        raise ConfigError(f"{where}.dvfs", "requires 0 < v_min <= v_dd")
    if not (0 < d.f_base <= d.f_turbo):
        raise ConfigError(f"{where}.dvfs", "requires 0 < f_base <= f_turbo")
    _positive(d.tdp_watts, f"{where}.dvfs.tdp_watts")
    if d.f_base != core.base_frequency_hz:
        raise ConfigError(f"{where}.dvfs.f_base", "must equal base_frequency_hz")
    if not isinstance(core.store_buffer_depth, int) or core.store_buffer_depth < 0:
        raise ConfigError(f"{where}.store_buffer_depth", "must be an integer >= 0")
    _choice(core.consistency_mode, f"{where}.consistency_mode", CONSISTENCY_MODES)
    _choice(core.governor, f"{where}.governor", GOVERNORS)
    steps = core.frequency_steps or sorted({d.f_base, d.f_turbo})
    if list(steps) != sorted(set(steps)) or steps[0] <= 0 or steps[-1] > d.f_turbo:
        raise ConfigError(f"{where}.frequency_steps", "must be strictly ascending within (0, f_turbo]")
    core.frequency_steps = [float(s) for s in steps]
    if core.static_watts < 0:
        raise ConfigError(f"{where}.static_watts", "must be >= 0")


def _validate_cache(lvl: CacheConfig, where: str, block_size: int, core_count: int) -> int:
    if lvl.block_size is not None and lvl.block_size != block_size:
        raise InconsistentBlockSize(f"{where}.block_size", f"{lvl.block_size} differs from block_size {block_size}")
    _pow2(lvl.capacity, f"{where}.capacity")
    _pow2(lvl.associativity, f"{where}.associativity")
    _pow2(lvl.slice_count, f"{where}.slice_count")
    if lvl.associativity > 64:
        raise ConfigError(f"{where}.associativity", "at most 64 ways are supported")
    if lvl.capacity < lvl.associativity * block_size:
        raise ConfigError(f"{where}.capacity", "smaller than one set")
    sets = lvl.capacity // (lvl.associativity * block_size)
    if sets % lvl.slice_count:
        raise ConfigError(f"{where}.slice_count", f"must divide the set count {sets}")
    if not lvl.shared and lvl.slice_count != 1:
        raise ConfigError(f"{where}.slice_count", "private levels are not sliced")
    if lvl.latency_cycles < 1:
        raise ConfigError(f"{where}.latency_cycles", "must be >= 1")
    if lvl.mshr_per_slice < 1:
        raise ConfigError(f"{where}.mshr_per_slice", "must be >= 1")
    _choice(lvl.slice_decoder, f"{where}.slice_decoder", SLICE_DECODERS)
    _choice(lvl.inclusion, f"{where}.inclusion", INCLUSION_POLICIES)
    if lvl.way_partition is not None:
        part = {}
        for key, ways in lvl.way_partition.items():
            core = int(key)
            if not (0 <= core < core_count):
                raise ConfigError(f"{where}.way_partition", f"unknown core {core}")
            if not ways:
                raise ConfigError(f"{where}.way_partition[{core}]", "allowed way set is empty")
            if any(not (0 <= int(w) < lvl.associativity) for w in ways):
                raise ConfigError(f"{where}.way_partition[{core}]", "way index out of range")
            part[core] = sorted({int(w) for w in ways})
        lvl.way_partition = dict(sorted(part.items()))
    return sets


# --- JSON (de)serialization -------------------------------------------------

_NESTED = {
    (SystemConfig, "coherence"): CoherenceConfig,
    (SystemConfig, "interconnect"): InterconnectConfig,
    (SystemConfig, "dram"): DramConfig,
    (SystemConfig, "os"): OsConfig,
    (CoreConfig, "dvfs"): DvfsParams,
    (DramConfig, "geometry"): DramGeometry,
    (DramConfig, "timing"): TimingParams,
}
_LISTS = {
    (SystemConfig, "per_core"): CoreConfig,
    (SystemConfig, "cache_levels"): CacheConfig,
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path or "config", f"expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)} - {"derived"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if (cls, key) in _NESTED:
            value = _build(_NESTED[(cls, key)], value, where)
        elif (cls, key) in _LISTS:
            if not isinstance(value, list):
                raise ConfigError(where, "expected a list")
            value = [_build(_LISTS[(cls, key)], v, f"{where}[{i}]") for i, v in enumerate(value)]
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> SystemConfig:
    """Build and validate a config from a JSON-shaped mapping."""
    cfg = _build(SystemConfig, data, "")
    # base_frequency_hz alone implies the DVFS base point
    for core_data, core in zip(data.get("per_core", []), cfg.per_core):
        if "base_frequency_hz" in core_data and "f_base" not in core_data.get("dvfs", {}):
            core.dvfs.f_base = core.base_frequency_hz
            core.dvfs.f_turbo = max(core.dvfs.f_turbo, core.base_frequency_hz)
    return validate_config(cfg)


def config_to_dict(cfg: SystemConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out.pop("derived", None)
    out["os"]["affinity"] = {str(k): v for k, v in cfg.os.affinity.items()}
    for lvl in out["cache_levels"]:
        if lvl["way_partition"] is not None:
            lvl["way_partition"] = {str(k): v for k, v in lvl["way_partition"].items()}
    return out


def load_config(path) -> SystemConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)
