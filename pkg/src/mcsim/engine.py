"""Cycle-driven simulation kernel, OS scheduler and alone/shared experiments.

Time is counted in cycles of a single reference clock (the fastest
configured frequency step). Each simulated cycle visits the cores in id
order, then the DRAM controllers. When nothing can happen before some
later cycle the clock jumps straight to it.
"""

from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

from mcsim.config import SystemConfig, validate_config
from mcsim.consistency import LitmusProgram
from mcsim.core import (
    CoreState,
    Enqueued,
    FenceDone,
    Forwarded,
    LocalCompletion,
    MemoryRequest,
    MustDrain,
    dynamic_power,
    governor_select,
    issue_event,
)
from mcsim.errors import DeadlockDetected, UnknownThread, UnschedulableThread
from mcsim.hierarchy import MemorySystem, check_data_values
from mcsim.metrics import AppPerf, MetricReport, multiprogram_metrics
from mcsim.trace import Kind, TraceEvent, split_threads


# --- scheduler ------------------------------------------------------------------

@dataclass(frozen=True)
class SchedEvent:
    cycle: int
    core: int
    kind: str  # "dispatch" or "preempt"
    thread: int
    cost: int = 0

    def render(self) -> str:
        return f"{self.cycle} os {self.kind} t{self.thread} c{self.core} cost={self.cost}"


@dataclass
class SchedulerState:
    """Static per-core run queues served round-robin, one quantum at a time."""

    core_count: int
    quantum_cycles: int = 10000
    context_switch_cycles: int = 200
    affinity: dict = field(default_factory=dict)
    queues: dict = field(default_factory=dict)
    running: dict = field(default_factory=dict)
    quantum_start: dict = field(default_factory=dict)
    has_run: set = field(default_factory=set)
    switches: int = 0

    def __post_init__(self):
        if self.quantum_cycles < 1:
            raise ValueError("quantum_cycles must be >= 1")
        for c in range(self.core_count):
            self.queues.setdefault(c, deque())
            self.running.setdefault(c, None)

    def allowed(self, thread: int) -> list:
        cores = self.affinity.get(thread)
        if cores is None:
            return list(range(self.core_count))
        ok = [c for c in cores if 0 <= c < self.core_count]
        if not ok:
            raise UnschedulableThread(f"thread {thread}: affinity {sorted(cores)} names no configured core")
        return ok

    def place(self, threads) -> dict:
        """Assign each thread (in id order) to its allowed core with the fewest threads."""
        load = {c: 0 for c in range(self.core_count)}
        where = {}
        for t in sorted(threads):
            core = min(self.allowed(t), key=lambda c: (load[c], c))
            load[core] += 1
            self.queues[core].append(t)
            where[t] = core
        return where

    def finish(self, core: int):
        self.running[core] = None

    def _dispatch(self, core, now):
        t = self.queues[core].popleft()
        cost = self.context_switch_cycles if core in self.has_run else 0
        if cost:
            self.switches += 1
        self.has_run.add(core)
        self.running[core] = t
        self.quantum_start[core] = now + cost
        return SchedEvent(now, core, "dispatch", t, cost)


def os_schedule_tick(state: SchedulerState, now: int, at_boundary=()) -> list:
    """Dispatch onto idle cores and rotate expired quanta.

    ``at_boundary`` names the cores whose running thread may be preempted
    this cycle (idle pipeline, drained store buffer). Returns the
    :class:`SchedEvent` list in core order.
    """
    events = []
    for core in range(state.core_count):
        cur = state.running[core]
        if cur is None:
            if state.queues[core]:
                events.append(state._dispatch(core, now))
            continue
        if (core in at_boundary and state.queues[core]
                and now - state.quantum_start[core] >= state.quantum_cycles):
            state.queues[core].append(cur)
            state.running[core] = None
            events.append(SchedEvent(now, core, "preempt", cur))
            events.append(state._dispatch(core, now))
        elif core in at_boundary and now - state.quantum_start[core] >= state.quantum_cycles:
            # nobody waiting: the quantum simply renews
            state.quantum_start[core] = now
    return events


# --- run statistics -------------------------------------------------------------

@dataclass
class ThreadStats:
    app: int = 0
    instructions: int = 0
    cycles: int = 0
    stall_cycles: int = 0
    cores: list = field(default_factory=list)


@dataclass
class RunStats:
    seed: int = 0
    cycles: int = 0
    instructions: int = 0
    threads: dict = field(default_factory=dict)
    apps: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)
    coherence: dict = field(default_factory=dict)
    dram: dict = field(default_factory=dict)
    context_switches: int = 0
    energy_joules: float = 0.0
    average_power_watts: float = 0.0
    amat_cycles: Optional[float] = None
    # logs and the final machine; excluded from serialization
    events: list = field(default_factory=list, repr=False)
    messages: list = field(default_factory=list, repr=False)
    commands: list = field(default_factory=list, repr=False)
    loads: dict = field(default_factory=dict, repr=False)
    memory: Optional[MemorySystem] = field(default=None, repr=False)
    value_mismatches: list = field(default_factory=list, repr=False)

    @property
    def ipc(self) -> float:
        return self.instructions / self.cycles if self.cycles else 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "cycles": self.cycles,
            "instructions": self.instructions,
            "ipc": self.ipc,
            "threads": {str(t): asdict(s) for t, s in sorted(self.threads.items())},
            "apps": {str(a): v for a, v in sorted(self.apps.items())},
            "cache": self.cache,
            "coherence": self.coherence,
            "dram": self.dram,
            "context_switches": self.context_switches,
            "energy_joules": self.energy_joules,
            "average_power_watts": self.average_power_watts,
            "amat_cycles": self.amat_cycles,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def final_value(self, address: int, size: int = 8) -> int:
        return self.memory.coherent_value(address, size)


# --- the kernel -----------------------------------------------------------------

@dataclass
class _Thread:
    tid: int
    events: list
    stats: ThreadStats
    pc: int = 0
    done: bool = False


class _Core:
    def __init__(self, cid, cfg, f_ref):
        self.cid = cid
        self.cfg = cfg
        self.steps = list(cfg.frequency_steps) or [cfg.dvfs.f_base, cfg.dvfs.f_turbo]
        self.step = 0 if cfg.governor == "powersave" else len(self.steps) - 1
        self.f_ref = f_ref
        self.state = CoreState(cid, self.steps[self.step], cfg.store_buffer_depth, cfg.consistency_mode)
        self.thread: Optional[_Thread] = None
        self.busy_until = 0
        self.wait = None  # (AccessResult, issue_cycle) pending a DRAM fill
        self.port_free = 0
        self.port_wait = None
        self.active = 0  # cycles with a thread assigned in the current governor window
        self.segments = [(self.steps[self.step], 0)]

    def scaled(self, cycles: int) -> int:
        """Reference cycles taken by ``cycles`` core cycles at the current frequency."""
        return max(1, math.ceil(cycles * self.f_ref / self.state.current_frequency - 1e-9)) if cycles else 0

    def port_ready(self, now):
        return self.port_wait is None and self.port_free <= now


class Simulator:
    def __init__(self, config: SystemConfig, traces, seed: int = 0, app_of: Optional[dict] = None):
        self.cfg = config if config.derived is not None else validate_config(config)
        self.seed = seed
        self.mem = MemorySystem(self.cfg)
        per_thread = split_threads(list(traces))
        if app_of is not None:
            missing = sorted(set(per_thread) - set(app_of))
            if missing:
                raise UnknownThread(f"threads {missing} belong to no application")
        for t in per_thread:
            if t < 0:
                raise UnknownThread(f"negative thread id {t}")
        self.threads = {
            t: _Thread(t, evs, ThreadStats(app=(app_of or {}).get(t, 0))) for t, evs in sorted(per_thread.items())
        }
        f_ref = max(max(c.frequency_steps or [c.dvfs.f_base, c.dvfs.f_turbo]) for c in self.cfg.per_core)
        self.f_ref = f_ref
        self.cores = [_Core(i, c, f_ref) for i, c in enumerate(self.cfg.per_core)]
        osc = self.cfg.os
        self.sched = SchedulerState(self.cfg.core_count, osc.quantum_cycles, osc.context_switch_cycles,
                                    dict(osc.affinity))
        self.sched.place(self.threads)
        self.gov_interval = osc.governor_interval_cycles or osc.quantum_cycles
        self.events: list = []
        self.loads = {t: [] for t in self.threads}
        self.last_progress = 0

    # -- memory settle helpers --------------------------------------------------

    def _settle(self, res, issue):
        """Final ready cycle of an access, or None while its DRAM fill is unscheduled."""
        tok = res.token
        if tok is not None and tok.complete is None:
            return None
        ready = res.ready if tok is None else max(res.ready, tok.complete)
        self.mem.record_latency(res, ready - issue)
        return ready

    def _settle_core(self, c: _Core):
        if c.wait is not None:
            res, issue = c.wait
            ready = self._settle(res, issue)
            if ready is not None:
                c.wait = None
                c.busy_until = max(c.busy_until, ready)
                c.thread.stats.stall_cycles += max(0, ready - issue - 1)
        if c.port_wait is not None:
            res, issue = c.port_wait
            ready = self._settle(res, issue)
            if ready is not None:
                c.port_wait = None
                c.port_free = max(c.port_free, ready)

    def _drain_one(self, c: _Core, now) -> bool:
        if not c.state.store_buffer or not c.port_ready(now):
            return False
        e = c.state.store_buffer[0]
        tid = c.thread.tid if c.thread else -1
        res = self.mem.access(c.cid, "S", e.address, e.size, e.value, now, tid)
        if res.stall:
            return False
        c.state.store_buffer.popleft()
        if res.l1_write_hit:
            c.port_free = now + 1
            self.mem.record_latency(res, res.ready - now)
        else:
            c.port_free = res.ready
            c.port_wait = (res, now)
            self._settle_core(c)
        return True

    # -- one core, one cycle ------------------------------------------------------

    def _issue(self, c: _Core, now) -> bool:
        t = c.thread
        ev = t.events[t.pc]
        out = issue_event(c.state, ev, now)
        drained = False
        if isinstance(out, MustDrain):
            drained = self._drain_one(c, now)
            if drained:
                out = issue_event(c.state, ev, now)
            if isinstance(out, MustDrain):
                t.stats.stall_cycles += 1
                return drained
        if isinstance(out, MemoryRequest):
            res = self.mem.access(c.cid, out.kind.value, out.address, out.size, out.value, now, t.tid)
            if res.stall:
                t.stats.stall_cycles += 1
                return drained
            if out.kind is Kind.LOAD:
                self.loads[t.tid].append((out.address, res.value))
            c.wait = (res, now)
            c.busy_until = res.ready
            self._settle_core(c)
        elif isinstance(out, LocalCompletion):
            c.busy_until = now + c.scaled(out.cycles)
        else:
            if isinstance(out, Forwarded):
                self.loads[t.tid].append((ev.address, out.value))
            else:
                assert isinstance(out, (Enqueued, FenceDone))
            c.busy_until = now + c.scaled(1)
        t.pc += 1
        t.stats.instructions += 1
        return True

    def _pipeline_idle(self, c: _Core, now) -> bool:
        return c.thread is not None and c.wait is None and c.busy_until <= now

    def _step_core(self, c: _Core, now) -> bool:
        progressed = False
        t = c.thread
        used_port = False
        if t is not None and self._pipeline_idle(c, now):
            if t.pc == len(t.events):
                if not c.state.store_buffer and c.port_ready(now):
                    t.done = True
                    t.stats.cycles = now
                    self.events.append(f"{now} core{c.cid} finish t{t.tid}")
                    c.thread = None
                    self.sched.finish(c.cid)
                    return True
            else:
                before = len(c.state.store_buffer)
                progressed = self._issue(c, now)
                used_port = len(c.state.store_buffer) < before
        if not used_port and c.state.store_buffer and self._drain_one(c, now):
            progressed = True
        return progressed

    # -- governors and energy -------------------------------------------------------

    def _governor_tick(self, boundary):
        for c in self.cores:
            util = c.active / self.gov_interval
            c.active = 0
            nxt = governor_select(c.cfg.governor, util, c.step, c.steps)
            if nxt != c.step:
                c.step = nxt
                c.state.current_frequency = c.steps[nxt]
                c.segments.append((c.steps[nxt], boundary))
                self.events.append(f"{boundary} core{c.cid} frequency {c.steps[nxt]:.6g}")

    def _energy(self, end):
        energy = 0.0
        for c in self.cores:
            segs = c.segments + [(None, end)]
            for (f, start), (_, stop) in zip(segs, segs[1:]):
                if stop > start:
                    secs = (stop - start) / self.f_ref
                    energy += (dynamic_power(c.cfg.dvfs, f) + c.cfg.static_watts) * secs
        seconds = end / self.f_ref
        return energy, (energy / seconds if seconds else 0.0)

    # -- main loop ---------------------------------------------------------------

    def _dispatch(self, now):
        boundary = {
            c.cid for c in self.cores
            if self._pipeline_idle(c, now) and not c.state.store_buffer and c.port_ready(now)
            and c.thread.pc < len(c.thread.events)  # a finishing thread is never preempted
        }
        evs = os_schedule_tick(self.sched, now, boundary)
        for e in evs:
            self.events.append(e.render())
            if e.kind == "dispatch":
                c = self.cores[e.core]
                c.thread = self.threads[e.thread]
                c.busy_until = max(c.busy_until, now + e.cost)
                if not c.thread.stats.cores or c.thread.stats.cores[-1] != e.core:
                    c.thread.stats.cores.append(e.core)
            else:
                self.cores[e.core].thread = None
        return bool(evs)

    def _next_time(self, now, next_gov):
        cands = []
        for c in self.cores:
            if c.thread is not None and c.wait is None:
                cands.append(max(c.busy_until, now + 1))
            if c.state.store_buffer and c.port_wait is None:
                cands.append(max(c.port_free, now + 1))
            if c.thread is None and self.sched.queues[c.cid]:
                cands.append(now + 1)
        d = self.mem.dram.next_event(now)
        if d is not None:
            cands.append(max(d, now + 1))
        if next_gov is not None and cands:
            cands.append(next_gov)
        return min(cands) if cands else None

    def run(self) -> RunStats:
        now = 0
        gov_on = any(c.cfg.governor == "ondemand" for c in self.cores)
        next_gov = self.gov_interval if gov_on else None
        limit = self.cfg.deadlock_cycles
        while any(not t.done for t in self.threads.values()):
            while next_gov is not None and next_gov <= now:
                self._governor_tick(next_gov)
                next_gov += self.gov_interval
            progressed = self._dispatch(now)
            for c in self.cores:
                progressed |= self._step_core(c, now)
            if any(c.thread is None and self.sched.queues[c.cid] for c in self.cores):
                progressed |= self._dispatch(now)
            served = self.mem.dram.tick(now)
            if served:
                progressed = True
                for req in served:
                    if req.token is not None:
                        req.token.complete = req.completion
                for c in self.cores:
                    self._settle_core(c)
            if progressed:
                self.last_progress = now
            elif now - self.last_progress > limit:
                raise DeadlockDetected(f"no progress since cycle {self.last_progress}")
            nxt = self._next_time(now, next_gov)
            if nxt is None:
                if all(t.done for t in self.threads.values()):
                    break
                raise DeadlockDetected(f"cycle {now}: unfinished threads but nothing can happen")
            for c in self.cores:
                if c.thread is not None:
                    c.active += nxt - now
            now = nxt
        # write-backs still queued in DRAM drain without extending the run
        t = now
        while self.mem.dram.pending():
            self.mem.dram.tick(t)
            nxt = self.mem.dram.next_event(t)
            t = nxt if nxt is not None and nxt > t else t + 1
        cycles = max((th.stats.cycles for th in self.threads.values()), default=0)
        return self._stats(cycles)

    def _stats(self, cycles) -> RunStats:
        mem = self.mem
        st = RunStats(seed=self.seed, cycles=cycles)
        st.threads = {t: th.stats for t, th in self.threads.items()}
        st.instructions = sum(s.instructions for s in st.threads.values())
        apps = {}
        for s in st.threads.values():
            a = apps.setdefault(s.app, {"instructions": 0, "cycles": 0, "threads": 0})
            a["instructions"] += s.instructions
            a["cycles"] = max(a["cycles"], s.cycles)
            a["threads"] += 1
        for a in apps.values():
            a["ipc"] = a["instructions"] / a["cycles"] if a["cycles"] else 0.0
        st.apps = apps
        st.cache = mem.level_stats()
        st.cache["_llc"] = {
            "fills": mem.llc_fills,
            "back_invalidations": mem.back_invalidations,
            "mshr_allocations": mem.mshr_allocations,
            "mshr_merges": mem.mshr_merges,
            "mshr_stalls": mem.mshr_stalls,
            "upgrades": mem.upgrades,
        }
        fab = mem.fabric
        st.coherence = {k.value: v for k, v in fab.counts.items()}
        st.coherence["total"] = fab.total_messages
        st.coherence["invalidations"] = fab.invalidations
        dram = mem.dram
        served = [r for ch in dram.channels for r in ch.served]
        st.dram = {
            "row_hits": dram.row_hits,
            "row_misses": dram.row_misses,
            "row_conflicts": dram.row_conflicts,
            "reads": sum(r.kind == "Read" for r in served),
            "writes": sum(r.kind == "Write" for r in served),
        }
        st.context_switches = self.sched.switches
        if cycles:
            st.energy_joules, st.average_power_watts = self._energy(cycles)
        if mem.latency.count:
            st.amat_cycles = mem.latency.total / mem.latency.count
        st.events = sorted(self.events, key=lambda line: int(line.split(" ", 1)[0]))
        st.messages = [m.render() for m in fab.log]
        st.commands = [c.render() for c in dram.command_log()]
        st.loads = self.loads
        st.memory = mem
        if self.cfg.value_tracking:
            st.value_mismatches = check_data_values(mem.log, self.cfg.block_size)
        return st


def run(config: SystemConfig, traces, seed: int = 0, app_of: Optional[dict] = None) -> RunStats:
    """Simulate ``traces`` (a flat event list) to completion on ``config``."""
    return Simulator(config, traces, seed, app_of).run()


# --- experiments ------------------------------------------------------------------

def bundle_threads(bundle) -> tuple:
    """Give every app's threads distinct global ids, in app order then local id order.

    Returns ``(events, app_of)``.
    """
    events, app_of = [], {}
    next_id = 0
    for app, evs in enumerate(bundle):
        local = sorted({e.thread_id for e in evs})
        remap = {t: next_id + i for i, t in enumerate(local)}
        next_id += len(local)
        for t in local:
            app_of[remap[t]] = app
        events.extend(TraceEvent(remap[e.thread_id], e.kind, e.address, e.size_bytes, e.value, e.cycles)
                      for e in evs)
    return events, app_of


@dataclass
class ExperimentResult:
    report: MetricReport
    shared: RunStats
    alone: list


def run_experiment(config: SystemConfig, bundle, seed: int = 0) -> ExperimentResult:
    """Run each app alone on the whole machine, then all together; compute slowdowns."""
    cfg = config if config.derived is not None else validate_config(config)
    events, app_of = bundle_threads(bundle)
    shared = run(cfg, events, seed, app_of)
    alone = []
    perfs = []
    for app in range(len(bundle)):
        mine = [e for e in events if app_of[e.thread_id] == app]
        st = run(cfg, mine, seed, {t: a for t, a in app_of.items() if a == app})
        alone.append(st)
        a_alone = st.apps.get(app, {"ipc": 0.0})
        a_shared = shared.apps.get(app, {"ipc": 0.0})
        perfs.append(AppPerf(app, ipc_alone=a_alone["ipc"], ipc_shared=a_shared["ipc"],
                             instructions=a_shared.get("instructions", 0), cycles=a_shared.get("cycles", 0)))
    report = multiprogram_metrics(perfs)
    for p, st in zip(perfs, alone):
        report.extra[("ipc_alone", str(p.app_id))] = p.ipc_alone
        report.extra[("ipc_shared", str(p.app_id))] = p.ipc_shared
        report.extra[("cycles_alone", str(p.app_id))] = st.apps[p.app_id]["cycles"]
        report.extra[("cycles_shared", str(p.app_id))] = p.cycles
    report.energy_joules = shared.energy_joules
    report.average_power_watts = shared.average_power_watts
    return ExperimentResult(report, shared, alone)


# --- litmus programs through the timing model ----------------------------------------

def litmus_trace(prog: LitmusProgram, seed: int = 0, base: int = 0x1000, block_size: int = 64,
                 max_delay: int = 40) -> tuple:
    """Lower a litmus program to a trace; each variable gets its own block.

    Random compute delays (drawn from ``seed``) in front of each instruction
    steer the simulator toward different interleavings. Returns
    ``(events, variable addresses)``.
    """
    rng = random.Random(seed)
    addr = {v: base + i * block_size for i, v in enumerate(prog.variables)}
    events = []
    streams = []
    for tid, code in enumerate(prog.threads):
        evs = []
        for ins in code:
            d = rng.randrange(max_delay + 1)
            if d:
                evs.append(TraceEvent.compute(tid, d))
            if ins.op == "S":
                evs.append(TraceEvent.store(tid, addr[ins.var], 8, ins.value))
            elif ins.op == "L":
                evs.append(TraceEvent.load(tid, addr[ins.var], 8))
            else:
                evs.append(TraceEvent.fence(tid))
        streams.append(evs)
    for evs in streams:
        events.extend(evs)
    return events, addr


def simulate_litmus(prog: LitmusProgram, config: SystemConfig, seed: int = 0):
    """Run ``prog`` on the simulator; return its outcome in enumerator form."""
    events, addr = litmus_trace(prog, seed, block_size=config.block_size)
    st = run(config, events, seed)
    regs = {}
    for tid, code in enumerate(prog.threads):
        values = iter(v for _, v in st.loads.get(tid, []))
        for ins in code:
            if ins.op == "L":
                regs[ins.reg] = next(values)
    reg_items = tuple((r, regs[r]) for r in prog.registers)
    mem_items = tuple((v, st.final_value(addr[v], 8)) for v in prog.variables)
    return (reg_items, mem_items), st
