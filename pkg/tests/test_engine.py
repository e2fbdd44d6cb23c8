import pytest

from mcsim.config import CoreConfig, OsConfig, SystemConfig, validate_config
from mcsim.consistency import (
    FENCE,
    LitmusProgram,
    enumerate_sc,
    enumerate_tso,
    load,
    store,
)
from mcsim.engine import (
    SchedulerState,
    bundle_threads,
    os_schedule_tick,
    run,
    run_experiment,
    simulate_litmus,
)
from mcsim.errors import UnknownThread, UnschedulableThread
from mcsim.trace import TraceEvent, generate_trace


def cfg(cores=1, mode="SC", sb=0, **kw):
    per_core = [CoreConfig(store_buffer_depth=sb, consistency_mode=mode) for _ in range(cores)]
    return validate_config(SystemConfig(core_count=cores, per_core=per_core, **kw))


def compute_thread(tid, chunks, size=100):
    return [TraceEvent.compute(tid, size) for _ in range(chunks)]


def test_empty_trace_is_all_zero():
    st = run(cfg(), [])
    assert (st.cycles, st.instructions, st.context_switches) == (0, 0, 0)
    assert st.energy_joules == 0.0


def test_hits_cost_l1_latency_after_cold_fill():
    one = run(cfg(), [TraceEvent.load(0, 0x40)])
    eleven = run(cfg(), [TraceEvent.load(0, 0x40)] * 11)
    assert eleven.cycles == one.cycles + 10 * 4
    assert eleven.cache["L1D"]["hits"] == 10 and eleven.cache["L1D"]["misses"] == 1


def test_compute_only_ipc():
    st = run(cfg(), compute_thread(0, 5, 20))
    assert st.cycles == 100 and st.instructions == 5


def test_run_is_deterministic():
    trace = generate_trace("RandomUniform", {"threads": 2, "events": 300, "footprint_blocks": 256}, seed=4)
    a = run(cfg(2, value_tracking=True), trace, seed=4)
    b = run(cfg(2, value_tracking=True), trace, seed=4)
    assert a.to_json() == b.to_json()
    assert a.events == b.events and a.messages == b.messages and a.commands == b.commands


def test_instructions_count_consumed_events():
    trace = generate_trace("RandomUniform", {"threads": 2, "events": 200, "footprint_blocks": 64,
                                             "compute_fraction": 0.2}, seed=1)
    st = run(cfg(2), trace)
    assert st.instructions == len(trace)
    # no store buffer: every memory event reaches L1D exactly once
    l1 = st.cache["L1D"]
    assert l1["hits"] + l1["misses"] == sum(e.is_memory for e in trace)
    assert st.cache["L2"]["hits"] + st.cache["L2"]["misses"] == l1["misses"]


# --- scheduler ----------------------------------------------------------------------------

def _dispatches(st):
    out = []
    for line in st.events:
        parts = line.split()
        if parts[1] == "os" and parts[2] == "dispatch":
            out.append((int(parts[0]), parts[3], parts[4], int(parts[5].split("=")[1])))
    return out


def test_two_threads_two_cores_never_switch():
    trace = compute_thread(0, 30) + compute_thread(1, 30)
    st = run(cfg(2), trace)
    assert st.context_switches == 0
    assert st.threads[0].cores == [0] and st.threads[1].cores == [1]


def test_round_robin_windows_on_one_core():
    trace = compute_thread(0, 30) + compute_thread(1, 30)
    st = run(cfg(1, os=OsConfig(quantum_cycles=1000, context_switch_cycles=50)), trace)
    # hand schedule: 1000-cycle windows separated by 50-cycle switches
    assert _dispatches(st) == [
        (0, "t0", "c0", 0),
        (1000, "t1", "c0", 50),
        (2050, "t0", "c0", 50),
        (3100, "t1", "c0", 50),
        (4150, "t0", "c0", 50),
        (5200, "t1", "c0", 50),
    ]
    assert st.threads[0].cycles == 5200
    assert st.cycles == 6250
    assert st.context_switches == 5


def test_pinned_thread_waits_for_its_core():
    trace = compute_thread(0, 20) + compute_thread(1, 20)
    st = run(cfg(2, os=OsConfig(quantum_cycles=500, context_switch_cycles=10, affinity={0: [1], 1: [1]})), trace)
    assert st.threads[0].cores == [1] and st.threads[1].cores == [1]
    assert all(c == "c1" for _, _, c, _ in _dispatches(st))
    assert st.context_switches > 0


def test_scheduler_state_rules():
    state = SchedulerState(core_count=2, affinity={0: [7]})
    with pytest.raises(UnschedulableThread):
        state.place([0])
    state = SchedulerState(core_count=1, quantum_cycles=10, context_switch_cycles=3)
    state.place([0, 1])
    first = os_schedule_tick(state, 0)
    assert [(e.kind, e.thread, e.cost) for e in first] == [("dispatch", 0, 0)]
    # not at an instruction boundary: no preemption even after the quantum
    assert os_schedule_tick(state, 20) == []
    ev = os_schedule_tick(state, 20, at_boundary={0})
    assert [(e.kind, e.thread, e.cost) for e in ev] == [("preempt", 0, 0), ("dispatch", 1, 3)]


def test_unknown_thread():
    with pytest.raises(UnknownThread):
        run(cfg(), compute_thread(0, 1) + compute_thread(1, 1), app_of={0: 0})
    with pytest.raises(UnknownThread):
        run(cfg(), [TraceEvent.compute(-1, 5)])


# --- experiments --------------------------------------------------------------------------

def test_single_app_has_unit_slowdown():
    app = generate_trace("RandomUniform", {"threads": 1, "events": 200}, seed=2)
    rep = run_experiment(cfg(2), [app]).report
    assert rep.slowdowns == {0: 1.0}
    assert (rep.weighted_speedup, rep.fairness) == (1.0, 1.0)


def dram_heavy(seed):
    # every load touches a fresh block, so each one goes to DRAM
    return generate_trace("Streaming", {"blocks": 400, "start": seed << 24})


def test_dram_heavy_pair_slows_both():
    rep = run_experiment(cfg(2), [dram_heavy(1), dram_heavy(2)]).report
    assert rep.slowdowns[0] > 1 and rep.slowdowns[1] > 1


def test_repeats_are_identical():
    bundle = [dram_heavy(1), dram_heavy(2)]
    reports = [run_experiment(cfg(2), bundle, seed=3).report.to_csv() for _ in range(3)]
    assert reports[0] == reports[1] == reports[2]


def test_bundle_threads_renumbers():
    a = compute_thread(0, 1) + compute_thread(1, 1)
    b = compute_thread(0, 1)
    events, app_of = bundle_threads([a, b])
    assert sorted({e.thread_id for e in events}) == [0, 1, 2]
    assert app_of == {0: 0, 1: 0, 2: 1}


# --- ordering through the timing model ----------------------------------------------------

# The first store miss holds the L1 port, so the second store stays buffered
# while the load behind it tries to issue. Loads and stores use distinct banks.
TWO_STORES = [TraceEvent.store(0, 0x0, 8, 1), TraceEvent.store(0, 0x40, 8, 2)]
LOAD_THEN_WORK = [TraceEvent.load(0, 0x80), TraceEvent.compute(0, 500)]


def test_sc_load_waits_for_buffered_store():
    trace = TWO_STORES + LOAD_THEN_WORK
    sc = run(cfg(1, "SC", sb=4), trace)
    tso = run(cfg(1, "TSO", sb=4), trace)
    assert sc.cycles > tso.cycles
    assert sc.threads[0].stall_cycles > tso.threads[0].stall_cycles


def test_fence_waits_for_drain():
    plain = TWO_STORES + LOAD_THEN_WORK
    fenced = TWO_STORES + [TraceEvent.fence(0)] + LOAD_THEN_WORK
    assert run(cfg(1, "TSO", sb=4), fenced).cycles > run(cfg(1, "TSO", sb=4), plain).cycles


def test_tso_forwarding_returns_own_store():
    st = run(cfg(1, "TSO", sb=4), [TraceEvent.store(0, 0x80, 8, 42), TraceEvent.load(0, 0x80)])
    assert [v for _, v in st.loads[0]] == [42]


@pytest.mark.parametrize("protocol", ["MSI", "MESI"])
@pytest.mark.parametrize("transport", ["directory", "snoopy"])
def test_value_oracle_in_full_runs(protocol, transport):
    from mcsim.config import CoherenceConfig

    trace = generate_trace("RandomUniform", {"threads": 3, "events": 300, "footprint_blocks": 6}, seed=9)
    st = run(cfg(3, value_tracking=True, coherence=CoherenceConfig(protocol=protocol, transport=transport)), trace)
    assert st.value_mismatches == []


SB = LitmusProgram.of([store("x", 1), load("y", "r1")], [store("y", 1), load("x", "r2")])
MP = LitmusProgram.of([store("x", 1), store("y", 1)], [load("y", "r1"), load("x", "r2")])
IRIW_LIKE = LitmusProgram.of([store("x", 1), FENCE, load("y", "r1")], [store("y", 2), load("x", "r2")],
                             [load("x", "r3"), load("y", "r4")])


@pytest.mark.parametrize("prog", [SB, MP, IRIW_LIKE], ids=["sb", "mp", "three"])
def test_simulated_outcomes_are_enumerated(prog):
    n = len(prog.threads)
    for seed in range(8):
        sc, _ = simulate_litmus(prog, cfg(n, "SC", sb=4, value_tracking=True), seed)
        assert sc in enumerate_sc(prog)
        tso, _ = simulate_litmus(prog, cfg(n, "TSO", sb=4, value_tracking=True), seed)
        assert tso in enumerate_tso(prog)


# SB with a leading store to a private variable: its miss keeps the port busy,
# so the store to the shared variable is still buffered when the load issues.
SB_BUSY_PORT = LitmusProgram.of([store("a", 1), store("x", 1), load("y", "r1")],
                                [store("b", 1), store("y", 1), load("x", "r2")])


def _sb_pairs(mode):
    out = set()
    for s in range(20):
        (regs, _), _ = simulate_litmus(SB_BUSY_PORT, cfg(2, mode, sb=4, value_tracking=True), s)
        out.add(tuple(v for _, v in regs))
    return out


def test_tso_sim_shows_store_buffering_and_sc_does_not():
    assert (0, 0) in _sb_pairs("TSO")
    assert (0, 0) not in _sb_pairs("SC")
