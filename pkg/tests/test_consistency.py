import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcsim.consistency import (
    FENCE,
    LitmusProgram,
    enumerate_sc,
    enumerate_tso,
    enumerate_weak,
    format_outcomes,
    load,
    parse_litmus,
    register_view,
    store,
    verdicts,
)
from mcsim.errors import LitmusSyntaxError, ProgramTooLarge

SB = LitmusProgram.of([store("x", 1), load("y", "r1")], [store("y", 1), load("x", "r2")])
SB_FENCED = LitmusProgram.of([store("x", 1), FENCE, load("y", "r1")], [store("y", 1), FENCE, load("x", "r2")])
MP = LitmusProgram.of([store("x", 1), store("y", 1)], [load("y", "r1"), load("x", "r2")])
MP_FENCED = LitmusProgram.of([store("x", 1), FENCE, store("y", 1)], [load("y", "r1"), FENCE, load("x", "r2")])


def pairs(outcomes):
    return {tuple(v for _, v in regs) for regs in register_view(outcomes)}


# --- independent oracles ----------------------------------------------------------------

def interleave_oracle(threads):
    """Recursive interleaver over program order with a dict memory."""
    results = set()

    def go(pcs, mem, regs):
        finished = True
        for t, code in enumerate(threads):
            if pcs[t] == len(code):
                continue
            finished = False
            op = code[pcs[t]]
            m, r = dict(mem), dict(regs)
            if op.op == "S":
                m[op.var] = op.value
            elif op.op == "L":
                r[op.reg] = m.get(op.var, 0)
            go(pcs[:t] + (pcs[t] + 1,) + pcs[t + 1:], m, r)
        if finished:
            results.add((tuple(sorted(regs.items())), tuple(sorted(mem.items()))))

    go((0,) * len(threads), {}, {})
    return results


def tso_oracle(threads):
    """Per-thread FIFO buffers; each step either issues one instruction or flushes one buffer head."""
    results, seen = set(), set()

    def go(pcs, bufs, mem, regs):
        key = (pcs, bufs, tuple(sorted(mem.items())), tuple(sorted(regs.items())))
        if key in seen:
            return
        seen.add(key)
        moved = False
        for t, code in enumerate(threads):
            if bufs[t]:
                moved = True
                (var, val), rest = bufs[t][0], bufs[t][1:]
                go(pcs, bufs[:t] + (rest,) + bufs[t + 1:], {**mem, var: val}, regs)
            if pcs[t] == len(code):
                continue
            op = code[pcs[t]]
            nxt = pcs[:t] + (pcs[t] + 1,) + pcs[t + 1:]
            if op.op == "F":
                if not bufs[t]:
                    moved = True
                    go(nxt, bufs, mem, regs)
                continue
            moved = True
            if op.op == "S":
                go(nxt, bufs[:t] + (bufs[t] + ((op.var, op.value),),) + bufs[t + 1:], mem, regs)
            else:
                own = [v for var, v in bufs[t] if var == op.var]
                val = own[-1] if own else mem.get(op.var, 0)
                go(nxt, bufs, mem, {**regs, op.reg: val})
        if not moved:
            results.add((tuple(sorted(regs.items())), tuple(sorted(mem.items()))))

    go((0,) * len(threads), ((),) * len(threads), {}, {})
    return results


def normalise(prog, outcomes):
    """Fill in zero-valued variables/registers the oracles never wrote."""
    out = set()
    for regs, mem in outcomes:
        r, m = dict(regs), dict(mem)
        out.add((tuple((k, r.get(k, 0)) for k in prog.registers), tuple((k, m.get(k, 0)) for k in prog.variables)))
    return frozenset(out)


def random_program(rng, threads=None):
    n = threads or rng.randint(1, 3)
    progs, reg = [], 0
    for _ in range(n):
        code = []
        for _ in range(rng.randint(1, 4)):
            r = rng.random()
            var = rng.choice("xyz")
            if r < 0.45:
                code.append(store(var, rng.randint(1, 3)))
            elif r < 0.9:
                reg += 1
                code.append(load(var, f"r{reg}"))
            else:
                code.append(FENCE)
        progs.append(code)
    return LitmusProgram.of(*progs)


# --- examples ---------------------------------------------------------------------------

def test_single_thread_unique():
    prog = LitmusProgram.of([store("x", 1), load("x", "r1")])
    assert enumerate_sc(prog) == frozenset({((("r1", 1),), (("x", 1),))})


def test_sb_under_sc_and_tso():
    assert pairs(enumerate_sc(SB)) == {(0, 1), (1, 0), (1, 1)}
    assert pairs(enumerate_tso(SB)) == {(0, 1), (1, 0), (1, 1), (0, 0)}
    assert (0, 0) not in pairs(enumerate_tso(SB_FENCED))


def test_mp_under_each_model():
    assert (1, 0) not in pairs(enumerate_sc(MP))
    assert (1, 0) not in pairs(enumerate_tso(MP))
    assert (1, 0) in pairs(enumerate_weak(MP))
    assert (1, 0) not in pairs(enumerate_weak(MP_FENCED))


def test_weak_single_thread_matches_sc():
    prog = LitmusProgram.of([store("x", 1), load("y", "r1"), store("y", 2), load("x", "r2")])
    assert enumerate_weak(prog) == enumerate_sc(prog)


def test_weak_keeps_register_dependency():
    # r1 is written twice; the second load must land last
    prog = LitmusProgram.of([load("x", "r1"), load("y", "r1")], [store("y", 5)])
    assert pairs(enumerate_weak(prog)) == {(0,), (5,)}


# --- oracles and properties -------------------------------------------------------------

@pytest.mark.parametrize("seed", range(40))
def test_sc_matches_recursive_interleaver(seed):
    prog = random_program(random.Random(seed))
    assert enumerate_sc(prog) == normalise(prog, interleave_oracle(prog.threads))


@pytest.mark.parametrize("seed", range(40))
def test_tso_matches_store_buffer_oracle(seed):
    prog = random_program(random.Random(1000 + seed))
    assert enumerate_tso(prog) == normalise(prog, tso_oracle(prog.threads))


@pytest.mark.parametrize("seed", range(40))
def test_models_nest(seed):
    prog = random_program(random.Random(2000 + seed))
    sc, tso, weak = enumerate_sc(prog), enumerate_tso(prog), enumerate_weak(prog)
    assert sc and sc <= tso <= weak


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(1, 3), min_size=1, max_size=3), min_size=1, max_size=3))
def test_disjoint_threads_give_one_outcome(values):
    threads = [[store(f"v{t}", v) for v in vals] + [load(f"v{t}", f"r{t}")] for t, vals in enumerate(values)]
    prog = LitmusProgram.of(*threads)
    expected = frozenset({(
        tuple((f"r{t}", vals[-1]) for t, vals in enumerate(values)),
        tuple((f"v{t}", vals[-1]) for t, vals in enumerate(values)),
    )})
    for enum in (enumerate_sc, enumerate_tso, enumerate_weak):
        assert enum(prog) == expected


def test_deterministic():
    for enum in (enumerate_sc, enumerate_tso, enumerate_weak):
        assert enum(MP_FENCED) == enum(MP_FENCED)


def test_program_too_large():
    with pytest.raises(ProgramTooLarge):
        enumerate_sc(LitmusProgram.of(*[[store("x", 1)]] * 5))
    with pytest.raises(ProgramTooLarge):
        enumerate_weak(LitmusProgram.of([store("x", 1)] * 9))


# --- text format ------------------------------------------------------------------------

SB_TEXT = """\
# store buffering
0 S x 1
0 L y r1
1 S y 1
1 L x r2
"""


def test_parse_round_trip():
    assert parse_litmus(SB_TEXT) == SB
    assert parse_litmus("0 S x 1\n0 F\n0 L y r1\n").threads[0][1] == FENCE


@pytest.mark.parametrize("text,line", [("0 S x one\n", 1), ("0 S x 1\nq L y r\n", 2), ("0 X y\n", 1)])
def test_parse_errors_name_line(text, line):
    with pytest.raises(LitmusSyntaxError) as err:
        parse_litmus(text)
    assert err.value.line_no == line


def test_outcome_lines_sorted():
    lines = format_outcomes(enumerate_sc(SB))
    assert lines == sorted(lines)
    assert "r1=0 r2=1 x=1 y=1" in lines


def test_verdict_line():
    v = verdicts({"sc": enumerate_sc(SB), "tso": enumerate_tso(SB), "weak": enumerate_weak(SB)})
    assert "(r1,r2)=(0,0): forbidden under SC, allowed under TSO, allowed under weak" in v
