"""Exhaustive litmus-test outcome enumeration under SC, TSO and weak ordering.

Memory starts zeroed. An outcome is the pair (final registers, final
memory), each a sorted tuple of ``(name, value)`` items.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from mcsim.errors import LitmusSyntaxError, ProgramTooLarge

MAX_THREADS = 4
MAX_INSTRUCTIONS = 8


@dataclass(frozen=True)
class Instr:
    op: str  # "S", "L" or "F"
    var: Optional[str] = None
    value: int = 0
    reg: Optional[str] = None

    def __str__(self):
        if self.op == "S":
            return f"{self.var}={self.value}"
        if self.op == "L":
            return f"{self.reg}={self.var}"
        return "fence"


def store(var, value):
    return Instr("S", var, value)


def load(var, reg):
    return Instr("L", var, reg=reg)


FENCE = Instr("F")


@dataclass(frozen=True)
class LitmusProgram:
    threads: tuple

    @classmethod
    def of(cls, *threads):
        return cls(tuple(tuple(t) for t in threads))

    @property
    def variables(self):
        return sorted({i.var for t in self.threads for i in t if i.var is not None})

    @property
    def registers(self):
        return sorted({i.reg for t in self.threads for i in t if i.reg is not None})

    def check(self):
        if len(self.threads) > MAX_THREADS:
            raise ProgramTooLarge(f"{len(self.threads)} threads (max {MAX_THREADS})")
        for tid, t in enumerate(self.threads):
            if len(t) > MAX_INSTRUCTIONS:
                raise ProgramTooLarge(f"thread {tid} has {len(t)} instructions (max {MAX_INSTRUCTIONS})")
        owner = {}
        for tid, t in enumerate(self.threads):
            for ins in t:
                if ins.reg is not None and owner.setdefault(ins.reg, tid) != tid:
                    raise ValueError(f"register {ins.reg} used by threads {owner[ins.reg]} and {tid}")
        clash = set(self.variables) & set(self.registers)
        if clash:
            raise ValueError(f"names used as both variable and register: {sorted(clash)}")


def parse_litmus(text) -> LitmusProgram:
    """Parse ``<tid> S <var> <int>`` / ``<tid> L <var> <reg>`` / ``<tid> F`` lines."""
    if isinstance(text, str):
        text = text.splitlines()
    threads = {}
    for line_no, line in enumerate(text, 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        tid_tok = parts[0].lstrip("PTpt")
        if not tid_tok.isdigit():
            raise LitmusSyntaxError(line_no, f"bad thread id {parts[0]!r}")
        tid = int(tid_tok)
        if len(parts) < 2:
            raise LitmusSyntaxError(line_no, "missing operation")
        op, args = parts[1].upper(), parts[2:]
        if op == "S" and len(args) == 2:
            try:
                ins = store(args[0], int(args[1]))
            except ValueError:
                raise LitmusSyntaxError(line_no, f"bad store value {args[1]!r}") from None
        elif op == "L" and len(args) == 2:
            ins = load(args[0], args[1])
        elif op == "F" and not args:
            ins = FENCE
        else:
            raise LitmusSyntaxError(line_no, f"malformed instruction {s!r}")
        threads.setdefault(tid, []).append(ins)
    if not threads:
        return LitmusProgram(())
    prog = LitmusProgram(tuple(tuple(threads.get(t, ())) for t in range(max(threads) + 1)))
    try:
        prog.check()
    except ValueError as exc:
        if isinstance(exc, ProgramTooLarge):
            raise
        raise LitmusSyntaxError(0, str(exc)) from None
    return prog


def _indexes(prog):
    vars_ = {v: i for i, v in enumerate(prog.variables)}
    regs = {r: i for i, r in enumerate(prog.registers)}
    return vars_, regs


def _outcome(prog, mem, regs):
    return (tuple(zip(prog.registers, regs)), tuple(zip(prog.variables, mem)))


def _set_at(t, i, v):
    return t[:i] + (v,) + t[i + 1:]


def enumerate_sc(prog: LitmusProgram) -> frozenset:
    """Outcomes over all program-order-preserving interleavings."""
    prog.check()
    vix, rix = _indexes(prog)
    start = ((0,) * len(prog.threads), (0,) * len(vix), (0,) * len(rix))
    seen, stack, out = {start}, [start], set()
    while stack:
        pcs, mem, regs = stack.pop()
        moved = False
        for t, code in enumerate(prog.threads):
            pc = pcs[t]
            if pc == len(code):
                continue
            moved = True
            ins = code[pc]
            nmem, nregs = mem, regs
            if ins.op == "S":
                nmem = _set_at(mem, vix[ins.var], ins.value)
            elif ins.op == "L":
                nregs = _set_at(regs, rix[ins.reg], mem[vix[ins.var]])
            nxt = (_set_at(pcs, t, pc + 1), nmem, nregs)
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
        if not moved:
            out.add(_outcome(prog, mem, regs))
    return frozenset(out)


def enumerate_tso(prog: LitmusProgram) -> frozenset:
    """Outcomes with per-thread FIFO store buffers and store-to-load forwarding."""
    prog.check()
    vix, rix = _indexes(prog)
    n = len(prog.threads)
    start = ((0,) * n, (0,) * len(vix), (0,) * len(rix), ((),) * n)
    seen, stack, out = {start}, [start], set()
    while stack:
        pcs, mem, regs, bufs = stack.pop()
        nexts = []
        for t, code in enumerate(prog.threads):
            buf = bufs[t]
            if buf:
                var, val = buf[0]
                nexts.append((pcs, _set_at(mem, var, val), regs, _set_at(bufs, t, buf[1:])))
            pc = pcs[t]
            if pc == len(code):
                continue
            ins = code[pc]
            npcs = _set_at(pcs, t, pc + 1)
            if ins.op == "S":
                nexts.append((npcs, mem, regs, _set_at(bufs, t, buf + ((vix[ins.var], ins.value),))))
            elif ins.op == "L":
                v = vix[ins.var]
                val = next((x for var, x in reversed(buf) if var == v), mem[v])
                nexts.append((npcs, mem, _set_at(regs, rix[ins.reg], val), bufs))
            elif not buf:
                nexts.append((npcs, mem, regs, bufs))
        if not nexts and all(p == len(c) for p, c in zip(pcs, prog.threads)):
            out.add(_outcome(prog, mem, regs))
        for nxt in nexts:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return frozenset(out)


def _must_precede(a: Instr, b: Instr) -> bool:
    if a.op == "F" or b.op == "F":
        return True
    if a.var == b.var:
        return True
    return a.reg is not None and a.reg == b.reg


def enumerate_weak(prog: LitmusProgram) -> frozenset:
    """Outcomes when each thread may reorder freely between fences.

    Kept in order: accesses to the same variable, writes to the same
    register, and anything relative to a fence.
    """
    prog.check()
    vix, rix = _indexes(prog)
    deps = [
        [sum(1 << j for j in range(i) if _must_precede(code[j], code[i])) for i in range(len(code))]
        for code in prog.threads
    ]
    full = tuple((1 << len(code)) - 1 for code in prog.threads)
    start = ((0,) * len(prog.threads), (0,) * len(vix), (0,) * len(rix))
    seen, stack, out = {start}, [start], set()
    while stack:
        done, mem, regs = stack.pop()
        if done == full:
            out.add(_outcome(prog, mem, regs))
            continue
        for t, code in enumerate(prog.threads):
            mask = done[t]
            for i, ins in enumerate(code):
                if mask >> i & 1 or deps[t][i] & ~mask:
                    continue
                nmem, nregs = mem, regs
                if ins.op == "S":
                    nmem = _set_at(mem, vix[ins.var], ins.value)
                elif ins.op == "L":
                    nregs = _set_at(regs, rix[ins.reg], mem[vix[ins.var]])
                nxt = (_set_at(done, t, mask | 1 << i), nmem, nregs)
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    return frozenset(out)


ENUMERATORS = {"sc": enumerate_sc, "tso": enumerate_tso, "weak": enumerate_weak}


def register_view(outcomes) -> frozenset:
    """Project outcomes onto their register valuations."""
    return frozenset(regs for regs, _ in outcomes)


def format_outcome(outcome) -> str:
    regs, mem = outcome
    return " ".join(f"{k}={v}" for k, v in sorted(regs + mem))


def format_outcomes(outcomes) -> list:
    return sorted(format_outcome(o) for o in outcomes)


def verdicts(sets: dict) -> list:
    """Per register valuation, which models allow it (``sets`` maps model name to outcomes)."""
    views = {m: register_view(s) for m, s in sets.items()}
    every = sorted(set().union(*views.values()))
    lines = []
    for regs in every:
        names = ",".join(k for k, _ in regs)
        vals = ",".join(str(v) for _, v in regs)
        parts = [f"{'allowed' if regs in views[m] else 'forbidden'} under {m.upper() if m != 'weak' else 'weak'}"
                 for m in sets]
        lines.append(f"({names})=({vals}): " + ", ".join(parts))
    return lines
