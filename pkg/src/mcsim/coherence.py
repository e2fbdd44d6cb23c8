"""MSI and MESI coherence over a snoopy bus or a sharer-set directory.

Transactions are atomic: each request runs to completion before the next,
so there are no transient states. Message accounting per request:

directory transport (``dir`` is the home directory next to the LLC slice)
    read miss    GetS c->dir; owner o present: GetS dir->o, Data o->c
                 (+ WritebackData o->dir if o was M); else Data dir->c
    upgrade      Upgrade c->dir; Inv dir->s and InvAck s->c per other sharer
    write miss   GetM c->dir; Inv dir->h and InvAck h->c per holder;
                 Data from the owner if one exists, else Data dir->c
snoopy transport (requests broadcast to ``all``)
    the same, minus the directory hops: one broadcast request, then an
    InvAck per invalidated holder and Data/WritebackData as above.

MESI's write to an Exclusive line and any access hitting a sufficient
state generate no messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

M, E, S, I = "M", "E", "S", "I"

DIR = "dir"
LLC = "llc"
ALL = "all"


class MsgKind(str, Enum):
    GETS = "GetS"
    GETM = "GetM"
    UPGRADE = "Upgrade"
    INV = "Inv"
    INV_ACK = "InvAck"
    DATA = "Data"
    WRITEBACK = "WritebackData"


@dataclass(frozen=True)
class CoherenceMessage:
    kind: MsgKind
    block: int
    src: Union[int, str]
    dst: Union[int, str]
    cycle: int = 0

    def render(self) -> str:
        return f"{self.cycle} {self.kind.value} 0x{self.block:x} {_ep(self.src)} {_ep(self.dst)}"


def _ep(x):
    return f"c{x}" if isinstance(x, int) else x


@dataclass
class DirectoryEntry:
    block: int
    sharers: set = field(default_factory=set)
    owner: Optional[int] = None


@dataclass
class Transaction:
    core: int
    access: str
    block: int
    old_state: str
    new_state: str
    messages: list = field(default_factory=list)
    # "none" (no data moved), "llc", or the supplying core id
    data_source: Union[str, int] = "none"
    invalidated: list = field(default_factory=list)
    downgraded: list = field(default_factory=list)
    writeback_from: Optional[int] = None

    @property
    def forwarded(self) -> bool:
        return isinstance(self.data_source, int) or bool(self.invalidated)


@dataclass
class SnoopAction:
    new_state: str
    replies: list = field(default_factory=list)
    supplies_data: bool = False
    writeback: bool = False


class SwmrViolation(AssertionError):
    pass


class CoherenceFabric:
    def __init__(self, protocol: str = "MESI", transport: str = "directory", num_cores: int = 2):
        if protocol not in ("MSI", "MESI") or transport not in ("snoopy", "directory"):
            raise ValueError(f"unsupported protocol/transport {protocol}/{transport}")
        self.protocol = protocol
        self.transport = transport
        self.num_cores = num_cores
        self.states: dict = {}
        self.directory: dict = {}
        self.log: list = []
        self.counts = {k: 0 for k in MsgKind}

    # -- state queries ------------------------------------------------------

    def state(self, core: int, block: int) -> str:
        return self.states.get(block, {}).get(core, I)

    def holders(self, block: int) -> dict:
        return dict(self.states.get(block, {}))

    def _set(self, core, block, st):
        per = self.states.setdefault(block, {})
        if st == I:
            per.pop(core, None)
            if not per:
                del self.states[block]
        else:
            per[core] = st

    def _sync_directory(self, block):
        per = self.states.get(block)
        if not per:
            self.directory.pop(block, None)
            return
        owner = next((c for c, st in per.items() if st in (M, E)), None)
        self.directory[block] = DirectoryEntry(block, set(per), owner)

    def _emit(self, msgs, cycle):
        out = []
        for m in msgs:
            m = CoherenceMessage(m.kind, m.block, m.src, m.dst, cycle)
            out.append(m)
            self.counts[m.kind] += 1
        self.log.extend(out)
        return out

    @property
    def total_messages(self) -> int:
        return sum(self.counts.values())

    @property
    def invalidations(self) -> int:
        return self.counts[MsgKind.INV_ACK]

    # -- requests -----------------------------------------------------------

    def needs_transaction(self, core: int, access: str, block: int) -> bool:
        st = self.state(core, block)
        if access == "Read":
            return st == I
        return st in (I, S)

    def core_request(self, core: int, access: str, block: int, cycle: int = 0) -> Transaction:
        """Run one atomic request by ``core`` (``access`` is Read or Write)."""
        old = self.state(core, block)
        txn = Transaction(core, access, block, old, old)
        if access == "Read":
            if old != I:
                return txn
            req = CoherenceMessage(MsgKind.GETS, block, core, self._home())
        elif access == "Write":
            if old == M:
                return txn
            if old == E:
                # silent upgrade
                txn.new_state = M
                self._set(core, block, M)
                self._sync_directory(block)
                return txn
            kind = MsgKind.UPGRADE if old == S else MsgKind.GETM
            req = CoherenceMessage(kind, block, core, self._home())
        else:
            raise ValueError(f"access must be Read or Write, got {access!r}")

        msgs = [req]
        if self.transport == "directory":
            follow = self.directory_dispatch(req)
            msgs.extend(follow)
            targets = [(m.dst, m) for m in follow]
        else:
            targets = [(c, req) for c in range(self.num_cores) if c != core]

        supplied = False
        for target, msg in targets:
            act = self.remote_snoop(target, msg, requester=core)
            if act.new_state != self.state(target, block):
                if act.new_state == I:
                    txn.invalidated.append(target)
                else:
                    txn.downgraded.append(target)
            self._set(target, block, act.new_state)
            msgs.extend(act.replies)
            if act.supplies_data:
                supplied = True
                txn.data_source = target
            if act.writeback:
                txn.writeback_from = target

        if req.kind is MsgKind.UPGRADE:
            new = M
        elif not supplied:
            msgs.append(CoherenceMessage(MsgKind.DATA, block, self._home_data(), core))
            txn.data_source = LLC
            if req.kind is MsgKind.GETM:
                new = M
            elif self.protocol == "MESI" and not self.states.get(block):
                new = E
            else:
                new = S
        else:
            new = M if req.kind is MsgKind.GETM else S
        self._set(core, block, new)
        self._sync_directory(block)
        txn.new_state = new
        txn.messages = self._emit(msgs, cycle)
        return txn

    def _home(self):
        return DIR if self.transport == "directory" else ALL

    def _home_data(self):
        return DIR if self.transport == "directory" else LLC

    def remote_snoop(self, core: int, msg: CoherenceMessage, requester: Optional[int] = None) -> SnoopAction:
        """Reaction of ``core`` to a bus broadcast or a directory follow-up.

        Only computes the action; the caller applies ``new_state``.
        """
        st = self.state(core, msg.block)
        req = msg.src if requester is None else requester
        b = msg.block
        if st == I or core == req:
            return SnoopAction(st)
        if msg.kind is MsgKind.GETS:
            if st == M:
                return SnoopAction(S, [CoherenceMessage(MsgKind.DATA, b, core, req),
                                       CoherenceMessage(MsgKind.WRITEBACK, b, core, self._home_data())],
                                   supplies_data=True, writeback=True)
            if st == E:
                return SnoopAction(S, [CoherenceMessage(MsgKind.DATA, b, core, req)], supplies_data=True)
            return SnoopAction(S)
        if msg.kind in (MsgKind.GETM, MsgKind.UPGRADE, MsgKind.INV):
            replies = [CoherenceMessage(MsgKind.INV_ACK, b, core, req)]
            owner = st in (M, E)
            if owner and msg.kind is not MsgKind.UPGRADE:
                replies.insert(0, CoherenceMessage(MsgKind.DATA, b, core, req))
            return SnoopAction(I, replies, supplies_data=owner and msg.kind is not MsgKind.UPGRADE)
        return SnoopAction(st)

    def directory_dispatch(self, msg: CoherenceMessage) -> list:
        """Targeted follow-ups for a request arriving at the directory."""
        entry = self.directory.get(msg.block)
        if entry is None:
            return []
        req = msg.src
        if msg.kind is MsgKind.GETS:
            if entry.owner is not None and entry.owner != req:
                return [CoherenceMessage(MsgKind.GETS, msg.block, DIR, entry.owner)]
            return []
        return [CoherenceMessage(MsgKind.INV, msg.block, DIR, c) for c in sorted(entry.sharers) if c != req]

    # -- evictions ----------------------------------------------------------

    def evict(self, core: int, block: int, cycle: int = 0) -> list:
        """Private copy of ``block`` leaves ``core``; only M copies send data."""
        st = self.state(core, block)
        if st == I:
            return []
        self._set(core, block, I)
        self._sync_directory(block)
        if st == M:
            return self._emit([CoherenceMessage(MsgKind.WRITEBACK, block, core, self._home_data())], cycle)
        return []

    def back_invalidate(self, block: int, cycle: int = 0):
        """Invalidate every private copy of ``block`` (inclusive LLC eviction).

        Returns ``(cores, dirty_owner, messages)``.
        """
        per = self.holders(block)
        if not per:
            return [], None, []
        msgs = []
        if self.transport == "snoopy":
            msgs.append(CoherenceMessage(MsgKind.INV, block, LLC, ALL))
        dirty = None
        for c in sorted(per):
            if self.transport == "directory":
                msgs.append(CoherenceMessage(MsgKind.INV, block, DIR, c))
            msgs.append(CoherenceMessage(MsgKind.INV_ACK, block, c, self._home_data()))
            if per[c] == M:
                dirty = c
                msgs.append(CoherenceMessage(MsgKind.WRITEBACK, block, c, self._home_data()))
            self._set(c, block, I)
        self._sync_directory(block)
        return sorted(per), dirty, self._emit(msgs, cycle)

    # -- invariants ---------------------------------------------------------

    def check_swmr(self, block: Optional[int] = None):
        blocks = [block] if block is not None else list(self.states)
        for b in blocks:
            per = self.states.get(b, {})
            exclusive = [c for c, st in per.items() if st in (M, E)]
            if exclusive and len(per) > 1:
                raise SwmrViolation(f"block 0x{b:x}: exclusive holder {exclusive} with states {per}")
            if self.protocol == "MSI" and E in per.values():
                raise SwmrViolation(f"block 0x{b:x}: E state under MSI")
            if self.transport == "directory" and per:
                entry = self.directory.get(b)
                if entry is None or entry.sharers != set(per):
                    raise SwmrViolation(f"block 0x{b:x}: directory out of sync")
