import random

import pytest

from mcsim.coherence import DIR, CoherenceFabric, CoherenceMessage, MsgKind
from mcsim.config import CacheConfig, CoherenceConfig, SystemConfig, validate_config
from mcsim.hierarchy import MemorySystem


def kinds(txn):
    return [m.kind for m in txn.messages]


def test_mesi_read_unshared_gets_exclusive():
    fab = CoherenceFabric("MESI", "directory", 4)
    txn = fab.core_request(0, "Read", 0x10)
    assert txn.new_state == "E"
    assert fab.directory[0x10].owner == 0
    assert kinds(txn) == [MsgKind.GETS, MsgKind.DATA]


def test_msi_read_unshared_gets_shared():
    fab = CoherenceFabric("MSI", "directory", 4)
    assert fab.core_request(0, "Read", 0x10).new_state == "S"
    assert fab.directory[0x10].owner is None


@pytest.mark.parametrize("transport", ["directory", "snoopy"])
def test_mesi_silent_upgrade(transport):
    fab = CoherenceFabric("MESI", transport, 2)
    fab.core_request(0, "Read", 1)
    before = fab.total_messages
    txn = fab.core_request(0, "Write", 1)
    assert txn.new_state == "M"
    assert txn.messages == []
    assert fab.total_messages == before


def _three_sharers(protocol, transport):
    fab = CoherenceFabric(protocol, transport, 4)
    for c in (0, 1, 2):
        fab.core_request(c, "Read", 5)
    return fab


def test_msi_upgrade_directory_counts():
    fab = _three_sharers("MSI", "directory")
    txn = fab.core_request(0, "Write", 5)
    assert txn.new_state == "M"
    assert kinds(txn).count(MsgKind.INV) == 2
    assert kinds(txn).count(MsgKind.INV_ACK) == 2
    assert kinds(txn)[0] is MsgKind.UPGRADE
    assert sorted(m.dst for m in txn.messages if m.kind is MsgKind.INV) == [1, 2]


def test_msi_upgrade_snoopy_counts():
    fab = _three_sharers("MSI", "snoopy")
    txn = fab.core_request(0, "Write", 5)
    assert kinds(txn) == [MsgKind.UPGRADE, MsgKind.INV_ACK, MsgKind.INV_ACK]
    assert txn.messages[0].dst == "all"


def test_remote_read_of_modified_downgrades_with_writeback():
    fab = CoherenceFabric("MSI", "directory", 2)
    fab.core_request(0, "Write", 3)
    txn = fab.core_request(1, "Read", 3)
    assert fab.state(0, 3) == "S" and fab.state(1, 3) == "S"
    assert txn.data_source == 0 and txn.writeback_from == 0
    assert MsgKind.WRITEBACK in kinds(txn)


def test_snoop_actions():
    fab = CoherenceFabric("MESI", "snoopy", 3)
    fab.core_request(1, "Read", 7)
    fab.core_request(2, "Read", 7)  # both S
    act = fab.remote_snoop(1, CoherenceMessage(MsgKind.GETM, 7, 0, "all"))
    assert act.new_state == "I" and [m.kind for m in act.replies] == [MsgKind.INV_ACK]

    fab2 = CoherenceFabric("MESI", "snoopy", 2)
    fab2.core_request(1, "Write", 7)
    act = fab2.remote_snoop(1, CoherenceMessage(MsgKind.GETS, 7, 0, "all"))
    assert act.new_state == "S" and act.supplies_data

    act = fab2.remote_snoop(0, CoherenceMessage(MsgKind.GETS, 7, 1, "all"))
    assert act.new_state == "I" and act.replies == []


def test_directory_dispatch_targets():
    fab = CoherenceFabric("MSI", "directory", 4)
    fab.core_request(1, "Read", 9)
    fab.core_request(3, "Read", 9)
    out = fab.directory_dispatch(CoherenceMessage(MsgKind.GETM, 9, 0, DIR))
    assert [(m.kind, m.dst) for m in out] == [(MsgKind.INV, 1), (MsgKind.INV, 3)]

    assert fab.directory_dispatch(CoherenceMessage(MsgKind.GETS, 99, 0, DIR)) == []

    fab.core_request(2, "Write", 11)
    out = fab.directory_dispatch(CoherenceMessage(MsgKind.GETS, 11, 0, DIR))
    assert [(m.kind, m.dst) for m in out] == [(MsgKind.GETS, 2)]


def test_evict_modified_sends_writeback_and_clears_directory():
    fab = CoherenceFabric("MESI", "directory", 2)
    fab.core_request(0, "Write", 4)
    msgs = fab.evict(0, 4)
    assert [m.kind for m in msgs] == [MsgKind.WRITEBACK]
    assert 4 not in fab.directory
    fab.core_request(1, "Read", 6)
    assert fab.evict(1, 6) == []


@pytest.mark.parametrize("protocol", ["MSI", "MESI"])
@pytest.mark.parametrize("transport", ["directory", "snoopy"])
def test_random_requests_keep_swmr_and_balance(protocol, transport):
    rng = random.Random(hash((protocol, transport)) & 0xFFFF)
    fab = CoherenceFabric(protocol, transport, 4)
    for _ in range(2000):
        c, b = rng.randrange(4), rng.randrange(3)
        r = rng.random()
        if r < 0.1:
            fab.evict(c, b)
            continue
        txn = fab.core_request(c, "Read" if r < 0.55 else "Write", b)
        fab.check_swmr()
        ks = kinds(txn)
        if transport == "directory":
            assert ks.count(MsgKind.INV) == ks.count(MsgKind.INV_ACK)
        assert ks.count(MsgKind.INV_ACK) == len(txn.invalidated)


# --- MESI against MSI -------------------------------------------------------------------

def _replay(protocol, transport, ops):
    fab = CoherenceFabric(protocol, transport, 4)
    e_forwards = 0
    for c, access, b in ops:
        if access == "Read" and any(s == "E" for k, s in fab.holders(b).items() if k != c):
            e_forwards += 1
        fab.core_request(c, access, b)
    return fab, e_forwards


def _random_ops(seed, n=300):
    rng = random.Random(seed)
    return [(rng.randrange(4), rng.choice(["Read", "Write"]), rng.randrange(4)) for _ in range(n)]


@pytest.mark.parametrize("seed", range(20))
def test_mesi_never_costs_more_on_snoopy(seed):
    ops = _random_ops(seed)
    msi, _ = _replay("MSI", "snoopy", ops)
    mesi, _ = _replay("MESI", "snoopy", ops)
    assert mesi.total_messages <= msi.total_messages


@pytest.mark.parametrize("seed", range(20))
def test_mesi_directory_excess_bounded_by_owner_forwards(seed):
    ops = _random_ops(seed)
    msi, _ = _replay("MSI", "directory", ops)
    mesi, forwards = _replay("MESI", "directory", ops)
    assert mesi.total_messages - msi.total_messages <= forwards


# --- through the memory system with a flat-memory oracle --------------------------------

def system(protocol, transport, cores, inclusion="Inclusive"):
    levels = [
        CacheConfig("L1D", 64 * 2 * 2, 2, 4),
        CacheConfig("L2", 64 * 4 * 2, 4, 10),
        CacheConfig("LLC", 64 * 4 * 2, 4, 20, shared=True, inclusion=inclusion),
    ]
    cfg = SystemConfig(core_count=cores, cache_levels=levels, value_tracking=True,
                       coherence=CoherenceConfig(protocol=protocol, transport=transport))
    return MemorySystem(validate_config(cfg))


@pytest.mark.parametrize("protocol", ["MSI", "MESI"])
@pytest.mark.parametrize("transport", ["directory", "snoopy"])
@pytest.mark.parametrize("inclusion", ["Inclusive", "NonInclusive"])
def test_loads_see_latest_store(protocol, transport, inclusion):
    rng = random.Random(17)
    mem = system(protocol, transport, 3, inclusion)
    flat = {}
    for i in range(1500):
        core = rng.randrange(3)
        addr = rng.randrange(40) * 8
        if rng.random() < 0.5:
            v = rng.randrange(1 << 32)
            mem.access(core, "S", addr, 8, v, i)
            flat[addr] = v
        else:
            res = mem.access(core, "L", addr, 8, 0, i)
            assert res.value == flat.get(addr, 0)
        mem.fabric.check_swmr()


def test_false_sharing_ping_pong_and_padding():
    mem = system("MESI", "directory", 2)
    for i in range(10):
        mem.access(0, "S", 0x0, 8, i, 2 * i)
        mem.access(1, "S", 0x8, 8, i, 2 * i + 1)
    # every store after the first takes ownership away from the other core
    assert mem.fabric.invalidations == 19

    padded = system("MESI", "directory", 2)
    for i in range(10):
        padded.access(0, "S", 0x0, 8, i, 2 * i)
        padded.access(1, "S", 0x40, 8, i, 2 * i + 1)
    assert padded.fabric.invalidations == 0
