"""Pure-Python fallback for the compiled kernels in ``_kernels.pyx``."""

BACKEND = "python"


def xor_fold(value, width):
    """XOR-fold ``value`` into ``width`` bits."""
    if width <= 0:
        return 0
    mask = (1 << width) - 1
    acc = 0
    while value:
        acc ^= value & mask
        value >>= width
    return acc


def extract_fields(address, widths):
    """Split ``address`` into consecutive bit fields, low to high."""
    out = []
    for w in widths:
        if w <= 0:
            out.append(0)
        else:
            out.append(address & ((1 << w) - 1))
            address >>= w
    return tuple(out)


class LruSets:
    """Tags and strict-LRU stack positions for ``num_sets`` x ``ways`` lines.

    Position 0 is most recently used; positions in a set always form a
    permutation of ``0..ways-1``. Invalid lines hold tag -1.
    """

    __slots__ = ("num_sets", "ways", "_tags", "_pos")

    def __init__(self, num_sets, ways):
        if num_sets < 1 or ways < 1:
            raise ValueError("num_sets and ways must be positive")
        self.num_sets = num_sets
        self.ways = ways
        self._tags = [[-1] * ways for _ in range(num_sets)]
        self._pos = [list(range(ways)) for _ in range(num_sets)]

    def find(self, set_idx, tag):
        try:
            return self._tags[set_idx].index(tag)
        except ValueError:
            return -1

    def touch(self, set_idx, way):
        pos = self._pos[set_idx]
        p = pos[way]
        for i in range(self.ways):
            if pos[i] < p:
                pos[i] += 1
        pos[way] = 0

    def victim(self, set_idx, allowed_mask):
        tags = self._tags[set_idx]
        pos = self._pos[set_idx]
        best, best_pos = -1, -1
        for w in range(self.ways):
            if not (allowed_mask >> w) & 1:
                continue
            if tags[w] == -1:
                return w
            if pos[w] > best_pos:
                best_pos = pos[w]
                best = w
        return best

    def install(self, set_idx, way, tag):
        old = self._tags[set_idx][way]
        self._tags[set_idx][way] = tag
        self.touch(set_idx, way)
        return old

    def invalidate(self, set_idx, way):
        pos = self._pos[set_idx]
        p = pos[way]
        for i in range(self.ways):
            if pos[i] > p:
                pos[i] -= 1
        pos[way] = self.ways - 1
        self._tags[set_idx][way] = -1

    def tag_at(self, set_idx, way):
        return self._tags[set_idx][way]

    def positions(self, set_idx):
        return list(self._pos[set_idx])


def simulate_lru(addresses, num_sets, ways, offset_bits):
    """Replay a block-address stream through one LRU cache; return (hits, misses)."""
    sets = LruSets(num_sets, ways)
    all_ways = (1 << ways) - 1
    hits = misses = 0
    for a in addresses:
        block = a >> offset_bits
        s = block % num_sets
        w = sets.find(s, block)
        if w >= 0:
            hits += 1
            sets.touch(s, w)
        else:
            misses += 1
            sets.install(s, sets.victim(s, all_ways), block)
    return hits, misses
