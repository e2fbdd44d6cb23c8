# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: set-associative LRU tag store and bit-field helpers.

Mirrors :mod:`mcsim._kernels_py` exactly; the two are interchangeable.
"""

from libc.stdlib cimport malloc, free

BACKEND = "cython"


cpdef long long xor_fold(unsigned long long value, int width):
    """XOR-fold ``value`` into ``width`` bits."""
    cdef unsigned long long mask, acc = 0
    if width <= 0:
        return 0
    mask = (1ULL << width) - 1
    while value:
        acc ^= value & mask
        value >>= width
    return <long long>acc


def extract_fields(unsigned long long address, widths):
    """Split ``address`` into consecutive bit fields, low to high."""
    cdef int w
    out = []
    for w in widths:
        if w <= 0:
            out.append(0)
        else:
            out.append(<long long>(address & ((1ULL << w) - 1)))
            address >>= w
    return tuple(out)


cdef class LruSets:
    """Tags and strict-LRU stack positions for ``num_sets`` x ``ways`` lines.

    Position 0 is most recently used; positions in a set always form a
    permutation of ``0..ways-1``. Invalid lines hold tag -1.
    """

    cdef long long *tags
    cdef int *pos
    cdef readonly int num_sets
    cdef readonly int ways

    def __cinit__(self, int num_sets, int ways):
        cdef int s, w
        if num_sets < 1 or ways < 1:
            raise ValueError("num_sets and ways must be positive")
        self.num_sets = num_sets
        self.ways = ways
        self.tags = <long long *>malloc(num_sets * ways * sizeof(long long))
        self.pos = <int *>malloc(num_sets * ways * sizeof(int))
        if self.tags == NULL or self.pos == NULL:
            raise MemoryError()
        for s in range(num_sets):
            for w in range(ways):
                self.tags[s * ways + w] = -1
                self.pos[s * ways + w] = w

    def __dealloc__(self):
        free(self.tags)
        free(self.pos)

    cpdef int find(self, int set_idx, long long tag):
        cdef int w, base = set_idx * self.ways
        for w in range(self.ways):
            if self.tags[base + w] == tag:
                return w
        return -1

    cpdef void touch(self, int set_idx, int way):
        cdef int i, base = set_idx * self.ways
        cdef int p = self.pos[base + way]
        for i in range(self.ways):
            if self.pos[base + i] < p:
                self.pos[base + i] += 1
        self.pos[base + way] = 0

    cpdef int victim(self, int set_idx, unsigned long long allowed_mask):
        cdef int w, best = -1, best_pos = -1, base = set_idx * self.ways
        for w in range(self.ways):
            if not (allowed_mask >> w) & 1:
                continue
            if self.tags[base + w] == -1:
                return w
            if self.pos[base + w] > best_pos:
                best_pos = self.pos[base + w]
                best = w
        return best

    cpdef long long install(self, int set_idx, int way, long long tag):
        cdef int base = set_idx * self.ways
        cdef long long old = self.tags[base + way]
        self.tags[base + way] = tag
        self.touch(set_idx, way)
        return old

    cpdef void invalidate(self, int set_idx, int way):
        cdef int i, base = set_idx * self.ways
        cdef int p = self.pos[base + way]
        for i in range(self.ways):
            if self.pos[base + i] > p:
                self.pos[base + i] -= 1
        self.pos[base + way] = self.ways - 1
        self.tags[base + way] = -1

    cpdef long long tag_at(self, int set_idx, int way):
        return self.tags[set_idx * self.ways + way]

    def positions(self, int set_idx):
        cdef int w, base = set_idx * self.ways
        return [self.pos[base + w] for w in range(self.ways)]


def simulate_lru(addresses, int num_sets, int ways, int offset_bits):
    """Replay a block-address stream through one LRU cache; return (hits, misses)."""
    cdef LruSets sets = LruSets(num_sets, ways)
    cdef long long hits = 0, misses = 0, block
    cdef int s, w
    cdef unsigned long long all_ways = (1ULL << ways) - 1 if ways < 64 else ~0ULL
    for a in addresses:
        block = (<long long>a) >> offset_bits
        s = block % num_sets
        w = sets.find(s, block)
        if w >= 0:
            hits += 1
            sets.touch(s, w)
        else:
            misses += 1
            w = sets.victim(s, all_ways)
            sets.install(s, w, block)
    return hits, misses
