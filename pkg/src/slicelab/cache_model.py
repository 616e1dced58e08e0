"""Simulated address translation and a sliced L1/L2/LLC hierarchy.

The hierarchy is the ground truth for every eviction test.  Two testers share
one interface: ``HierarchyTester`` replays accesses through the LRU model,
``CongruenceTester`` answers the same question analytically (valid for
noise-free LRU with the standard traversal) and is much faster for
large generation runs.
"""
from __future__ import annotations

import enum
import json
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError
from .slice_function import (LINE_BITS, LINES_PER_PAGE, PAGE_BITS, SliceFunctionSpec,
                             _span, slice_function)

# Sub-slice selector: one extra XOR over address bits.  The real hash is not
# public; this constant is independent of every shipped slice mask.
DEFAULT_SUBSLICE_MASK = 0x5AD3C90200


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    l1_sets: int
    l1_ways: int
    l2_sets: int
    l2_ways: int
    llc_sets_per_slice: int
    llc_ways: int
    slice_spec: SliceFunctionSpec
    subslices_per_slice: int = 2
    inclusive: bool = True
    subslice_mask: int = DEFAULT_SUBSLICE_MASK
    cores: int = 0
    name: str = ""
    line_size: int = 64
    page_size: int = 4096

    def __post_init__(self):
        for attr in ("l1_sets", "l2_sets", "llc_sets_per_slice"):
            if not _is_pow2(getattr(self, attr)):
                raise ConfigurationError(f"{attr} must be a power of two")
        for attr in ("l1_ways", "l2_ways", "llc_ways"):
            if getattr(self, attr) <= 0:
                raise ConfigurationError(f"{attr} must be positive")
        if self.subslices_per_slice not in (1, 2):
            raise ConfigurationError("subslices_per_slice must be 1 or 2")
        if self.line_size != 64 or self.page_size != 4096:
            raise ConfigurationError("only 64-byte lines and 4 KB pages are modelled")
        if not self.cores:
            object.__setattr__(self, "cores", self.slice_count)

    @property
    def slice_count(self) -> int:
        return self.slice_spec.slice_count

    @property
    def phys_bits(self) -> int:
        return self.slice_spec.phys_bits

    @property
    def llc_lines(self) -> int:
        return self.class_count * self.llc_ways

    @property
    def class_count(self) -> int:
        return self.slice_count * self.subslices_per_slice * self.llc_sets_per_slice

    @property
    def classes_per_offset(self) -> int:
        return self.class_count // LINES_PER_PAGE

    @property
    def l2_groups(self) -> int:
        """L2 sets reachable from one page offset."""
        return max(1, self.l2_sets // LINES_PER_PAGE)

    def with_(self, **kw) -> "CacheConfig":
        return replace(self, **kw)


class CongruenceClass(NamedTuple):
    slice: int
    subslice: int
    set: int


def llc_class(cfg: CacheConfig, p: int) -> CongruenceClass:
    s = cfg.slice_spec(p)
    sub = ((p & cfg.subslice_mask).bit_count() & 1) if cfg.subslices_per_slice == 2 else 0
    return CongruenceClass(s, sub, (p >> LINE_BITS) & (cfg.llc_sets_per_slice - 1))


def class_key(cfg: CacheConfig, c: CongruenceClass) -> int:
    return (c.slice * cfg.subslices_per_slice + c.subslice) * cfg.llc_sets_per_slice + c.set


def class_from_key(cfg: CacheConfig, key: int) -> CongruenceClass:
    s, rest = divmod(int(key), cfg.subslices_per_slice * cfg.llc_sets_per_slice)
    sub, st = divmod(rest, cfg.llc_sets_per_slice)
    return CongruenceClass(s, sub, st)


def class_keys(cfg: CacheConfig, phys) -> np.ndarray:
    """Vectorised ``class_key(llc_class(p))`` over an array of addresses."""
    a = np.asarray(phys, dtype=np.uint64)
    sl = cfg.slice_spec.eval_many(a)
    if cfg.subslices_per_slice == 2:
        sub = np.bitwise_count(a & np.uint64(cfg.subslice_mask)).astype(np.int64) & 1
    else:
        sub = np.zeros(a.shape, dtype=np.int64)
    st = ((a >> np.uint64(LINE_BITS)) & np.uint64(cfg.llc_sets_per_slice - 1)).astype(np.int64)
    return (sl * cfg.subslices_per_slice + sub) * cfg.llc_sets_per_slice + st


def l2_set_index(cfg: CacheConfig, p) -> int | np.ndarray:
    if isinstance(p, (int, np.integer)):
        return (int(p) >> LINE_BITS) & (cfg.l2_sets - 1)
    return ((np.asarray(p, dtype=np.uint64) >> np.uint64(LINE_BITS)) & np.uint64(cfg.l2_sets - 1)).astype(np.int64)


def reachable_classes(cfg: CacheConfig, offset: int) -> set[CongruenceClass]:
    """Exact set of congruence classes reachable by lines at one page offset.

    The XOR-stage output, the sub-slice bit and the upper set-index bits are
    all linear in the frame bits, so the span of their per-bit contributions
    enumerates every reachable combination.
    """
    spec = cfg.slice_spec
    set_bits = cfg.llc_sets_per_slice.bit_length() - 1
    upper_set_bits = max(0, set_bits - (PAGE_BITS - LINE_BITS))
    idx_width = max(1, spec.index_bits)

    def pack(addr: int) -> int:
        sub = (addr & cfg.subslice_mask).bit_count() & 1 if cfg.subslices_per_slice == 2 else 0
        hi = (addr >> PAGE_BITS) & ((1 << upper_set_bits) - 1)
        return spec.index(addr) | sub << idx_width | hi << (idx_width + 1)

    cols = [pack(1 << b) for b in range(PAGE_BITS, cfg.phys_bits)]
    base = (offset & (LINES_PER_PAGE - 1)) << LINE_BITS
    b_idx = spec.index(base)
    b_sub = (base & cfg.subslice_mask).bit_count() & 1 if cfg.subslices_per_slice == 2 else 0
    out = set()
    for v, _ in _span(cols):
        idx = (v & ((1 << idx_width) - 1)) ^ b_idx
        if spec.index_bits == 0:
            idx = 0
        sub = (v >> idx_width & 1) ^ b_sub
        hi = v >> (idx_width + 1)
        st = (offset | hi << (PAGE_BITS - LINE_BITS)) & (cfg.llc_sets_per_slice - 1)
        out.add(CongruenceClass(spec.lookup(idx), sub, st))
    return out


# -- presets ------------------------------------------------------------------

def _processor_records() -> dict[str, dict]:
    with resources.files("slicelab.data").joinpath("processors.json").open() as fh:
        data = json.load(fh)
    return {r["name"]: r for r in data["processors"]}


def preset_names() -> list[str]:
    return list(_processor_records())


def load_preset(name: str, **overrides) -> CacheConfig:
    recs = _processor_records()
    if name not in recs:
        raise ConfigurationError(f"unknown processor preset {name!r}; known: {sorted(recs)}")
    r = recs[name]
    spec = slice_function(r["slice_function"])
    cfg = CacheConfig(l1_sets=r["l1"][0], l1_ways=r["l1"][1], l2_sets=r["l2"][0], l2_ways=r["l2"][1],
                      llc_sets_per_slice=r["llc_per_slice"][0], llc_ways=r["llc_per_slice"][1],
                      slice_spec=spec, inclusive=r["inclusive"], cores=r["cores"], name=name)
    return cfg.with_(**overrides) if overrides else cfg


# -- address translation --------------------------------------------------------

class AddressSpace:
    """Virtual-to-physical page table with uniformly random, distinct frames."""

    def __init__(self, phys_bits: int = 39, seed: int = 0, base_vpn: int = 0x10000):
        self.phys_bits = phys_bits
        self.frame_count = 1 << (phys_bits - PAGE_BITS)
        self.rng = np.random.default_rng(seed)
        self._table: dict[int, int] = {}
        self._used: set[int] = set()
        self._next_vpn = base_vpn

    def __len__(self):
        return len(self._table)

    def _draw_frames(self, n: int) -> list[int]:
        out: list[int] = []
        while len(out) < n:
            for f in self.rng.integers(0, self.frame_count, size=n - len(out)).tolist():
                if f not in self._used:
                    self._used.add(f)
                    out.append(f)
        return out

    def allocate(self, n_pages: int) -> int:
        """Reserve ``n_pages`` contiguous virtual pages; returns the base address."""
        base = self._next_vpn
        self._next_vpn += n_pages
        for vpn, f in zip(range(base, base + n_pages), self._draw_frames(n_pages)):
            self._table[vpn] = f
        return base << PAGE_BITS

    def frame(self, vpn: int) -> int:
        f = self._table.get(vpn)
        if f is None:
            f = self._table[vpn] = self._draw_frames(1)[0]
        return f

    def translate(self, v: int) -> int:
        return self.frame(v >> PAGE_BITS) << PAGE_BITS | (v & ((1 << PAGE_BITS) - 1))

    def translate_many(self, vs) -> np.ndarray:
        vs = np.asarray(vs, dtype=np.int64)
        frames = np.fromiter((self.frame(int(v)) for v in (vs >> PAGE_BITS).ravel()),
                             dtype=np.int64, count=vs.size).reshape(vs.shape)
        return (frames << PAGE_BITS) | (vs & ((1 << PAGE_BITS) - 1))


def translate(space: AddressSpace, v: int) -> int:
    return space.translate(v)


# -- hierarchy ---------------------------------------------------------------------

class HitLevel(enum.IntEnum):
    L1 = 1
    L2 = 2
    LLC = 3
    RAM = 4


class _LRUCache:
    """Set-associative array of line numbers with true-LRU sets."""

    def __init__(self, ways: int):
        self.ways = ways
        self.sets: dict[int, OrderedDict] = {}

    def contains(self, key: int, line: int) -> bool:
        s = self.sets.get(key)
        return s is not None and line in s

    def touch(self, key: int, line: int) -> bool:
        s = self.sets.get(key)
        if s is not None and line in s:
            s.move_to_end(line)
            return True
        return False

    def insert(self, key: int, line: int):
        """Insert as MRU; returns the evicted line or None."""
        s = self.sets.setdefault(key, OrderedDict())
        if line in s:
            s.move_to_end(line)
            return None
        s[line] = None
        if len(s) > self.ways:
            return s.popitem(last=False)[0]
        return None

    def remove(self, key: int, line: int) -> bool:
        s = self.sets.get(key)
        if s is not None and line in s:
            del s[line]
            return True
        return False

    def lines(self, key: int) -> list[int]:
        return list(self.sets.get(key, ()))

    def clear(self):
        self.sets.clear()

    def occupancy(self) -> int:
        return sum(len(s) for s in self.sets.values())


class CacheHierarchy:
    """Single-core L1/L2 plus a sliced LLC.

    Inclusive configs back-invalidate L1/L2 when the LLC evicts.  Non-inclusive
    configs keep an LLC-geometry snoop filter that tracks every cached line and
    back-invalidates on its own evictions; the LLC data array then only holds
    victims from L2.  ``noise`` is the per-access probability of evicting a
    random line from the accessed LLC set.
    """

    def __init__(self, cfg: CacheConfig, noise: float = 0.0, seed: int = 0):
        self.cfg = cfg
        self.noise = noise
        self.rng = np.random.default_rng(seed)
        self.l1 = _LRUCache(cfg.l1_ways)
        self.l2 = _LRUCache(cfg.l2_ways)
        self.llc = _LRUCache(cfg.llc_ways)
        self.sf = None if cfg.inclusive else _LRUCache(cfg.llc_ways)
        self.access_count = 0
        self._class_cache: dict[int, int] = {}

    # set keys
    def _l1(self, line: int) -> int:
        return line & (self.cfg.l1_sets - 1)

    def _l2(self, line: int) -> int:
        return line & (self.cfg.l2_sets - 1)

    def _llc(self, line: int) -> int:
        k = self._class_cache.get(line)
        if k is None:
            k = self._class_cache[line] = class_key(self.cfg, llc_class(self.cfg, line << LINE_BITS))
        return k

    def _drop_private(self, line: int):
        self.l1.remove(self._l1(line), line)
        self.l2.remove(self._l2(line), line)

    def _drop_everywhere(self, line: int):
        self._drop_private(line)
        self.llc.remove(self._llc(line), line)
        if self.sf is not None:
            self.sf.remove(self._llc(line), line)

    def _tracker(self) -> _LRUCache:
        return self.llc if self.sf is None else self.sf

    def _fill_private(self, line: int):
        if self.l1.insert(self._l1(line), line) is not None:
            pass  # L1 victims stay in L2 (L2 includes L1)
        v2 = self.l2.insert(self._l2(line), line)
        if v2 is not None:
            self.l1.remove(self._l1(v2), v2)
            if self.sf is not None:
                self._victim_fill(v2)

    def _victim_fill(self, line: int):
        key = self._llc(line)
        v = self.llc.insert(key, line)
        if v is not None and not self.l2.contains(self._l2(v), v):
            self.sf.remove(self._llc(v), v)

    def access(self, p: int) -> HitLevel:
        self.access_count += 1
        line = p >> LINE_BITS
        if self.l1.touch(self._l1(line), line):
            self.l2.touch(self._l2(line), line)
            return HitLevel.L1
        if self.l2.touch(self._l2(line), line):
            self.l1.insert(self._l1(line), line)
            return HitLevel.L2
        key = self._llc(line)
        in_llc = self.llc.touch(key, line)
        tracker = self._tracker()
        if not (in_llc if self.sf is None else self.sf.touch(key, line)):
            victim = tracker.insert(key, line)
            if victim is not None:
                self._drop_everywhere(victim)
        level = HitLevel.LLC if in_llc else HitLevel.RAM
        self._fill_private(line)
        if self.noise and self.rng.random() < self.noise:
            resident = tracker.lines(key)
            if resident:
                self._drop_everywhere(resident[int(self.rng.integers(len(resident)))])
        return level

    def clflush(self, p: int):
        self._drop_everywhere(p >> LINE_BITS)

    def flush_private(self):
        """Empty L1/L2 (non-inclusive: L2 contents move to the LLC data array)."""
        if self.sf is not None:
            for s in list(self.l2.sets.values()):
                for line in list(s):
                    self._victim_fill(line)
        self.l1.clear()
        self.l2.clear()

    def flush_all(self):
        self.l1.clear()
        self.l2.clear()
        self.llc.clear()
        if self.sf is not None:
            self.sf.clear()

    def level_of(self, p: int) -> HitLevel:
        """Where ``p`` currently resides, without touching replacement state."""
        line = p >> LINE_BITS
        if self.l1.contains(self._l1(line), line):
            return HitLevel.L1
        if self.l2.contains(self._l2(line), line):
            return HitLevel.L2
        if self.llc.contains(self._llc(line), line):
            return HitLevel.LLC
        return HitLevel.RAM

    def check_invariants(self):
        """Raise AssertionError if inclusion or capacity invariants are violated."""
        cfg = self.cfg
        for cache, ways in ((self.l1, cfg.l1_ways), (self.l2, cfg.l2_ways), (self.llc, cfg.llc_ways)):
            assert all(len(s) <= ways for s in cache.sets.values())
        for s in self.l1.sets.values():
            for line in s:
                assert self.l2.contains(self._l2(line), line)
        tracker = self._tracker()
        for cache in (self.l2, self.llc) if self.sf is not None else (self.l2,):
            for s in cache.sets.values():
                for line in s:
                    assert tracker.contains(self._llc(line), line)


def access(h: CacheHierarchy, p: int) -> HitLevel:
    return h.access(p)


def clflush(h: CacheHierarchy, p: int):
    h.clflush(p)


def flush_all(h: CacheHierarchy):
    h.flush_all()


@dataclass(frozen=True)
class TraversalPattern:
    """How an eviction test walks the candidate set.

    ``flush_private`` empties L1/L2 first so that every member reaches the
    LLC on the first pass; this makes outcomes independent of earlier tests.
    """

    passes: int = 2
    order: str = "forward"  # forward | backward | zigzag
    flush_private: bool = True

    def sequence(self, items: Sequence[int]) -> list[int]:
        out: list[int] = []
        for k in range(self.passes):
            if self.order == "forward" or (self.order == "zigzag" and k % 2 == 0):
                out.extend(items)
            else:
                out.extend(reversed(items))
        return out


def test_eviction(h: CacheHierarchy, space: AddressSpace, target: int, members: Sequence[int],
                  traversal: TraversalPattern = TraversalPattern(), level: HitLevel = HitLevel.LLC) -> bool:
    """Access target, traverse the set, re-access target.

    Returns True when the re-access misses ``level`` (LLC: comes from RAM;
    L2: comes from the LLC or RAM).  Occurrences of the target inside
    ``members`` are skipped.
    """
    pt = space.translate(target)
    phys = [space.translate(v) for v in members if v != target]
    if traversal.flush_private:
        h.flush_private()
    h.access(pt)
    for p in traversal.sequence(phys):
        h.access(p)
    return h.access(pt) > level


test_eviction.__test__ = False  # not a pytest test


# -- eviction testers ----------------------------------------------------------------

@dataclass
class TesterStats:
    llc_tests: int = 0
    l2_tests: int = 0


class HierarchyTester:
    """Eviction tests replayed through the simulated hierarchy."""

    def __init__(self, hierarchy: CacheHierarchy, space: AddressSpace,
                 traversal: TraversalPattern = TraversalPattern()):
        self.h = hierarchy
        self.space = space
        self.cfg = hierarchy.cfg
        self.traversal = traversal
        self.stats = TesterStats()

    def evicts(self, target: int, members: Sequence[int]) -> bool:
        self.stats.llc_tests += 1
        return test_eviction(self.h, self.space, target, members, self.traversal, HitLevel.LLC)

    def evicts_l2(self, target: int, members: Sequence[int]) -> bool:
        self.stats.l2_tests += 1
        return test_eviction(self.h, self.space, target, members, self.traversal, HitLevel.L2)


class CongruenceTester:
    """Analytic eviction tests for noise-free LRU.

    With the private caches emptied first, the target leaves the LLC exactly
    when at least ``llc_ways`` distinct other lines of its congruence class are
    accessed after it.  The L2 test additionally fires when ``l2_ways`` distinct
    lines share the target's L2 set.
    """

    def __init__(self, cfg: CacheConfig, space: AddressSpace):
        self.cfg = cfg
        self.space = space
        self.stats = TesterStats()
        self._keys: dict[int, int] = {}

    def key(self, v: int) -> int:
        k = self._keys.get(v)
        if k is None:
            p = self.space.translate(v)
            k = self._keys[v] = class_key(self.cfg, llc_class(self.cfg, p))
        return k

    def prime(self, vs) -> None:
        """Precompute class keys for many addresses at once."""
        vs = [v for v in vs if v not in self._keys]
        if vs:
            keys = class_keys(self.cfg, self.space.translate_many(vs))
            self._keys.update(zip(vs, keys.tolist()))

    def _count(self, target: int, members: Sequence[int], keyf) -> int:
        kt = keyf(target)
        return len({v for v in members if v != target and keyf(v) == kt})

    def evicts(self, target: int, members: Sequence[int]) -> bool:
        self.stats.llc_tests += 1
        return self._count(target, members, self.key) >= self.cfg.llc_ways

    def evicts_l2(self, target: int, members: Sequence[int]) -> bool:
        self.stats.l2_tests += 1
        if self._count(target, members, self.key) >= self.cfg.llc_ways:
            return True
        l2 = lambda v: l2_set_index(self.cfg, self.space.translate(v))
        return self._count(target, members, l2) >= self.cfg.l2_ways
