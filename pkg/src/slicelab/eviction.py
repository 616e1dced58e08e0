"""Slice-aware LLC eviction-set generation.

Pipeline per page offset: candidates (one line per page) are bucketed by
their L2 set group and predicted slice; each bucket holds only a couple of
congruence classes, so finding a fresh target needs one or two eviction
tests and group testing starts from a small pool.  Every conventionally
built set is mirrored to the other offsets of its pages.  Mirrors are
always valid for linear slice functions; for non-linear ones a mirror is
kept only when all its members are predicted to share one slice there.
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from typing import Callable, Iterable, Sequence

import numpy as np

from .cache_model import (AddressSpace, CacheConfig, CacheHierarchy, CongruenceClass, CongruenceTester,
                          HierarchyTester, class_from_key, class_keys, llc_class)
from .classifier import (ClassifierConfig, ProfilePredictor, SliceProbe, TruthPredictor, bayesian_page,
                         build_profile, determine_compare_set, estimate_confusion)
from .errors import (AmbiguousCompareSetError, ClassificationError, ConfigurationError, IterationBudgetError,
                     MissingMappingError, PoolExhaustedError, ReductionError)
from .slice_function import LINE_BITS, LINES_PER_PAGE, PAGE_BITS, enumerate_page_mappings
from .timing import LatencyModel, TimingOracle
from .tree import build_decision_tree, classify_page_tree

CONVENTIONAL = "conventional"
MIRROR = "mirror"
COLLECTION_CSV_HEADER = ("offset", "predicted_slice", "l2_set", "ground_truth_slice",
                         "ground_truth_subslice", "ground_truth_set", "member_count", "via")


@dataclass
class CandidateSet:
    addrs: list[int]
    offset: int
    l2_filtered: bool = False
    slice_filtered: bool = False

    def __post_init__(self):
        mask = (1 << PAGE_BITS) - 1
        if any((a & mask) >> LINE_BITS != self.offset for a in self.addrs):
            raise ConfigurationError("candidates must share one page offset")

    def __len__(self):
        return len(self.addrs)


@dataclass
class EvictionSet:
    addrs: tuple[int, ...]
    offset: int
    l2_group: int = -1
    predicted_slice: int | None = None
    via: str = CONVENTIONAL
    tag: CongruenceClass | None = None

    @property
    def size(self) -> int:
        return len(self.addrs)

    def pages(self) -> tuple[int, ...]:
        return tuple(a >> PAGE_BITS << PAGE_BITS for a in self.addrs)

    def mirror(self, offset: int, via: str = MIRROR) -> "EvictionSet":
        delta = (offset - self.offset) << LINE_BITS
        return EvictionSet(tuple(a + delta for a in self.addrs), offset, self.l2_group, None, via)


# -- group testing ----------------------------------------------------------------

@dataclass
class ReduceStats:
    rounds: int = 0
    backtracks: int = 0


def group_test_reduce(tester, candidates: Sequence[int], target: int, ways: int,
                      rng: np.random.Generator | None = None, max_rounds: int = 2000,
                      verify_votes: int = 1, stats: ReduceStats | None = None,
                      evicts: Callable | None = None) -> list[int]:
    """Shrink an evicting pool to ``ways`` addresses by (ways+1)-group testing.

    Each round splits the pool into ``ways + 1`` random groups and drops the
    first group whose removal keeps the target evicted (early termination).
    A round where nothing can be dropped means a noisy test misled an earlier
    round, so the pool backtracks one step.  The result is verified with
    ``verify_votes`` tests (majority) before it is returned.
    """
    rng = rng or np.random.default_rng(0)
    evicts = evicts or tester.evicts
    stats = stats if stats is not None else ReduceStats()
    pool = [a for a in dict.fromkeys(candidates) if a != target]
    if len(pool) < ways or not evicts(target, pool):
        raise ReductionError("candidate pool does not evict the target")
    history: list[list[int]] = []
    rounds = 0
    while True:
        while len(pool) > ways:
            stats.rounds += 1
            rounds += 1
            if rounds > max_rounds:
                raise IterationBudgetError(f"group testing exceeded {max_rounds} rounds")
            order = rng.permutation(len(pool))
            n_groups = min(ways + 1, len(pool))
            groups = [order[g::n_groups] for g in range(n_groups)]
            for gi in rng.permutation(n_groups):
                drop = set(groups[gi].tolist())
                rest = [a for i, a in enumerate(pool) if i not in drop]
                if len(rest) >= ways and evicts(target, rest):
                    history.append(pool)
                    pool = rest
                    break
            else:
                if not history:
                    raise ReductionError("no group can be removed from the pool")
                stats.backtracks += 1
                pool = history.pop()
        votes = sum(bool(evicts(target, pool)) for _ in range(verify_votes))
        if 2 * votes > verify_votes:
            return pool
        if not history:
            raise ReductionError("reduced set fails verification")
        stats.backtracks += 1
        pool = history.pop()
        stats.rounds += 1
        rounds += 1
        if rounds > max_rounds:
            raise IterationBudgetError(f"group testing exceeded {max_rounds} rounds")


# -- filters ------------------------------------------------------------------------

def generate_candidates(space: AddressSpace, cfg: CacheConfig, size_factor: float = 3.0,
                        offset: int = 0) -> CandidateSet:
    """One candidate line per freshly allocated page; pool spans ``size_factor`` x the LLC."""
    n_pages = int(round(size_factor * cfg.llc_lines / LINES_PER_PAGE))
    base = space.allocate(n_pages)
    return CandidateSet([base + (i << PAGE_BITS) + (offset << LINE_BITS) for i in range(n_pages)], offset)


def build_l2_eviction_sets(tester, cfg: CacheConfig, candidates: Sequence[int],
                           rng: np.random.Generator | None = None, stats: ReduceStats | None = None) -> list[EvictionSet]:
    """Minimal L2 eviction sets, one per L2 set reachable from the candidates' offset."""
    rng = rng or np.random.default_rng(0)
    want = cfg.l2_groups
    found: list[EvictionSet] = []
    used: set[int] = set()
    offset = (candidates[0] >> LINE_BITS) & (LINES_PER_PAGE - 1) if candidates else 0
    for t in candidates:
        if len(found) == want:
            break
        if t in used or any(tester.evicts_l2(t, s.addrs) for s in found):
            continue
        pool = [a for a in candidates if a != t and a not in used]
        try:
            members = group_test_reduce(tester, pool, t, cfg.l2_ways, rng, stats=stats, evicts=tester.evicts_l2)
        except ReductionError:
            continue
        used.update(members)
        found.append(EvictionSet(tuple(members), offset, len(found)))
    if len(found) < want:
        raise PoolExhaustedError(f"found {len(found)} of {want} L2 eviction sets")
    return found


def l2_group_of(tester, target: int, l2_sets: Sequence[EvictionSet]) -> int:
    """Index of the L2 eviction set that evicts ``target``; -1 if none does."""
    for i, s in enumerate(l2_sets):
        if target in s.addrs or tester.evicts_l2(target, s.addrs):
            return i
    return -1


def l2_filter(tester, candidates: CandidateSet, target: int, l2_sets: Sequence[EvictionSet]) -> CandidateSet:
    g = l2_group_of(tester, target, l2_sets)
    keep = [a for a in candidates.addrs if a == target or l2_group_of(tester, a, l2_sets) == g]
    return CandidateSet(keep, candidates.offset, True, candidates.slice_filtered)


def slice_filter(candidates: CandidateSet, target: int, predicted_slice: Callable[[int], int]) -> CandidateSet:
    s = predicted_slice(target)
    keep = [a for a in candidates.addrs if predicted_slice(a) == s]
    return CandidateSet(keep, candidates.offset, candidates.l2_filtered, True)


# -- propagation ------------------------------------------------------------------------

def propagate_linear(es: EvictionSet) -> list[EvictionSet]:
    """Mirror a set to all 64 offsets (index = offset; the source offset maps to itself)."""
    return [es if o == es.offset else es.mirror(o) for o in range(LINES_PER_PAGE)]


def valid_mirror_offsets(page_labels: np.ndarray) -> np.ndarray:
    """Offsets where every member page predicts the same slice (rows = member pages)."""
    return np.flatnonzero(np.all(page_labels == page_labels[0], axis=0))


def propagate_nonlinear(es: EvictionSet, page_mappings) -> tuple[list[EvictionSet], list[int]]:
    """Mirrors whose members share one predicted slice, and the offsets that need a conventional build.

    ``page_mappings`` maps a page address to its 64 predicted slices.
    """
    try:
        rows = np.array([page_mappings[p] for p in es.pages()])
    except KeyError as exc:
        raise MissingMappingError(f"no slice mapping for page {exc.args[0]:#x}") from None
    ok = set(valid_mirror_offsets(rows).tolist())
    mirrors, flagged = [], []
    for o in range(LINES_PER_PAGE):
        if o == es.offset:
            continue
        if o in ok:
            m = es.mirror(o)
            m.predicted_slice = int(rows[0, o])
            mirrors.append(m)
        else:
            flagged.append(o)
    return mirrors, flagged


# -- collection ----------------------------------------------------------------------------

@dataclass
class GenerationStats:
    targeted: int = 0
    found: int = 0
    duplicates: int = 0
    missing: int = 0
    coverage: float = 0.0
    sets: int = 0
    conventional: int = 0
    mirrored: int = 0
    mirror_duplicates: int = 0
    mirror_invalid: int = 0
    conventional_fraction: float = 0.0
    unsound: int = 0
    llc_tests: int = 0
    l2_tests: int = 0
    eviction_tests: int = 0
    slice_predictions: int = 0
    comparator_calls: int = 0
    group_rounds: int = 0
    backtracks: int = 0
    reduce_failures: int = 0
    pages: int = 0
    topup_pages: int = 0
    unclassified_pages: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvictionSetCollection:
    cfg: CacheConfig
    sets: dict[tuple[int, int, int], list[EvictionSet]] = field(default_factory=dict)
    stats: GenerationStats = field(default_factory=GenerationStats)
    page_labels: dict[int, np.ndarray] = field(default_factory=dict)
    page_groups: dict[int, int] = field(default_factory=dict)
    offsets: tuple[int, ...] = ()
    space: AddressSpace | None = None

    def add(self, es: EvictionSet):
        key = (es.offset, -1 if es.predicted_slice is None else es.predicted_slice, es.l2_group)
        self.sets.setdefault(key, []).append(es)

    def all_sets(self) -> list[EvictionSet]:
        return [s for k in sorted(self.sets) for s in self.sets[k]]

    def at_offset(self, offset: int) -> list[EvictionSet]:
        return [s for k in sorted(self.sets) if k[0] == offset for s in self.sets[k]]

    def __len__(self):
        return sum(len(v) for v in self.sets.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLLECTION_CSV_HEADER)
        for s in self.all_sets():
            t = s.tag or CongruenceClass(-1, -1, -1)
            w.writerow([s.offset, -1 if s.predicted_slice is None else s.predicted_slice, s.l2_group,
                        t.slice, t.subslice, t.set, s.size, s.via])
        return buf.getvalue()


def test_eviction_filter(target: int, collection: EvictionSetCollection) -> list[EvictionSet]:
    """Only the sets that could hold the target: same offset, predicted slice and L2 group."""
    page = target >> PAGE_BITS << PAGE_BITS
    offset = (target >> LINE_BITS) & (LINES_PER_PAGE - 1)
    labels = collection.page_labels.get(page)
    group = collection.page_groups.get(page, -1)
    label = -1 if labels is None else int(labels[offset])
    return list(collection.sets.get((offset, label, group), ()))


test_eviction_filter.__test__ = False


# -- page classification for generation ---------------------------------------------------

class TimingPageClassifier:
    """Predicts whole-page slice mappings from simulated comparator races.

    ``method`` is ``tree`` (decision-tree walk), ``bayes`` (sequential
    posterior) or ``truth`` (ground-truth labels, no oracle use).  Labels are
    in the compare set's label space, which is consistent across pages.
    """

    def __init__(self, cfg: CacheConfig, space: AddressSpace, method: str = "tree",
                 model: LatencyModel | None = None, seed: int = 0, ccfg: ClassifierConfig | None = None):
        if method not in ("tree", "bayes", "truth"):
            raise ConfigurationError(f"unknown page classifier {method!r}")
        spec = cfg.slice_spec
        self.method = method
        self.table = enumerate_page_mappings(spec)
        self.ccfg = ccfg or ClassifierConfig.for_spec(spec)
        slice_of = lambda v: spec(space.translate(v))
        self.oracle = TimingOracle(model or LatencyModel().noiseless(), seed=seed, slice_count=spec.slice_count)
        self.probe = SliceProbe(self.oracle, slice_of)
        self.measured = 0
        if method == "truth":
            self.predictor = TruthPredictor(slice_of)
            return
        cal = space.allocate(8)
        for i in range(8):
            try:
                self.compare = determine_compare_set(self.probe, cal + (i << PAGE_BITS), spec, self.table, self.ccfg)
                break
            except AmbiguousCompareSetError:
                continue
        else:
            raise ClassificationError("no calibration page gave a compare set")
        profile = build_profile(self.probe, self.compare, reps=self.ccfg.profile_reps)
        self.predictor = ProfilePredictor(self.probe, profile, self.compare, self.ccfg)
        if method == "tree":
            self.tree = build_decision_tree(self.table, self.ccfg.offsets_per_node)
        else:
            self.confusion = estimate_confusion(profile, self.ccfg.predict_reps, self.ccfg.confusion_samples, seed)

    @property
    def predictions(self) -> int:
        return self.predictor.calls

    def __call__(self, vas: Sequence[int]) -> tuple[np.ndarray, int]:
        out = np.full((len(vas), LINES_PER_PAGE), -1, dtype=np.int64)
        unclassified = 0
        for r, v in enumerate(vas):
            if self.method == "truth":
                out[r] = [self.predictor.predict(v + (o << LINE_BITS)) for o in range(LINES_PER_PAGE)]
                continue
            try:
                if self.method == "tree":
                    idx, n = classify_page_tree(v, self.tree, self.predictor, self.ccfg.tree_retries)
                else:
                    idx, n = bayesian_page(v, self.predictor, self.table, self.confusion, self.ccfg)
            except ClassificationError:
                unclassified += 1
                continue
            self.measured += n
            out[r] = self.table.mappings[idx]
        return out, unclassified


# -- full generation -------------------------------------------------------------------------

@dataclass
class GenerationOptions:
    seed: int = 0
    scenario: str = "full_llc"  # page_offset | full_llc
    size_factor: float = 3.0
    slice_filter: bool = True
    propagate: bool = True
    filter_tests: bool = True
    tester: str = "congruence"  # congruence | hierarchy
    eviction_noise: float = 0.0
    topup_fraction: float = 0.125
    max_topups: int = 8
    target_attempts: int = 8
    max_rounds: int = 2000
    verify_votes: int = 1


class _PageRegistry:
    """Per-page predicted slice labels and L2 group, indexed by page number."""

    def __init__(self):
        self.vas: list[int] = []
        self.labels = np.zeros((0, LINES_PER_PAGE), dtype=np.int64)
        self.groups = np.zeros(0, dtype=np.int64)

    def add(self, vas: Sequence[int], labels: np.ndarray, groups: np.ndarray):
        self.vas.extend(vas)
        self.labels = np.vstack([self.labels, labels])
        self.groups = np.concatenate([self.groups, groups])

    def __len__(self):
        return len(self.vas)


class FullLLCGenerator:
    """Builds eviction sets for one offset or the whole LLC.

    ``classify_pages(vas) -> (labels[n, 64], unclassified count)`` supplies
    predicted slices; labels of -1 mark unclassified pages.  With
    ``slice_filter`` off, all labels are treated as one bucket.
    """

    def __init__(self, cfg: CacheConfig, classify_pages: Callable | None, opts: GenerationOptions = GenerationOptions(),
                 space: AddressSpace | None = None):
        self.cfg = cfg
        self.opts = opts
        self.space = space or AddressSpace(cfg.phys_bits, seed=opts.seed)
        self.rng = np.random.default_rng(opts.seed + 1)
        if opts.tester == "hierarchy":
            self.hierarchy = CacheHierarchy(cfg, noise=opts.eviction_noise, seed=opts.seed + 2)
            self.tester = HierarchyTester(self.hierarchy, self.space)
        elif opts.tester == "congruence":
            self.hierarchy = None
            self.tester = CongruenceTester(cfg, self.space)
        else:
            raise ConfigurationError(f"unknown tester {opts.tester!r}")
        if opts.propagate and not cfg.slice_spec.is_linear and classify_pages is None:
            raise ConfigurationError("non-linear propagation needs predicted page mappings")
        self.classify_pages = classify_pages
        self.reduce_stats = ReduceStats()
        self.pages = _PageRegistry()
        self.collection = EvictionSetCollection(cfg, space=self.space)
        self.l2_sets: list[EvictionSet] = []
        # classes sharing one (slice, L2 set): sub-slices times the LLC set bits above the L2 index
        self.per_bucket = cfg.subslices_per_slice * max(1, cfg.llc_sets_per_slice // cfg.l2_sets)
        self._pending: dict[int, list[EvictionSet]] = defaultdict(list)

    # -- setup
    def _add_pages(self, n: int):
        base = self.space.allocate(n)
        vas = [base + (i << PAGE_BITS) for i in range(n)]
        if isinstance(self.tester, CongruenceTester):
            self.tester.prime(vas)
        if not self.l2_sets:
            l2_pool = vas[: min(n, 4 * self.cfg.l2_groups * self.cfg.l2_ways * 4)]
            self.l2_sets = build_l2_eviction_sets(self.tester, self.cfg, l2_pool, self.rng, self.reduce_stats)
        groups = np.array([l2_group_of(self.tester, v, self.l2_sets) for v in vas], dtype=np.int64)
        if self.classify_pages is not None and (self.opts.slice_filter or self.opts.propagate):
            labels, unclassified = self.classify_pages(vas)
            self.collection.stats.unclassified_pages += unclassified
        else:
            labels = np.zeros((n, LINES_PER_PAGE), dtype=np.int64)
        if not self.opts.slice_filter:
            bucket_labels = np.zeros_like(labels)
        else:
            bucket_labels = labels
        self._mirror_labels = getattr(self, "_mirror_labels", np.zeros((0, LINES_PER_PAGE), dtype=np.int64))
        self._mirror_labels = np.vstack([self._mirror_labels, labels])
        self.pages.add(vas, bucket_labels, groups)
        for v, lab, g in zip(vas, bucket_labels, groups):
            self.collection.page_labels[v] = lab
            self.collection.page_groups[v] = int(g)

    # -- per-offset work
    def _pool(self, offset: int) -> dict[tuple[int, int], list[int]]:
        pools: dict[tuple[int, int], list[int]] = defaultdict(list)
        if isinstance(self.tester, CongruenceTester):
            self.tester.prime([v + (offset << LINE_BITS) for v in self.pages.vas])
        labels = self.pages.labels[:, offset]
        for i, (lab, g) in enumerate(zip(labels.tolist(), self.pages.groups.tolist())):
            if lab >= 0 and g >= 0:
                pools[(lab, g)].append(i)
        return pools

    def _capacity(self) -> int:
        return self.per_bucket * (self.cfg.slice_count if not self.opts.slice_filter else 1)

    def _existing(self, offset: int, key: tuple[int, int]) -> list[EvictionSet]:
        if self.opts.filter_tests:
            return self.collection.sets.get((offset, key[0], key[1]), [])
        return self.collection.at_offset(offset)

    def _evicted_by_any(self, target: int, sets: Iterable[EvictionSet]) -> bool:
        return any(target in s.addrs or self.tester.evicts(target, s.addrs) for s in sets)

    def _register(self, es: EvictionSet, page_idx: Sequence[int]):
        self.collection.add(es)
        if not self.opts.propagate or self.opts.scenario == "page_offset":
            return
        if self.cfg.slice_spec.is_linear:
            valid = range(LINES_PER_PAGE)
        else:
            valid = valid_mirror_offsets(self._mirror_labels[list(page_idx)]).tolist()
        later = [o for o in valid if o > es.offset and o in self._offset_set]
        self.collection.stats.mirror_invalid += sum(1 for o in self._offset_set if o > es.offset) - len(later)
        for o in later:
            self._pending[o].append((es, tuple(page_idx)))

    def _apply_mirrors(self, offset: int):
        st = self.collection.stats
        for src, page_idx in self._pending.pop(offset, []):
            m = src.mirror(offset)
            i0 = page_idx[0]
            key = (int(self.pages.labels[i0, offset]), int(self.pages.groups[i0]))
            m.predicted_slice = key[0]
            m.l2_group = key[1]
            if self._evicted_by_any(m.addrs[0], self._existing(offset, key)):
                st.mirror_duplicates += 1
                continue
            self.collection.add(m)
            st.mirrored += 1

    def _fill(self, offset: int, pools) -> int:
        """Conventional builds for under-full buckets; returns the remaining deficit."""
        st = self.collection.stats
        cap = self._capacity()
        deficit = 0
        for key in sorted(pools):
            members = pools[key]
            addrs = [self.pages.vas[i] + (offset << LINE_BITS) for i in members]
            index_of = {a: i for a, i in zip(addrs, members)}
            bucket = self.collection.sets.get((offset, key[0], key[1]), [])
            failures = 0
            cursor = 0
            while len(bucket) < cap and cursor < len(addrs) and failures < self.opts.target_attempts:
                t = addrs[cursor]
                cursor += 1
                if self._evicted_by_any(t, self._existing(offset, key)):
                    continue
                try:
                    found = group_test_reduce(self.tester, addrs, t, self.cfg.llc_ways, self.rng,
                                              self.opts.max_rounds, self.opts.verify_votes, self.reduce_stats)
                except ReductionError:
                    failures += 1
                    st.reduce_failures += 1
                    continue
                es = EvictionSet(tuple(found), offset, key[1], key[0], CONVENTIONAL)
                self._register(es, [index_of[a] for a in found])
                st.conventional += 1
                bucket = self.collection.sets.get((offset, key[0], key[1]), [])
            deficit += max(0, cap - len(bucket))
        return deficit

    def run(self) -> EvictionSetCollection:
        cfg, opts = self.cfg, self.opts
        offsets = (0,) if opts.scenario == "page_offset" else tuple(range(LINES_PER_PAGE))
        self._offset_set = set(offsets)
        self.collection.offsets = offsets
        n_pages = int(round(opts.size_factor * cfg.llc_lines / LINES_PER_PAGE))
        self._add_pages(n_pages)
        topups = 0
        for o in offsets:
            self._apply_mirrors(o)
            deficit = self._fill(o, self._pool(o))
            while deficit and topups < opts.max_topups:
                topups += 1
                extra = max(1, int(n_pages * opts.topup_fraction))
                self.collection.stats.topup_pages += extra
                self._add_pages(extra)
                deficit = self._fill(o, self._pool(o))
        self._finish()
        return self.collection

    def _finish(self):
        cfg = self.cfg
        st = self.collection.stats
        st.pages = len(self.pages)
        seen: dict[tuple[int, int], int] = defaultdict(int)
        for s in self.collection.all_sets():
            keys = class_keys(cfg, self.space.translate_many(list(s.addrs)))
            s.tag = class_from_key(cfg, int(keys[0]))
            if len(set(keys.tolist())) != 1:
                st.unsound += 1
            seen[(s.offset, int(keys[0]))] += 1
        st.sets = len(self.collection)
        st.targeted = cfg.classes_per_offset * len(self.collection.offsets)
        st.found = len(seen)
        st.duplicates = st.sets - st.found
        st.missing = st.targeted - st.found
        st.coverage = st.found / st.targeted if st.targeted else 0.0
        built = st.conventional + st.mirrored
        st.conventional_fraction = st.conventional / built if built else 0.0
        st.llc_tests = self.tester.stats.llc_tests
        st.l2_tests = self.tester.stats.l2_tests
        st.eviction_tests = st.llc_tests + st.l2_tests
        st.group_rounds = self.reduce_stats.rounds
        st.backtracks = self.reduce_stats.backtracks


def congruent_target(space: AddressSpace, cfg: CacheConfig, es: EvictionSet, batch: int = 4096,
                     max_batches: int = 64) -> int:
    """A fresh virtual address (new page) congruent with ``es``."""
    want = int(class_keys(cfg, [space.translate(es.addrs[0])])[0])
    for _ in range(max_batches):
        base = space.allocate(batch)
        vas = [base + (i << PAGE_BITS) + (es.offset << LINE_BITS) for i in range(batch)]
        hit = np.flatnonzero(class_keys(cfg, space.translate_many(vas)) == want)
        if hit.size:
            return vas[int(hit[0])]
    raise PoolExhaustedError("no congruent target found")


def check_minimal(tester, es: EvictionSet, target: int) -> bool:
    """Set evicts ``target`` and no single-member removal does."""
    if not tester.evicts(target, es.addrs):
        return False
    return not any(tester.evicts(target, es.addrs[:i] + es.addrs[i + 1:]) for i in range(es.size))


# -- propagation statistics ----------------------------------------------------------------

def propagation_yield(cfg: CacheConfig, pages: int = 256, seed: int = 0) -> dict:
    """Conventional share when every conventional set is mirrored wherever valid.

    For each random target page, draw ``llc_ways`` random pages congruent with
    it at offset 0 and count the other offsets where the mirrored set stays
    on one slice (``k``).  Each conventional build then yields ``k`` extra
    sets, so the conventional share is ``N / (N + sum k)``.
    """
    rng = np.random.default_rng(seed)
    spec = cfg.slice_spec
    frames = 1 << (cfg.phys_bits - PAGE_BITS)
    offs = np.arange(LINES_PER_PAGE, dtype=np.uint64) << np.uint64(LINE_BITS)
    ks = []
    for _ in range(pages):
        t = int(rng.integers(frames)) << PAGE_BITS
        kt = int(class_keys(cfg, [t])[0])
        members: list[int] = []
        while len(members) < cfg.llc_ways:
            cand = rng.integers(0, frames, size=4096, dtype=np.uint64) << np.uint64(PAGE_BITS)
            hit = cand[class_keys(cfg, cand) == kt]
            members.extend(int(c) for c in hit if int(c) != t)
        members = members[: cfg.llc_ways]
        rows = spec.eval_many(np.array(members, dtype=np.uint64)[:, None] | offs[None, :])
        ks.append(len(valid_mirror_offsets(rows)) - 1)
    ks = np.array(ks)
    return {"pages": pages, "mean_valid_mirrors": float(ks.mean()),
            "conventional_fraction": float(pages / (pages + ks.sum()))}


def generate_full_llc(cfg: CacheConfig, scenario: str = "full_llc", opts: GenerationOptions | None = None,
                      classifier: str = "tree", model: LatencyModel | None = None) -> EvictionSetCollection:
    """Eviction sets for offset 0 (``page_offset``) or every offset (``full_llc``)."""
    if scenario not in ("page_offset", "full_llc"):
        raise ConfigurationError(f"unknown scenario {scenario!r}")
    opts = GenerationOptions(**{**asdict(opts or GenerationOptions()), "scenario": scenario})
    space = AddressSpace(cfg.phys_bits, seed=opts.seed)
    classify = None
    if opts.slice_filter or opts.propagate:
        classify = TimingPageClassifier(cfg, space, classifier, model, seed=opts.seed + 3)
    gen = FullLLCGenerator(cfg, classify, opts, space)
    coll = gen.run()
    if classify is not None:
        coll.stats.slice_predictions = classify.predictions
        coll.stats.comparator_calls = classify.oracle.counters.comparator_calls
    return coll
