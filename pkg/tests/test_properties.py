"""Property-based invariants."""
import numpy as np
from hypothesis import HealthCheck, given, settings, strategies as st

from slicelab import PageSliceMappingTable, enumerate_page_mappings, load_slice_functions
from slicelab.cache_model import (AddressSpace, CacheHierarchy, CongruenceTester, HierarchyTester, HitLevel,
                                  load_preset)
from slicelab.classifier import TruthPredictor, bayesian_page
from slicelab.slice_function import canonical_labels, match_mapping
from slicelab.tree import entropy_table, offset_entropy

FUNCS = load_slice_functions()
TABLES = {name: enumerate_page_mappings(spec) for name, spec in FUNCS.items()}
names = st.sampled_from(sorted(FUNCS))
addr39 = st.integers(0, (1 << 39) - 1)


@given(name=names, a=addr39, b=addr39)
def test_index_stage_is_xor_linear(name, a, b):
    spec = FUNCS[name]
    assert spec.index(a ^ b) == spec.index(a) ^ spec.index(b)


@given(name=names, a=addr39, low=st.integers(0, 63))
def test_line_offset_bits_never_matter(name, a, low):
    spec = FUNCS[name]
    assert spec(a & ~63) == spec((a & ~63) | low)


@given(name=names, frame=st.integers(0, (1 << 27) - 1))
def test_every_page_mapping_is_in_the_table(name, frame):
    spec = FUNCS[name]
    page = frame << 12
    mapping = tuple(spec(page + (o << 6)) for o in range(64))
    assert mapping in set(TABLES[name].mappings)


@given(name=names, o=st.integers(0, 63))
def test_entropy_bounds(name, o):
    table = TABLES[name]
    h = offset_entropy(table, o).entropy
    assert 0.0 <= h <= np.log2(table.slice_count) + 1e-12


@given(name=names, perm_seed=st.integers(0, 1000))
def test_entropy_invariant_under_label_permutation(name, perm_seed):
    table = TABLES[name]
    perm = np.random.default_rng(perm_seed).permutation(table.slice_count)
    relabelled = PageSliceMappingTable(tuple(tuple(int(perm[s]) for s in m) for m in table.mappings),
                                       slice_count=table.slice_count)
    for a, b in zip(entropy_table(table), entropy_table(relabelled)):
        assert abs(a.entropy - b.entropy) < 1e-12
    assert canonical_labels(relabelled.mappings[0]) == canonical_labels(table.mappings[0])


@given(name=names, i=st.integers(0, 255), errs=st.sets(st.integers(0, 63), max_size=3))
def test_closest_match_corrects_few_errors(name, i, errs):
    table = TABLES[name]
    i %= table.n
    obs = list(table.mappings[i])
    for o in errs:
        obs[o] = (obs[o] + 1) % table.slice_count
    idx, agree = match_mapping(obs, table)
    assert agree >= 64 - len(errs)
    if len(errs) <= 1:
        # single errors never outvote a real mapping: distinct mappings differ on many offsets
        assert idx == i


@settings(max_examples=30, deadline=None)
@given(name=st.sampled_from(["linear-4", "nonlinear-6", "nonlinear-10"]), i=st.integers(0, 127))
def test_bayes_identity_confusion_is_exact(name, i):
    spec = FUNCS[name]
    table = TABLES[name]
    i %= table.n
    idx, n = bayesian_page(table.witnesses[i], TruthPredictor(spec), table, np.eye(table.slice_count))
    assert idx == i and 1 <= n <= 64


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 10_000), size=st.integers(1, 60))
def test_testers_agree(seed, size):
    cfg = load_preset("i7-6700K", llc_sets_per_slice=64, l2_sets=64, l1_sets=64)
    space = AddressSpace(cfg.phys_bits, seed=seed)
    base = space.allocate(200)
    rng = np.random.default_rng(seed)
    vas = [base + (int(i) << 12) for i in rng.integers(0, 200, size=size)]
    target = base + (int(rng.integers(200)) << 12)
    h = HierarchyTester(CacheHierarchy(cfg), space)
    c = CongruenceTester(cfg, space)
    assert h.evicts(target, vas) == c.evicts(target, vas)
    assert h.evicts_l2(target, vas) == c.evicts_l2(target, vas)


@settings(max_examples=40, deadline=None)
@given(ops=st.lists(st.tuples(st.sampled_from(["access", "flush", "private"]), st.integers(0, 4095)),
                    max_size=300),
       inclusive=st.booleans())
def test_lru_hierarchy_invariants(ops, inclusive):
    cfg = load_preset("i7-6700K", llc_sets_per_slice=16, l2_sets=8, l1_sets=4, inclusive=inclusive)
    h = CacheHierarchy(cfg)
    last = None
    for op, line in ops:
        p = line << 6
        if op == "access":
            h.access(p)
            last = p
            assert h.level_of(p) == HitLevel.L1
        elif op == "flush":
            h.clflush(p)
            assert h.level_of(p) == HitLevel.RAM
        else:
            h.flush_private()
        h.check_invariants()
    if last is not None and ops[-1][0] == "access":
        assert h.access(last) == HitLevel.L1
