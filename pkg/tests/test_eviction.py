import csv
import io

import numpy as np
import pytest

from slicelab import SliceFunctionSpec, slice_function
from slicelab.cache_model import (AddressSpace, CacheHierarchy, CongruenceTester, HierarchyTester, class_keys,
                                  l2_set_index, load_preset)
from slicelab.errors import (ConfigurationError, MissingMappingError, PoolExhaustedError, ReductionError)
from slicelab.eviction import (COLLECTION_CSV_HEADER, CandidateSet, EvictionSet, EvictionSetCollection,
                               GenerationOptions, build_l2_eviction_sets, check_minimal, congruent_target,
                               generate_candidates, generate_full_llc, group_test_reduce, l2_filter,
                               l2_group_of, propagate_linear, propagate_nonlinear, propagation_yield,
                               slice_filter, test_eviction_filter)
from slicelab.slice_function import LINEAR


@pytest.fixture(scope="module")
def pool6700():
    cfg = load_preset("i7-6700K")
    space = AddressSpace(cfg.phys_bits, seed=11)
    cand = generate_candidates(space, cfg)
    keys = class_keys(cfg, space.translate_many(cand.addrs))
    return cfg, space, cand, keys


def test_generate_candidates_size(pool6700):
    cfg, space, cand, _ = pool6700
    assert len(cand) == 6144
    assert len(generate_candidates(AddressSpace(39, seed=1), cfg, size_factor=1, offset=5)) == 2048
    with pytest.raises(ConfigurationError):
        CandidateSet([0x1000, 0x2040], 0)


def test_reduce_returns_exact_congruent_members(pool6700):
    cfg, space, cand, keys = pool6700
    t = cand.addrs[0]
    congruent = [a for a, k in zip(cand.addrs[1:], keys[1:]) if k == keys[0]][:16]
    chaff = [a for a, k in zip(cand.addrs, keys) if k != keys[0]][:300]
    tester = CongruenceTester(cfg, space)
    got = group_test_reduce(tester, congruent + chaff, t, 16, np.random.default_rng(0))
    assert sorted(got) == sorted(congruent)
    assert group_test_reduce(tester, congruent, t, 16) == congruent


def test_reduce_rejects_non_evicting_pool(pool6700):
    cfg, space, cand, keys = pool6700
    tester = CongruenceTester(cfg, space)
    with pytest.raises(ReductionError):
        group_test_reduce(tester, cand.addrs[1:10], cand.addrs[0], 16)


def test_reduce_under_eviction_noise(pool6700):
    cfg, space, cand, keys = pool6700
    l2 = l2_set_index(cfg, space.translate_many(cand.addrs))
    ok = 0
    for run in range(100):
        rng = np.random.default_rng(run)
        ti = int(rng.integers(len(cand)))
        pool = [a for i, a in enumerate(cand.addrs) if l2[i] == l2[ti] and i != ti]
        tester = HierarchyTester(CacheHierarchy(cfg, noise=0.01, seed=run), space)
        try:
            got = group_test_reduce(tester, pool, cand.addrs[ti], 16, rng, verify_votes=3)
        except ReductionError:
            continue
        got_keys = class_keys(cfg, space.translate_many(got))
        ok += len(got) == 16 and bool(np.all(got_keys == keys[ti]))
    assert ok >= 95


def test_l2_sets_for_6700k(pool6700):
    cfg, space, cand, _ = pool6700
    tester = HierarchyTester(CacheHierarchy(cfg), space)
    sets = build_l2_eviction_sets(tester, cfg, cand.addrs[:768], np.random.default_rng(1))
    assert len(sets) == 16 and all(s.size == 4 for s in sets)
    l2 = [set(l2_set_index(cfg, space.translate_many(s.addrs)).tolist()) for s in sets]
    assert all(len(x) == 1 for x in l2) and len({x.pop() for x in l2}) == 16
    for s in sets:
        fresh = next(a for a in cand.addrs[768:] if l2_group_of(tester, a, [s]) == 0)
        assert tester.evicts_l2(fresh, s.addrs)
        assert not any(tester.evicts_l2(fresh, s.addrs[:i] + s.addrs[i + 1:]) for i in range(4))


def test_l2_sets_pool_exhausted(pool6700):
    cfg, space, cand, _ = pool6700
    with pytest.raises(PoolExhaustedError):
        build_l2_eviction_sets(CongruenceTester(cfg, space), cfg, cand.addrs[:20])


def test_filter_fractions(pool6700):
    cfg, space, cand, _ = pool6700
    tester = CongruenceTester(cfg, space)
    sets = build_l2_eviction_sets(tester, cfg, cand.addrs[:768])
    t = cand.addrs[3]
    after_l2 = l2_filter(tester, cand, t, sets)
    assert t in after_l2.addrs and after_l2.l2_filtered
    n = len(cand)
    assert abs(len(after_l2) - n / 16) < 3 * np.sqrt(n / 16 * 15 / 16)
    pred = lambda a: cfg.slice_spec(space.translate(a))
    both = slice_filter(after_l2, t, pred)
    p = 1 / 64
    assert abs(len(both) - n * p) < 3 * np.sqrt(n * p * (1 - p)) + 1
    assert len(l2_filter(tester, CandidateSet([], 0), t, sets)) == 0


def test_slice_filter_noop_for_one_slice():
    cand = CandidateSet([0x1000, 0x2000, 0x3000], 0)
    assert slice_filter(cand, 0x1000, lambda a: 0).addrs == cand.addrs


def test_propagate_linear(pool6700):
    cfg, space, cand, keys = pool6700
    members = tuple(a for a, k in zip(cand.addrs[1:], keys[1:]) if k == keys[0])[:16]
    es = EvictionSet(members, 0)
    mirrors = propagate_linear(es)
    assert len(mirrors) == 64 and mirrors[0] is es
    for m in mirrors:
        assert len(set(class_keys(cfg, space.translate_many(m.addrs)).tolist())) == 1
    assert mirrors[9].mirror(30).addrs == mirrors[30].addrs


def test_propagate_nonlinear_validity():
    cfg = load_preset("i7-8700")
    space = AddressSpace(cfg.phys_bits, seed=4)
    coll = generate_full_llc(cfg, "page_offset", GenerationOptions(seed=4), classifier="truth")
    es = coll.at_offset(0)[0]
    mirrors, flagged = propagate_nonlinear(es, coll.page_labels)
    assert len(mirrors) + len(flagged) == 63
    tester = HierarchyTester(CacheHierarchy(cfg), coll.space)
    for m in mirrors:
        assert len(set(class_keys(cfg, coll.space.translate_many(m.addrs)).tolist())) == 1
        assert tester.evicts(congruent_target(coll.space, cfg, m), m.addrs)
    with pytest.raises(MissingMappingError):
        propagate_nonlinear(es, {})


def test_propagate_nonlinear_linear_spec_flags_nothing():
    cfg = load_preset("i7-6700K")
    coll = generate_full_llc(cfg, "page_offset", GenerationOptions(seed=2), classifier="truth")
    mirrors, flagged = propagate_nonlinear(coll.at_offset(0)[5], coll.page_labels)
    assert flagged == [] and len(mirrors) == 63


def test_test_eviction_filter_empty():
    coll = EvictionSetCollection(load_preset("i7-6700K"))
    assert test_eviction_filter(0x1000, coll) == []


def test_page_offset_generation_hierarchy_tester():
    cfg = load_preset("i7-6700K")
    coll = generate_full_llc(cfg, "page_offset", GenerationOptions(seed=3, tester="hierarchy"))
    assert coll.stats.coverage == 1.0 and coll.stats.unsound == 0
    tester = HierarchyTester(CacheHierarchy(cfg), coll.space)
    for s in coll.all_sets()[:5]:
        assert check_minimal(tester, s, congruent_target(coll.space, cfg, s))


def test_single_slice_toy_config():
    spec = SliceFunctionSpec(LINEAR, (), phys_bits=30)
    cfg = load_preset("i7-6700K", slice_spec=spec, llc_sets_per_slice=2048)
    with_filters = generate_full_llc(cfg, "page_offset", GenerationOptions(seed=5))
    plain = generate_full_llc(cfg, "page_offset", GenerationOptions(seed=5, slice_filter=False, propagate=False))
    # the classifier allocates calibration pages, so addresses differ; the classes found must not
    tags = lambda c: sorted(s.tag for s in c.all_sets())
    assert tags(with_filters) == tags(plain)
    assert len(with_filters) == len(plain) == cfg.classes_per_offset
    assert with_filters.stats.coverage == 1.0


def test_collection_csv_and_stats():
    cfg = load_preset("i7-6700K")
    coll = generate_full_llc(cfg, "full_llc", GenerationOptions(seed=1))
    rows = list(csv.reader(io.StringIO(coll.to_csv())))
    assert tuple(rows[0]) == COLLECTION_CSV_HEADER
    assert len(rows) == 1 + 8192
    assert {r[-1] for r in rows[1:]} == {"conventional", "mirror"}
    st = coll.stats
    assert st.targeted == 128 * 64 and st.conventional == 128 and st.mirrored == 8064
    assert st.conventional_fraction == pytest.approx(1 / 64)
    assert st.eviction_tests == st.llc_tests + st.l2_tests > 0


def test_bad_options():
    cfg = load_preset("i7-6700K")
    with pytest.raises(ConfigurationError):
        generate_full_llc(cfg, "everything")
    with pytest.raises(ConfigurationError):
        generate_full_llc(cfg, "page_offset", GenerationOptions(tester="oracle"))


def test_propagation_yield_linear_is_one_in_64():
    y = propagation_yield(load_preset("i7-6700K"), pages=16)
    assert y["mean_valid_mirrors"] == 63 and y["conventional_fraction"] == pytest.approx(1 / 64)


def test_noisy_timing_generation_still_sound():
    cfg = load_preset("i7-8700")
    from slicelab.timing import LatencyModel
    coll = generate_full_llc(cfg, "page_offset", GenerationOptions(seed=7), classifier="bayes",
                             model=LatencyModel())
    assert coll.stats.unsound == 0 and coll.stats.coverage >= 0.99
