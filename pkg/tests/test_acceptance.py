"""Acceptance criteria 1-9, one test each.

Every test prints a single ``CRITERION n: PASS|FAIL`` line (visible with
``pytest -v``) and then asserts the criterion at its stated tolerance.
"""
import math
import time

import numpy as np
import pytest

from slicelab import enumerate_page_mappings, load_slice_functions, slice_function
from slicelab.cache_model import CacheHierarchy, HierarchyTester, load_preset
from slicelab.classifier import TruthPredictor
from slicelab.eviction import (GenerationOptions, check_minimal, congruent_target, generate_full_llc,
                               propagation_yield, test_eviction_filter)
from slicelab.experiments import PageHarness, page_accuracy, slice_confusion
from slicelab.recovery import SliceLookupOracle, recover_linear, recover_nonlinear
from slicelab.timing import LatencyModel
from slicelab.tree import build_decision_tree, classify_page_tree, offset_entropy


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return emit


def _blocks(mapping, idx):
    digits = "".join(str(s) for s in mapping)
    return " ".join(digits[k:k + 4] for k in idx)


def test_criterion_1_mapping_counts(verdict):
    t0 = time.perf_counter()
    table = enumerate_page_mappings(slice_function("linear-4"))
    xors = set()
    constant = True
    for i in range(table.n):
        for j in range(i + 1, table.n):
            d = set(np.bitwise_xor(table.array[i], table.array[j]).tolist())
            constant &= len(d) == 1
            xors |= d
    prefix = _blocks(table.mappings[0], (0, 4))
    suffix = _blocks(table.mappings[0], (56, 60))
    n6 = enumerate_page_mappings(slice_function("nonlinear-6")).n
    n10 = enumerate_page_mappings(slice_function("nonlinear-10")).n
    elapsed = time.perf_counter() - t0
    ok = (table.n == 4 and constant and xors == {1, 2, 3} and prefix == "0123 0123"
          and suffix == "2301 2301" and n6 == 128 and n10 == 128 and elapsed < 1.0)
    verdict(1, ok, f"4-slice mappings={table.n} xor={sorted(xors)} Mapping A prefix '{prefix}' "
                   f"suffix '{suffix}' (expected '2301 2301'); 6-slice={n6} 10-slice={n10}; {elapsed:.2f}s")
    assert ok


def test_criterion_2_recovery_round_trip(verdict):
    t0 = time.perf_counter()
    bad = []
    funcs = load_slice_functions()
    for name, spec in funcs.items():
        oracle = SliceLookupOracle(spec)
        if spec.is_linear:
            got = recover_linear(oracle, spec.phys_bits)
        else:
            got = recover_nonlinear(oracle, spec.phys_bits)
        if got.masks != spec.masks or got.base_sequence != spec.base_sequence:
            bad.append(name)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 10.0
    verdict(2, ok, f"{len(funcs) - len(bad)}/{len(funcs)} shipped functions identical; {elapsed:.2f}s")
    assert ok


def test_criterion_3_entropy_and_tree(verdict):
    t0 = time.perf_counter()
    entropy_ok = leaves_ok = ident_ok = depth_ok = True
    worst = 0
    for spec in load_slice_functions().values():
        table = enumerate_page_mappings(spec)
        for o in range(64):
            col = [m[o] for m in table.mappings]
            probs = [col.count(s) / len(col) for s in set(col)]
            brute = -sum(p * math.log2(p) for p in probs)
            entropy_ok &= math.isclose(offset_entropy(table, o).entropy, brute, abs_tol=1e-12)
        tree = build_decision_tree(table, 1 if spec.is_linear else 2)
        leaves_ok &= sorted(leaf.mapping for leaf in tree.leaves()) == list(range(table.n))
        pred = TruthPredictor(spec)
        for i, page in enumerate(table.witnesses):
            idx, measured = classify_page_tree(page, tree, pred)
            ident_ok &= idx == i
            if table.n == 128:
                worst = max(worst, measured)
                depth_ok &= measured <= 8
    elapsed = time.perf_counter() - t0
    ok = entropy_ok and leaves_ok and ident_ok and depth_ok and elapsed < 30
    verdict(3, ok, f"entropy={entropy_ok} leaves={leaves_ok} identification={ident_ok} "
                   f"max offsets (128-mapping tables)={worst}; {elapsed:.1f}s")
    assert ok


def test_criterion_4_bayes_economy(verdict):
    t0 = time.perf_counter()
    h = PageHarness(slice_function("linear-4"), LatencyModel(), seed=4)
    acc, per_page, _ = page_accuracy(h, "bayes", 1000)
    elapsed = time.perf_counter() - t0
    ok = 2 <= per_page <= 4 and acc >= 0.95 and elapsed < 60
    verdict(4, ok, f"accuracy={acc:.3f} mean offsets/page={per_page:.2f} over 1000 pages; {elapsed:.1f}s")
    assert ok


def test_criterion_5_classifier_ordering(verdict):
    n = 10_000
    busy = LatencyModel(scenario="busy")
    acc = {}
    for i, m in enumerate(("comparator", "rdtscp", "tipping")):
        conf = slice_confusion(busy, 4, m, n, seed=50 + i)
        acc[m] = np.trace(conf) / conf.sum()
    margins = []
    for other in ("rdtscp", "tipping"):
        sd = math.sqrt(acc["comparator"] * (1 - acc["comparator"]) / n + acc[other] * (1 - acc[other]) / n)
        margins.append(acc["comparator"] - acc[other] - 3 * sd)
    exact = {}
    for i, m in enumerate(("comparator", "rdtscp", "tipping")):
        conf = slice_confusion(LatencyModel(scenario="busy").noiseless(), 4, m, 1000, seed=60 + i)
        exact[m] = np.trace(conf) / conf.sum()
    ok = min(margins) >= 0.05 and all(v == 1.0 for v in exact.values())
    verdict(5, ok, "busy accuracy " + " ".join(f"{k}={v:.3f}" for k, v in acc.items())
            + f"; 3-sigma margin={min(margins):.3f}; sigma=0 " + " ".join(f"{k}={v:.0%}" for k, v in exact.items()))
    assert ok


@pytest.mark.parametrize("cpu", ["i7-6700K", "i9-10900K"])
def test_criterion_6_eviction_quality(verdict, cpu):
    t0 = time.perf_counter()
    cfg = load_preset(cpu)
    coll = generate_full_llc(cfg, "full_llc", GenerationOptions(seed=6))
    st = coll.stats
    sets = coll.all_sets()
    sizes_ok = all(s.size == cfg.llc_ways for s in sets)
    rng = np.random.default_rng(6)
    tester = HierarchyTester(CacheHierarchy(cfg), coll.space)
    sample = [sets[i] for i in rng.choice(len(sets), 24, replace=False)]
    minimal = all(check_minimal(tester, s, congruent_target(coll.space, cfg, s)) for s in sample)
    elapsed = time.perf_counter() - t0
    dup = st.duplicates / st.targeted
    miss = st.missing / st.targeted
    ok = (st.coverage >= 0.99 and dup <= 0.01 and miss <= 0.01 and sizes_ok and st.unsound == 0
          and minimal and elapsed < 300)
    verdict(6, ok, f"{cpu}: coverage={st.coverage:.4f} duplicates={dup:.4f} missing={miss:.4f} "
                   f"size16={sizes_ok} congruent={st.unsound == 0} minimal(sample)={minimal}; {elapsed:.1f}s")
    assert ok


def test_criterion_7_propagation_fractions(verdict):
    six = propagation_yield(load_preset("i7-8700"), pages=256, seed=7)["conventional_fraction"]
    ten = propagation_yield(load_preset("i9-10900K"), pages=256, seed=7)["conventional_fraction"]
    ok = abs(six - 0.22) <= 0.05 and abs(ten - 0.15) <= 0.05
    verdict(7, ok, f"6-slice={six:.1%} (22+-5) 10-slice={ten:.1%} (15+-5) over 256 pages")
    assert ok


def test_criterion_8_filter_arithmetic(verdict):
    counts = {}
    for cpu in ("i7-6700K", "i9-10900K"):
        coll = generate_full_llc(load_preset(cpu), "page_offset", GenerationOptions(seed=8))
        returned = {len(test_eviction_filter(page, coll)) for page in coll.page_labels}
        counts[cpu] = (len(coll.at_offset(0)), returned)
    ok = counts["i7-6700K"] == (128, {2}) and counts["i9-10900K"] == (320, {2})
    verdict(8, ok, "; ".join(f"{k}: {n} sets -> {sorted(r)} candidates" for k, (n, r) in counts.items()))
    assert ok


def test_criterion_9_work_reduction(verdict):
    t0 = time.perf_counter()
    cfg = load_preset("i7-8700")
    on = generate_full_llc(cfg, "full_llc", GenerationOptions(seed=9)).stats
    off = generate_full_llc(cfg, "full_llc", GenerationOptions(seed=9, slice_filter=False, propagate=False)).stats
    ratio = off.eviction_tests / on.eviction_tests
    elapsed = time.perf_counter() - t0
    ok = ratio >= 4 and elapsed < 300
    verdict(9, ok, f"eviction tests {off.eviction_tests} (filters off) vs {on.eviction_tests} (on): "
                   f"{ratio:.2f}x; {elapsed:.1f}s")
    assert ok
