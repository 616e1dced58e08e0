"""Batch experiments behind the command-line tool.

Every command takes an ``ExperimentConfig``, returns a ``RunReport`` and,
when an output directory is set, writes ``report.json`` plus CSV files.
All randomness derives from the config seed, so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cache_model import AddressSpace, load_preset, preset_names
from .classifier import (ClassifierConfig, ProfilePredictor, SliceProbe, bayesian_page, build_profile,
                         calibrate_rdtscp, calibrate_tipping, closest_match, determine_compare_set,
                         estimate_confusion, pure_compare_set, rdtscp_predict, tipping_predict)
from .errors import AmbiguousCompareSetError, ClassificationError, ConfigurationError
from .eviction import GenerationOptions, generate_full_llc, propagation_yield
from .recovery import SliceLookupOracle, equivalence_check, recover_linear, recover_nonlinear
from .slice_function import (LINE_BITS, PAGE_BITS, enumerate_page_mappings, format_hex_sequence,
                             slice_function)
from .timing import BUSY, QUIET, LatencyModel, TimingOracle
from .tree import build_decision_tree, classify_page_tree

REPORT_SCHEMA = "slicelab.run_report/1"
CONFUSION_HEADER = ("method", "scenario", "slice_true", "slice_pred", "count")
PAGE_METHODS = ("tree", "bayes", "closest")
SLICE_METHODS = ("comparator", "rdtscp", "tipping")


@dataclass
class ExperimentConfig:
    cpu: str = "i7-6700K"
    scenario: str = QUIET
    seed: int = 0
    methods: tuple[str, ...] = ()
    trials: int = 1000
    pages: int = 200
    out: str | None = None
    evict_mode: str = "full_llc"
    slice_filter: bool = True
    propagate: bool = True
    classifier: str = "tree"
    tester: str = "congruence"

    def __post_init__(self):
        if self.cpu not in preset_names():
            raise ConfigurationError(f"unknown processor preset {self.cpu!r}")
        if self.scenario not in (QUIET, BUSY):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.trials < 1 or self.pages < 1:
            raise ConfigurationError("trials and pages must be positive")
        if self.evict_mode not in ("page_offset", "full_llc"):
            raise ConfigurationError(f"unknown eviction mode {self.evict_mode!r}")


@dataclass
class RunReport:
    command: str
    config: dict
    accuracy: dict[str, float] = field(default_factory=dict)
    measurements_per_page: dict[str, float] = field(default_factory=dict)
    operations: dict[str, int] = field(default_factory=dict)
    eviction: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    files: list[str] = field(default_factory=list)
    schema: str = REPORT_SCHEMA

    def ratios_valid(self) -> bool:
        vals = list(self.accuracy.values())
        vals += [self.eviction.get(k) for k in ("coverage", "conventional_fraction") if k in self.eviction]
        return all(0.0 <= v <= 1.0 for v in vals)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(report: RunReport, cfg: ExperimentConfig, files: dict[str, str]) -> RunReport:
    if cfg.out is None:
        return report
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        (out / name).write_text(text)
    report.files = sorted(files) + ["report.json"]
    (out / "report.json").write_text(report.to_json() + "\n")
    return report


def _echo(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["methods"] = list(cfg.methods)
    d.pop("out")
    return d


# -- harness ---------------------------------------------------------------------------

class PageHarness:
    """Fresh simulated pages plus a calibrated comparator predictor.

    Predicted labels live in the compare set's label space; ``truth(page)``
    returns the page's true mapping in that same space.
    """

    def __init__(self, spec, model: LatencyModel, seed: int = 0, ccfg: ClassifierConfig | None = None):
        self.spec = spec
        self.space = AddressSpace(spec.phys_bits, seed=seed)
        self.table = enumerate_page_mappings(spec)
        self.ccfg = ccfg or ClassifierConfig.for_spec(spec)
        self.oracle = TimingOracle(model, seed=seed + 1, slice_count=spec.slice_count)
        self.probe = SliceProbe(self.oracle, lambda v: spec(self.space.translate(v)))
        cal = self.space.allocate(16)
        for i in range(16):
            try:
                self.compare = determine_compare_set(self.probe, cal + (i << PAGE_BITS), spec, self.table, self.ccfg)
                break
            except AmbiguousCompareSetError:
                continue
        else:
            raise ClassificationError("no calibration page yielded a compare set")
        true = [self.probe.slice_of(a) for a in self.compare.addrs]
        self.relabel = np.empty(spec.slice_count, dtype=np.int64)
        self.relabel[true] = np.arange(spec.slice_count)
        self.profile = build_profile(self.probe, self.compare, reps=self.ccfg.profile_reps)
        self.predictor = ProfilePredictor(self.probe, self.profile, self.compare, self.ccfg)
        self._confusion = None
        self._tree = None

    @property
    def confusion(self) -> np.ndarray:
        if self._confusion is None:
            self._confusion = estimate_confusion(self.profile, self.ccfg.predict_reps, self.ccfg.confusion_samples)
        return self._confusion

    @property
    def tree(self):
        if self._tree is None:
            self._tree = build_decision_tree(self.table, self.ccfg.offsets_per_node)
        return self._tree

    def pages(self, n: int) -> list[int]:
        base = self.space.allocate(n)
        return [base + (i << PAGE_BITS) for i in range(n)]

    def truth(self, page: int) -> tuple[int, ...]:
        lines = np.array([self.space.translate(page) + (o << LINE_BITS) for o in range(64)], dtype=np.uint64)
        return tuple(self.relabel[self.spec.eval_many(lines)].tolist())

    def classify(self, page: int, method: str) -> tuple[int | None, int]:
        """(mapping index or None on failure, offsets measured)."""
        if method == "tree":
            try:
                return classify_page_tree(page, self.tree, self.predictor, self.ccfg.tree_retries)
            except ClassificationError:
                return None, 0
        if method == "bayes":
            return bayesian_page(page, self.predictor, self.table, self.confusion, self.ccfg)
        if method == "closest":
            return closest_match(page, self.predictor, self.table), 64
        raise ConfigurationError(f"unknown page method {method!r}")


def page_accuracy(harness: PageHarness, method: str, pages: int) -> tuple[float, float, int]:
    """(accuracy, mean offsets measured, failures) over fresh pages."""
    correct = measured = failures = 0
    for p in harness.pages(pages):
        idx, n = harness.classify(p, method)
        measured += n
        if idx is None:
            failures += 1
        elif harness.table.mappings[idx] == harness.truth(p):
            correct += 1
    return correct / pages, measured / pages, failures


def slice_confusion(model: LatencyModel, slice_count: int, method: str, trials: int, seed: int = 0,
                    ccfg: ClassifierConfig = ClassifierConfig()) -> np.ndarray:
    """Per-slice confusion counts (rows true, columns predicted) in pure-oracle mode.

    ``trials`` predictions are spread evenly over the slices.
    """
    oracle = TimingOracle(model, seed=seed, slice_count=slice_count)
    probe = SliceProbe(oracle)
    cs = pure_compare_set(slice_count)
    conf = np.zeros((slice_count, slice_count), dtype=np.int64)
    truth = np.arange(trials) % slice_count
    if method == "comparator":
        profile = build_profile(probe, cs, reps=ccfg.profile_reps)
        pred = ProfilePredictor(probe, profile, cs, ccfg)
        guesses = [pred.predict(int(s)) for s in truth]
    elif method == "rdtscp":
        means = calibrate_rdtscp(oracle, probe, cs)
        guesses = [rdtscp_predict(oracle, probe, int(s), means) for s in truth]
    elif method == "tipping":
        points = calibrate_tipping(oracle, probe, cs)
        guesses = [tipping_predict(oracle, probe, int(s), points) for s in truth]
    else:
        raise ConfigurationError(f"unknown slice method {method!r}")
    np.add.at(conf, (truth, np.array(guesses)), 1)
    return conf


# -- commands ---------------------------------------------------------------------------

def cmd_mappings(cfg: ExperimentConfig) -> RunReport:
    spec = load_preset(cfg.cpu).slice_spec
    table = enumerate_page_mappings(spec)
    base = np.array(table.mappings[0])
    rows, lines = [], []
    for i, (m, w) in enumerate(zip(table.mappings, table.witnesses)):
        rel = ""
        if spec.is_linear:
            rel = f"xor {int(np.bitwise_xor(np.array(m), base)[0])}"
        digits = "".join(f"{s:x}" for s in m)
        grouped = " ".join(digits[k:k + 4] for k in range(0, 64, 4))
        rows.append((i, f"{w:#x}", rel, digits))
        lines.append(f"{i:4d}  frame-bits {w:#012x}  {grouped}  {rel}".rstrip())
    report = RunReport("mappings", _echo(cfg), results={"mapping_count": table.n, "listing": lines})
    return _emit(report, cfg, {"mappings.csv": _csv(("index", "frame_bits", "relation", "mapping"), rows)})


def cmd_recover(cfg: ExperimentConfig) -> RunReport:
    spec = load_preset(cfg.cpu).slice_spec
    oracle = SliceLookupOracle(spec, seed=cfg.seed)
    if spec.is_linear:
        got = recover_linear(oracle, spec.phys_bits, seed=cfg.seed)
    else:
        got = recover_nonlinear(oracle, spec.phys_bits, seed=cfg.seed)
    same_masks = tuple(got.masks) == tuple(spec.masks)
    same_seq = tuple(got.base_sequence) == tuple(spec.base_sequence)
    rec = {"name": spec.name, "masks": [f"{m:#x}" for m in got.masks],
           "base_sequence": format_hex_sequence(got.base_sequence).splitlines() if got.base_sequence else [],
           "kind": got.kind}
    report = RunReport("recover", _echo(cfg),
                       operations={"lookups": oracle.queries, "distinct_lookups": oracle.distinct_lookups},
                       results={**rec, "masks_identical": same_masks, "sequence_identical": same_seq,
                                "equivalent": equivalence_check(got, spec, seed=cfg.seed)})
    return _emit(report, cfg, {"recovered.json": json.dumps(rec, indent=2) + "\n"})


def cmd_eval(cfg: ExperimentConfig, addrs: Sequence[int] = ()) -> RunReport:
    """Slice of given physical addresses, plus a slice histogram over random lines."""
    spec = load_preset(cfg.cpu).slice_spec
    rng = np.random.default_rng(cfg.seed)
    lines = rng.integers(0, 1 << (spec.phys_bits - LINE_BITS), size=cfg.trials, dtype=np.uint64) << np.uint64(LINE_BITS)
    hist = np.bincount(spec.eval_many(lines), minlength=spec.slice_count)
    given = {f"{a:#x}": spec(a) for a in addrs}
    report = RunReport("eval", _echo(cfg), results={"slices": given, "histogram": hist.tolist()})
    rows = [(s, int(c)) for s, c in enumerate(hist)]
    return _emit(report, cfg, {"slice_histogram.csv": _csv(("slice", "count"), rows)})


def cmd_classify_bench(cfg: ExperimentConfig) -> RunReport:
    spec = load_preset(cfg.cpu).slice_spec
    model = LatencyModel(scenario=cfg.scenario)
    methods = cfg.methods or SLICE_METHODS + PAGE_METHODS
    report = RunReport("classify-bench", _echo(cfg))
    conf_rows = []
    for i, m in enumerate(methods):
        if m in SLICE_METHODS:
            conf = slice_confusion(model, spec.slice_count, m, cfg.trials, seed=cfg.seed + 10 * i)
            report.accuracy[m] = float(np.trace(conf) / conf.sum())
            conf_rows += [(m, cfg.scenario, t, p, int(conf[t, p]))
                          for t in range(spec.slice_count) for p in range(spec.slice_count)]
        elif m in PAGE_METHODS:
            h = PageHarness(spec, model, seed=cfg.seed + 10 * i)
            acc, per_page, failures = page_accuracy(h, m, cfg.pages)
            report.accuracy[f"page_{m}"] = acc
            report.measurements_per_page[m] = per_page
            report.operations[f"{m}_comparator_calls"] = h.oracle.counters.comparator_calls
            report.operations[f"{m}_failures"] = failures
        else:
            raise ConfigurationError(f"unknown method {m!r}")
    return _emit(report, cfg, {"confusion.csv": _csv(CONFUSION_HEADER, conf_rows)})


def cmd_evict_bench(cfg: ExperimentConfig) -> RunReport:
    cache = load_preset(cfg.cpu)
    opts = GenerationOptions(seed=cfg.seed, slice_filter=cfg.slice_filter, propagate=cfg.propagate,
                             tester=cfg.tester)
    model = LatencyModel(scenario=cfg.scenario) if cfg.classifier == "bayes" else None
    coll = generate_full_llc(cache, cfg.evict_mode, opts, classifier=cfg.classifier, model=model)
    st = coll.stats.as_dict()
    ops = {k: st[k] for k in ("llc_tests", "l2_tests", "eviction_tests", "slice_predictions",
                              "comparator_calls", "group_rounds")}
    report = RunReport("evict-bench", _echo(cfg), operations=ops, eviction=st)
    return _emit(report, cfg, {"eviction_sets.csv": coll.to_csv()})


def cmd_propagate_stats(cfg: ExperimentConfig) -> RunReport:
    cache = load_preset(cfg.cpu)
    y = propagation_yield(cache, cfg.pages, cfg.seed)
    report = RunReport("propagate-stats", _echo(cfg), eviction=y)
    return _emit(report, cfg, {"propagation.csv": _csv(tuple(y), [tuple(y.values())])})


COMMANDS = {
    "eval": cmd_eval,
    "mappings": cmd_mappings,
    "recover": cmd_recover,
    "classify-bench": cmd_classify_bench,
    "evict-bench": cmd_evict_bench,
    "propagate-stats": cmd_propagate_stats,
}
