"""Slice prediction from comparator races, and whole-page mapping inference.

Addresses are opaque integers; a ``SliceProbe`` resolves them to their true
slice only to drive the timing oracle.  In pure-oracle mode the address *is*
the slice label.  Predicted labels live in the compare set's label space,
which may be a relabeling of the true slices (see ``determine_compare_set``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import AmbiguousCompareSetError, ConfigurationError
from .slice_function import (LINE_BITS, LINES_PER_PAGE, PageSliceMappingTable, SliceFunctionSpec,
                             match_mapping)
from .timing import TimingOracle


@dataclass(frozen=True)
class ClassifierConfig:
    predict_reps: int = 10
    profile_reps: int = 1000
    bayes_threshold: float = 0.90
    posterior_floor: float = 1e-9
    offsets_per_node: int = 1
    tree_retries: int = 2
    pair_reps: int = 100
    same_slice_gap: float = 0.2
    compare_confidence: float = 0.9
    confusion_samples: int = 4000

    def __post_init__(self):
        if self.predict_reps < 1 or self.profile_reps < 1:
            raise ConfigurationError("repetition counts must be >= 1")
        if not 0 < self.bayes_threshold < 1:
            raise ConfigurationError("bayes_threshold must lie in (0, 1)")
        if self.offsets_per_node < 1:
            raise ConfigurationError("offsets_per_node must be >= 1")

    @classmethod
    def for_spec(cls, spec: SliceFunctionSpec, **kw) -> "ClassifierConfig":
        kw.setdefault("offsets_per_node", 1 if spec.is_linear else 2)
        return cls(**kw)


class SliceProbe:
    """Comparator races between addresses whose true slice the simulator knows."""

    def __init__(self, oracle: TimingOracle, slice_of: Callable[[int], int] | None = None):
        self.oracle = oracle
        self.slice_of = slice_of or (lambda a: int(a))

    def slices(self, addrs) -> np.ndarray:
        return np.fromiter((self.slice_of(a) for a in addrs), dtype=np.int64)

    def win_vector(self, addr: int, compare_addrs: Sequence[int], reps: int) -> np.ndarray:
        """Per compare address, the fraction of ``reps`` races the input lost (was slower)."""
        s = self.slice_of(addr)
        cs = self.slices(compare_addrs)
        return self.oracle.comparator_gate(s, cs, size=(reps, len(cs))).mean(axis=0)

    def pairwise(self, addrs: Sequence[int], reps: int) -> np.ndarray:
        """P[i, j] = fraction of races where address i was slower than address j."""
        s = self.slices(addrs)
        return self.oracle.comparator_gate(s[:, None], s[None, :], size=(reps, len(s), len(s))).mean(axis=0)


@dataclass(frozen=True)
class CompareSet:
    """One address per label; ``page_labels`` are the labels of the calibration page."""

    addrs: tuple[int, ...]
    page: int | None = None
    page_labels: tuple[int, ...] = ()
    mapping_index: int | None = None

    def __len__(self):
        return len(self.addrs)


@dataclass(frozen=True)
class ComparatorProfile:
    vectors: np.ndarray
    reps: int

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ConfigurationError("profile must be square")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ConfigurationError("profile entries must lie in [0, 1]")
        object.__setattr__(self, "vectors", v)

    @property
    def slice_count(self) -> int:
        return self.vectors.shape[0]


def pure_compare_set(slice_count: int) -> CompareSet:
    """Compare set for pure-oracle mode: address ``s`` is slice ``s``."""
    return CompareSet(tuple(range(slice_count)))


def build_profile(probe: SliceProbe, compare_set: CompareSet, calibration: Sequence[int] | None = None,
                  reps: int = 1000) -> ComparatorProfile:
    """Win-frequency vectors for each label.

    ``calibration[k]`` is an address with label ``k``; defaults to the compare
    set itself.
    """
    targets = compare_set.addrs if calibration is None else calibration
    rows = [probe.win_vector(t, compare_set.addrs, reps) for t in targets]
    return ComparatorProfile(np.array(rows).reshape(len(targets), len(compare_set)), reps)


def nearest_row(vec: np.ndarray, profile: ComparatorProfile) -> int:
    d = ((profile.vectors - vec) ** 2).sum(axis=1)
    return int(np.argmin(d))


class Predictor(Protocol):
    def predict(self, addr: int) -> int: ...


@dataclass
class ProfilePredictor:
    """Euclidean nearest-profile-row slice prediction."""

    probe: SliceProbe
    profile: ComparatorProfile
    compare_set: CompareSet
    cfg: ClassifierConfig = field(default_factory=ClassifierConfig)
    calls: int = 0

    def predict(self, addr: int) -> int:
        self.calls += 1
        vec = self.probe.win_vector(addr, self.compare_set.addrs, self.cfg.predict_reps)
        return nearest_row(vec, self.profile)


@dataclass
class TruthPredictor:
    """Noise-free shortcut: returns the label the compare set assigns to the true slice."""

    slice_of: Callable[[int], int]
    relabel: Sequence[int] | None = None
    calls: int = 0

    def predict(self, addr: int) -> int:
        self.calls += 1
        s = self.slice_of(addr)
        return s if self.relabel is None else self.relabel[s]


def predict_slice(probe: SliceProbe, addr: int, profile: ComparatorProfile, compare_set: CompareSet,
                  cfg: ClassifierConfig = ClassifierConfig()) -> int:
    vec = probe.win_vector(addr, compare_set.addrs, cfg.predict_reps)
    return nearest_row(vec, profile)


def page_addrs(page: int) -> list[int]:
    return [page + (o << LINE_BITS) for o in range(LINES_PER_PAGE)]


def determine_compare_set(probe: SliceProbe, page: int, spec: SliceFunctionSpec,
                          table: PageSliceMappingTable, cfg: ClassifierConfig = ClassifierConfig()) -> CompareSet:
    """Pick one offset per slice from a single page.

    Linear functions: every mapping is the base mapping XOR a constant, so
    the first offset of each slice value in mapping 0 covers all slices in
    any page; labels are mapping 0's values.  Non-linear: race all offset
    pairs, turn the outcomes into a same-slice relation and keep the table
    mapping whose partition agrees best.  Equivalent mappings share a
    partition, so the labels may be a relabeling of the true slices.
    """
    if table.n == 0:
        raise ConfigurationError("empty mapping table")
    if spec.is_linear or table.slice_count == 1:
        idx = 0
        labels = table.mappings[0]
    else:
        addrs = page_addrs(page)
        p = probe.pairwise(addrs, cfg.pair_reps)
        same = np.abs(p - p.T) < cfg.same_slice_gap
        iu = np.triu_indices(LINES_PER_PAGE, 1)
        arr = table.array
        expected = arr[:, :, None] == arr[:, None, :]
        agree = (expected[:, iu[0], iu[1]] == same[iu]).mean(axis=1)
        idx = int(np.argmax(agree))
        if agree[idx] < cfg.compare_confidence:
            raise AmbiguousCompareSetError(
                f"best mapping agrees on {agree[idx]:.2%} of pairs (< {cfg.compare_confidence:.0%})")
        labels = table.mappings[idx]
    firsts: dict[int, int] = {}
    for o, s in enumerate(labels):
        firsts.setdefault(s, o)
    if len(firsts) != table.slice_count:
        raise AmbiguousCompareSetError("selected mapping does not cover every slice")
    addrs = tuple(page + (firsts[s] << LINE_BITS) for s in range(table.slice_count))
    return CompareSet(addrs, page, tuple(labels), idx)


def classify_page_direct(page: int, predictor: Predictor) -> tuple[int, ...]:
    return tuple(predictor.predict(a) for a in page_addrs(page))


def closest_match(page: int, predictor: Predictor, table: PageSliceMappingTable) -> int:
    return match_mapping(classify_page_direct(page, predictor), table)[0]


# -- Bayesian page inference ----------------------------------------------------

def estimate_confusion(profile: ComparatorProfile, predict_reps: int, samples: int = 4000,
                       seed: int = 0) -> np.ndarray:
    """Monte Carlo P(predicted | true) implied by the profile itself.

    Each coordinate of a prediction vector is simulated as a binomial win
    count at the profiled win probability, then classified like a real
    measurement.  No oracle queries are spent.
    """
    rng = np.random.default_rng(seed)
    n = profile.slice_count
    conf = np.zeros((n, n))
    for s in range(n):
        vecs = rng.binomial(predict_reps, profile.vectors[s], size=(samples, n)) / predict_reps
        d = ((vecs[:, None, :] - profile.vectors[None, :, :]) ** 2).sum(axis=2)
        conf[s] = np.bincount(d.argmin(axis=1), minlength=n) / samples
    return conf


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    tot = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, tot, out=np.zeros_like(counts, dtype=float), where=tot > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log2(p), 0.0).sum(axis=-1)
    return h


def bayesian_page(page: int, predictor: Predictor, table: PageSliceMappingTable, confusion: np.ndarray,
                  cfg: ClassifierConfig = ClassifierConfig()) -> tuple[int, int]:
    """Sequential posterior over mappings; returns (argmax index, offsets measured).

    The next offset is the unmeasured one whose slice is most uncertain under
    the current posterior (ties to the lowest offset).
    """
    if table.n == 0:
        raise ConfigurationError("empty mapping table")
    arr = table.array
    k = table.slice_count
    post = np.full(table.n, 1.0 / table.n)
    measured = np.zeros(LINES_PER_PAGE, dtype=bool)
    count = 0
    while post.max() < cfg.bayes_threshold and not measured.all():
        mass = np.zeros((LINES_PER_PAGE, k))
        for s in range(k):
            mass[:, s] = (post[:, None] * (arr == s)).sum(axis=0)
        h = _entropy_rows(mass)
        h[measured] = -1.0
        o = int(np.argmax(h))
        measured[o] = True
        count += 1
        s_pred = predictor.predict(page + (o << LINE_BITS))
        lik = confusion[arr[:, o], s_pred] if s_pred < confusion.shape[1] else np.zeros(table.n)
        post = np.maximum(post * lik, 0.0)
        total = post.sum()
        if total <= 0:
            post = np.full(table.n, 1.0 / table.n)
            continue
        post = np.maximum(post / total, cfg.posterior_floor)
        post /= post.sum()
    return int(np.argmax(post)), count


# -- threshold baselines --------------------------------------------------------------

def calibrate_rdtscp(oracle: TimingOracle, probe: SliceProbe, compare_set: CompareSet,
                     rounds: int = 100, repeats: int = 10) -> np.ndarray:
    return np.array([np.mean([oracle.rdtscp_measure(probe.slice_of(a), repeats) for _ in range(rounds)])
                     for a in compare_set.addrs])


def rdtscp_predict(oracle: TimingOracle, probe: SliceProbe, addr: int, means: np.ndarray,
                   repeats: int = 10) -> int:
    m = oracle.rdtscp_measure(probe.slice_of(addr), repeats)
    return int(np.argmin(np.abs(means - m)))


def tipping_point(oracle: TimingOracle, slice_: int, max_chain: int = 256, votes: int = 10) -> int:
    """Smallest chain length the load no longer outruns, by binary search.

    Each step takes the majority of ``votes`` gate invocations (the gate's win
    probability crosses one half at the tipping point).  All probes of one
    search run back to back, so they share one drift draw.
    """
    d = oracle.drift()
    lo, hi = 0, max_chain
    while lo < hi:
        mid = (lo + hi) // 2
        if oracle.fixed_delay_gate(slice_, mid, size=votes, drift=d).mean() > 0.5:
            lo = mid + 1
        else:
            hi = mid
    return lo


def calibrate_tipping(oracle: TimingOracle, probe: SliceProbe, compare_set: CompareSet,
                      rounds: int = 100) -> np.ndarray:
    return np.array([np.mean([tipping_point(oracle, probe.slice_of(a)) for _ in range(rounds)])
                     for a in compare_set.addrs])


def tipping_predict(oracle: TimingOracle, probe: SliceProbe, addr: int, points: np.ndarray) -> int:
    t = tipping_point(oracle, probe.slice_of(addr))
    return int(np.argmin(np.abs(points - t)))


@dataclass
class RdtscpPredictor:
    oracle: TimingOracle
    probe: SliceProbe
    means: np.ndarray
    repeats: int = 10

    def predict(self, addr: int) -> int:
        return rdtscp_predict(self.oracle, self.probe, addr, self.means, self.repeats)


@dataclass
class TippingPredictor:
    oracle: TimingOracle
    probe: SliceProbe
    points: np.ndarray

    def predict(self, addr: int) -> int:
        return tipping_predict(self.oracle, self.probe, addr, self.points)


def rdtscp_classifier(page: int, predictor: RdtscpPredictor) -> tuple[int, ...]:
    return classify_page_direct(page, predictor)


def tipping_point_classifier(page: int, predictor: TippingPredictor) -> tuple[int, ...]:
    return classify_page_direct(page, predictor)
