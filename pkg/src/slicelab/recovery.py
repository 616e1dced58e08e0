"""Recover slice functions from a slice-lookup oracle.

Linear functions fall out of single-bit address differences.  Non-linear
functions are rebuilt by guessing the base-sequence length: the slices seen
at the first ``L`` cache lines form a candidate sequence, and every higher
address bit must act on it as a fixed XOR permutation of the index.  When no
permutation fits, the guess doubles and the scan restarts.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import NotLinearError, RecoveryError
from .slice_function import LINE_BITS, LINEAR, NONLINEAR, SliceFunctionSpec, eval_slice


class SliceLookupOracle:
    """Answers "which slice holds this address" (a performance-counter stand-in).

    With ``error_rate`` > 0 each query returns a wrong slice with that
    probability.  ``votes`` > 1 takes the majority of repeated queries.
    """

    def __init__(self, spec: SliceFunctionSpec, error_rate: float = 0.0, votes: int = 1, seed: int = 0):
        self.spec = spec
        self.error_rate = error_rate
        self.votes = votes
        self.rng = np.random.default_rng(seed)
        self.queries = 0
        self._memo: dict[int, int] = {}

    def _query(self, p: int) -> int:
        self.queries += 1
        s = eval_slice(self.spec, p)
        if self.error_rate and self.spec.slice_count > 1 and self.rng.random() < self.error_rate:
            s = (s + 1 + int(self.rng.integers(self.spec.slice_count - 1))) % self.spec.slice_count
        return s

    def lookup(self, p: int) -> int:
        """Memoised (majority) lookup; repeated addresses cost nothing."""
        s = self._memo.get(p)
        if s is None:
            if self.votes == 1:
                s = self._query(p)
            else:
                s = Counter(self._query(p) for _ in range(self.votes)).most_common(1)[0][0]
            self._memo[p] = s
        return s

    @property
    def distinct_lookups(self) -> int:
        return len(self._memo)


@dataclass
class RecoveryState:
    length: int = 1
    base: list[int] = field(default_factory=list)
    temp: list[int] = field(default_factory=list)
    x: int | None = None
    masks: list[int] = field(default_factory=list)
    bit: int = LINE_BITS
    restarts: int = 0


def _check(oracle: SliceLookupOracle, spec: SliceFunctionSpec, phys_bits: int, samples: int, seed: int) -> bool:
    rng = np.random.default_rng(seed)
    addrs = [1 << b for b in range(LINE_BITS, phys_bits)]
    addrs += [int(a) << LINE_BITS for a in rng.integers(0, 1 << (phys_bits - LINE_BITS), size=samples)]
    return all(oracle.lookup(a) == eval_slice(spec, a) for a in addrs)


def recover_linear(oracle: SliceLookupOracle, phys_bits: int, spot_checks: int = 64, seed: int = 0) -> SliceFunctionSpec:
    """Masks from ``lookup(0) ^ lookup(1 << b)`` for every address bit ``b >= 6``."""
    s0 = oracle.lookup(0)
    bits: dict[int, int] = {}
    for b in range(LINE_BITS, phys_bits):
        s = s0 ^ oracle.lookup(1 << b)
        j = 0
        while s:
            if s & 1:
                bits[j] = bits.get(j, 0) | 1 << b
            s >>= 1
            j += 1
    n = max(bits) + 1 if bits else 0
    masks = tuple(bits.get(j, 0) for j in range(n))
    spec = SliceFunctionSpec(LINEAR, masks, phys_bits=phys_bits, name="recovered-linear")
    if s0 != 0 or not _check(oracle, spec, phys_bits, spot_checks, seed):
        raise NotLinearError("slice lookups are not an XOR-linear function of the address")
    return spec


def _find_x(temp: list[int], base: list[int]) -> int | None:
    """Lowest x with temp[i] == base[i ^ x] for all i (brute force)."""
    L = len(base)
    for x in range(L):
        if all(temp[i] == base[i ^ x] for i in range(L)):
            return x
    return None


def recover_nonlinear(oracle: SliceLookupOracle, phys_bits: int, max_length: int = 1 << 12,
                      spot_checks: int = 256, seed: int = 0, trace: list | None = None) -> SliceFunctionSpec:
    """Base sequence and masks by length doubling.

    Bits below ``6 + log2(L)`` index the sequence directly; each higher bit is
    explained by the lowest XOR permutation ``x`` mapping the sequence onto
    the lookups taken with that bit set.  A spurious fit at a too-short length
    is caught by the final spot check, which also doubles the length.
    """
    st = RecoveryState()

    def restart(length: int):
        if length > max_length:
            raise RecoveryError(f"no consistent base sequence up to length {max_length}")
        st.length = length
        st.base = [oracle.lookup(i << LINE_BITS) for i in range(length)]
        st.masks = [0] * (length.bit_length() - 1)
        st.bit = LINE_BITS + length.bit_length() - 1

    restart(1)
    while True:
        while st.bit < phys_bits:
            st.temp = [oracle.lookup((i << LINE_BITS) | (1 << st.bit)) for i in range(st.length)]
            st.x = _find_x(st.temp, st.base)
            if trace is not None:
                trace.append((st.length, st.bit, st.x))
            if st.x is None:
                st.restarts += 1
                restart(st.length * 2)
                continue
            for j in range(len(st.masks)):
                if st.x >> j & 1:
                    st.masks[j] |= 1 << st.bit
            st.bit += 1
        spec = SliceFunctionSpec(NONLINEAR, tuple(st.masks), tuple(st.base),
                                 slice_count=max(st.base) + 1, phys_bits=phys_bits, name="recovered-nonlinear")
        if _check(oracle, spec, phys_bits, spot_checks, seed):
            return spec
        st.restarts += 1
        restart(st.length * 2)


def equivalence_check(a: SliceFunctionSpec, b: SliceFunctionSpec, sample_budget: int = 4096, seed: int = 0) -> bool:
    """True when both functions agree on every single-bit address and on random samples."""
    if a.phys_bits != b.phys_bits:
        return False
    bits = a.phys_bits
    singles = [1 << k for k in range(LINE_BITS, bits)]
    if any(a(p) != b(p) for p in [0] + singles):
        return False
    rng = np.random.default_rng(seed)
    lines = rng.integers(0, 1 << (bits - LINE_BITS), size=sample_budget, dtype=np.uint64) << np.uint64(LINE_BITS)
    return bool(np.array_equal(a.eval_many(lines), b.eval_many(lines)))
