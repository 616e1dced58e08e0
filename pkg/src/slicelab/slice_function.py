"""Intel LLC slice hash functions and the per-page slice mappings they induce.

A linear function computes each slice bit as the parity of the address
masked with one permutation mask.  A non-linear function runs the same XOR
stage to produce an index into a base sequence of slice numbers.  For the
non-linear case the low cache-line bits select the base-sequence position
directly and the masked parities permute it (see ``SliceFunctionSpec.index``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AddressRangeError, ConfigurationError

LINE_BITS = 6
PAGE_BITS = 12
LINES_PER_PAGE = 1 << (PAGE_BITS - LINE_BITS)

LINEAR = "linear"
NONLINEAR = "nonlinear"


def parity(x: int) -> int:
    return x.bit_count() & 1


def parse_hex_sequence(text: str | Iterable[str]) -> tuple[int, ...]:
    """Parse base-sequence digits as printed in tables, ignoring whitespace."""
    if not isinstance(text, str):
        text = "".join(text)
    return tuple(int(c, 16) for c in text if not c.isspace())


def format_hex_sequence(seq: Sequence[int], group: int = 4, per_line: int = 8) -> str:
    digits = "".join(format(v, "x") for v in seq)
    groups = [digits[i:i + group] for i in range(0, len(digits), group)]
    rows = [" ".join(groups[i:i + per_line]) for i in range(0, len(groups), per_line)]
    return "\n".join(rows)


@dataclass(frozen=True)
class SliceFunctionSpec:
    """A slice hash: XOR masks plus, for non-linear functions, a base sequence."""

    kind: str
    masks: tuple[int, ...]
    base_sequence: tuple[int, ...] = ()
    slice_count: int = 0
    phys_bits: int = 39
    name: str = ""
    _base: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(int(m) for m in self.masks))
        object.__setattr__(self, "base_sequence", tuple(int(v) for v in self.base_sequence))
        if self.kind not in (LINEAR, NONLINEAR):
            raise ConfigurationError(f"unknown slice function kind {self.kind!r}")
        if any(m < 0 or m & ((1 << LINE_BITS) - 1) for m in self.masks):
            raise ConfigurationError("masks must be non-negative with zero bits below bit 6")
        if self.phys_bits <= PAGE_BITS:
            raise ConfigurationError("phys_bits must exceed the page offset width")
        n = len(self.masks)
        if self.kind == LINEAR:
            if self.base_sequence:
                raise ConfigurationError("linear functions take no base sequence")
            count = 1 << n
            if self.slice_count not in (0, count):
                raise ConfigurationError(f"linear function with {n} masks has {count} slices")
            object.__setattr__(self, "slice_count", count)
        else:
            if len(self.base_sequence) != 1 << n:
                raise ConfigurationError(
                    f"base sequence length {len(self.base_sequence)} != 2**{n}")
            if any(v < 0 for v in self.base_sequence):
                raise ConfigurationError("negative slice in base sequence")
            count = self.slice_count or max(self.base_sequence) + 1
            if max(self.base_sequence) >= count:
                raise ConfigurationError("base sequence entry exceeds slice_count")
            object.__setattr__(self, "slice_count", count)
        base = np.asarray(self.base_sequence or [0], dtype=np.int64)
        object.__setattr__(self, "_base", base)

    @property
    def index_bits(self) -> int:
        return len(self.masks)

    @property
    def is_linear(self) -> bool:
        return self.kind == LINEAR

    def index(self, addr: int) -> int:
        """XOR-stage output for ``addr``.

        Linear: the slice itself.  Non-linear: the base-sequence position,
        i.e. the low line-index bits XORed with the masked parities.
        """
        x = 0
        for j, m in enumerate(self.masks):
            x |= ((addr & m).bit_count() & 1) << j
        if self.kind == NONLINEAR:
            x ^= (addr >> LINE_BITS) & ((1 << len(self.masks)) - 1)
        return x

    def lookup(self, idx: int) -> int:
        return idx if self.kind == LINEAR else self.base_sequence[idx]

    def __call__(self, addr: int) -> int:
        return eval_slice(self, addr)

    def eval_many(self, addrs) -> np.ndarray:
        """Vectorised evaluation over an integer array of physical addresses."""
        a = np.asarray(addrs, dtype=np.uint64)
        idx = np.zeros(a.shape, dtype=np.int64)
        for j, m in enumerate(self.masks):
            idx |= (np.bitwise_count(a & np.uint64(m)).astype(np.int64) & 1) << j
        if self.kind == LINEAR:
            return idx
        idx ^= ((a >> np.uint64(LINE_BITS)) & np.uint64((1 << len(self.masks)) - 1)).astype(np.int64)
        return self._base[idx]

    def to_record(self) -> dict:
        rec = {
            "name": self.name,
            "kind": self.kind,
            "slice_count": self.slice_count,
            "phys_bits": self.phys_bits,
            "masks": [f"0x{m:0{(self.phys_bits + 3) // 4}x}" for m in self.masks],
            "base_sequence": format_hex_sequence(self.base_sequence).split("\n") if self.base_sequence else [],
        }
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "SliceFunctionSpec":
        masks = tuple(int(m, 16) if isinstance(m, str) else int(m) for m in rec["masks"])
        base = rec.get("base_sequence") or ()
        if isinstance(base, str) or (base and isinstance(base[0], str)):
            base = parse_hex_sequence(base)
        return cls(kind=rec["kind"], masks=masks, base_sequence=tuple(base),
                   slice_count=int(rec.get("slice_count", 0)),
                   phys_bits=int(rec.get("phys_bits", 39)), name=rec.get("name", ""))


def eval_slice(spec: SliceFunctionSpec, addr: int) -> int:
    if addr < 0 or addr >> spec.phys_bits:
        raise AddressRangeError(f"address {addr:#x} outside {spec.phys_bits}-bit range")
    return spec.lookup(spec.index(addr))


@dataclass(frozen=True)
class PageSliceMappingTable:
    """All distinct offset-to-slice patterns a function produces on a 4 KB page.

    ``mappings[i][o]`` is the slice of cache line ``o`` for mapping ``i``.
    ``witnesses[i]`` is a page-aligned physical address realising mapping ``i``.
    """

    mappings: tuple[tuple[int, ...], ...]
    witnesses: tuple[int, ...] = ()
    slice_count: int = 0

    def __post_init__(self):
        if len(set(self.mappings)) != len(self.mappings):
            raise ConfigurationError("mappings must be pairwise distinct")
        if any(len(m) != LINES_PER_PAGE for m in self.mappings):
            raise ConfigurationError("every mapping has exactly 64 entries")
        if not self.slice_count and self.mappings:
            object.__setattr__(self, "slice_count", max(max(m) for m in self.mappings) + 1)

    @property
    def n(self) -> int:
        return len(self.mappings)

    def __len__(self):
        return len(self.mappings)

    def __getitem__(self, i):
        return self.mappings[i]

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.mappings, dtype=np.int64).reshape(-1, LINES_PER_PAGE)

    def index_of(self, mapping: Sequence[int]) -> int:
        return self.mappings.index(tuple(mapping))


def _span(vectors: Iterable[int]) -> list[tuple[int, int]]:
    """GF(2) span of ``vectors`` as (value, witness bitmask over inputs) pairs."""
    basis: list[tuple[int, int]] = []
    for i, v in enumerate(vectors):
        w = 1 << i
        for b, bw in basis:
            if v ^ b < v:
                v, w = v ^ b, w ^ bw
        if v:
            basis.append((v, w))
            basis.sort(reverse=True)
    out = [(0, 0)]
    for b, bw in basis:
        out += [(v ^ b, w ^ bw) for v, w in out]
    return out


def upper_contributions(spec: SliceFunctionSpec) -> list[tuple[int, int]]:
    """Distinct XOR-stage contributions of frame bits, each with one witness address."""
    bits = list(range(PAGE_BITS, spec.phys_bits))
    cols = [spec.index(1 << b) for b in bits]
    out = []
    for value, w in _span(cols):
        addr = 0
        for k, b in enumerate(bits):
            if w >> k & 1:
                addr |= 1 << b
        out.append((value, addr))
    return out


def enumerate_page_mappings(spec: SliceFunctionSpec) -> PageSliceMappingTable:
    """Every distinct page mapping, in lexicographic order.

    The XOR stage is linear in the address, so a frame contributes one
    constant term per page; enumerating the span of those terms is exhaustive.
    """
    offset_idx = [spec.index(o << LINE_BITS) for o in range(LINES_PER_PAGE)]
    found: dict[tuple[int, ...], int] = {}
    for c, addr in upper_contributions(spec):
        m = tuple(spec.lookup(i ^ c) for i in offset_idx)
        if m not in found or addr < found[m]:
            found[m] = addr
    ordered = sorted(found)
    return PageSliceMappingTable(tuple(ordered), tuple(found[m] for m in ordered), spec.slice_count)


def match_mapping(observed, table: PageSliceMappingTable) -> tuple[int, int]:
    """Table index agreeing with ``observed`` on the most offsets, plus that count.

    ``observed`` is a 64-entry sequence (``None`` or negative entries are
    ignored) or a dict of offset -> slice.  Ties go to the lowest index.
    """
    if table.n == 0:
        raise ConfigurationError("empty mapping table")
    if isinstance(observed, Mapping):
        pairs = [(int(o), int(s)) for o, s in observed.items() if s is not None]
    else:
        pairs = [(o, int(s)) for o, s in enumerate(observed) if s is not None and s >= 0]
    if not pairs:
        raise ValueError("no observed offsets")
    offs = np.fromiter((o for o, _ in pairs), dtype=np.int64)
    vals = np.fromiter((s for _, s in pairs), dtype=np.int64)
    agree = (table.array[:, offs] == vals).sum(axis=1)
    best = int(np.argmax(agree))
    return best, int(agree[best])


def canonical_labels(mapping: Sequence[int]) -> tuple[int, ...]:
    """Relabel slices by order of first appearance (the mapping's partition)."""
    seen: dict[int, int] = {}
    return tuple(seen.setdefault(v, len(seen)) for v in mapping)


def equivalent_mappings(table: PageSliceMappingTable, i: int) -> list[int]:
    """Indices of mappings that induce the same offset partition as mapping ``i``."""
    key = canonical_labels(table.mappings[i])
    return [j for j, m in enumerate(table.mappings) if canonical_labels(m) == key]


# -- bundled data -----------------------------------------------------------

def _load_json(name: str) -> dict:
    with resources.files("slicelab.data").joinpath(name).open("r") as fh:
        return json.load(fh)


def load_slice_functions() -> dict[str, SliceFunctionSpec]:
    data = _load_json("slice_functions.json")
    return {rec["name"]: SliceFunctionSpec.from_record(rec) for rec in data["functions"]}


def slice_function(name: str) -> SliceFunctionSpec:
    funcs = load_slice_functions()
    if name not in funcs:
        raise ConfigurationError(f"unknown slice function {name!r}; known: {sorted(funcs)}")
    return funcs[name]


def constant_function(phys_bits: int = 39) -> SliceFunctionSpec:
    """Single-slice function (every address maps to slice 0)."""
    return SliceFunctionSpec(NONLINEAR, (0,), (0, 0), slice_count=1, phys_bits=phys_bits, name="constant-1")
