"""Entropy-driven decision tree over a page-mapping table (ID3 style)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ClassificationError, ConfigurationError
from .slice_function import LINE_BITS, LINES_PER_PAGE, PageSliceMappingTable


@dataclass(frozen=True)
class EntropyRow:
    offset: int
    slice_counts: tuple[int, ...]
    entropy: float

    @property
    def n(self) -> int:
        return sum(self.slice_counts)

    def probabilities(self) -> tuple[float, ...]:
        return tuple(c / self.n for c in self.slice_counts)


def shannon_entropy(counts) -> float:
    c = np.asarray(counts, dtype=float)
    c = c[c > 0]
    if c.size == 0:
        return 0.0
    p = c / c.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


def offset_entropy(table: PageSliceMappingTable, o: int, subset: Sequence[int] | None = None) -> EntropyRow:
    """Histogram of slices at offset ``o`` over ``subset`` (default: all mappings)."""
    rows = table.array if subset is None else table.array[list(subset)]
    if rows.shape[0] == 0:
        raise ValueError("empty mapping subset")
    counts = np.bincount(rows[:, o], minlength=table.slice_count)
    return EntropyRow(o, tuple(int(c) for c in counts), shannon_entropy(counts))


def entropy_table(table: PageSliceMappingTable, subset: Sequence[int] | None = None) -> list[EntropyRow]:
    return [offset_entropy(table, o, subset) for o in range(LINES_PER_PAGE)]


@dataclass
class TreeNode:
    candidates: tuple[int, ...]
    offsets: tuple[int, ...] = ()
    children: dict[tuple[int, ...], "TreeNode"] = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return not self.offsets

    @property
    def mapping(self) -> int:
        if not self.is_leaf:
            raise ValueError("inner node has no mapping")
        return self.candidates[0]


@dataclass
class DecisionTree:
    root: TreeNode
    table: PageSliceMappingTable
    offsets_per_node: int

    def leaves(self) -> list[TreeNode]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(node.children.values())
        return out

    def depth(self) -> int:
        """Maximum number of offsets measured on any root-to-leaf path."""
        def rec(node):
            if node.is_leaf:
                return 0
            return len(node.offsets) + max(rec(c) for c in node.children.values())
        return rec(self.root)

    def paths(self):
        """Yield (leaf mapping index, {offset: label}) for every leaf."""
        stack = [(self.root, {})]
        while stack:
            node, labels = stack.pop()
            if node.is_leaf:
                yield node.mapping, labels
                continue
            for key, child in node.children.items():
                stack.append((child, {**labels, **dict(zip(node.offsets, key))}))


def _column_entropies(keys: np.ndarray, radix: int) -> np.ndarray:
    """Entropy of each column of a (rows, cols) array of small integer keys."""
    cols = keys.shape[1]
    flat = (keys + np.arange(cols) * radix).ravel()
    counts = np.bincount(flat, minlength=cols * radix).reshape(cols, radix).astype(float)
    p = counts / keys.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log2(p), 0.0).sum(axis=1)


def _pick_offsets(arr: np.ndarray, used: set[int], per_node: int, k: int,
                  min_gain: float = 1.0) -> tuple[int, ...]:
    """Offsets to measure at one node; ties resolve to the lowest offsets.

    Extra offsets are only added while each adds at least ``min_gain`` bits of
    joint entropy, otherwise the walk would spend measurements on offsets the
    next node could choose better.  Groups beyond two extend the best pair
    greedily.
    """
    free = np.array([o for o in range(LINES_PER_PAGE) if o not in used])
    single = _column_entropies(arr[:, free], k)
    first = int(free[int(np.argmax(single))])
    if per_node == 1 or len(free) == 1 or single.max() >= np.log2(arr.shape[0]) - 1e-9:
        return (first,)
    ia, ib = np.triu_indices(len(free), 1)
    joint = _column_entropies(arr[:, free[ia]] * k + arr[:, free[ib]], k * k)
    j = int(np.argmax(joint))
    if joint[j] - single.max() < min_gain:
        return (first,)
    best = (int(free[ia[j]]), int(free[ib[j]]))
    h_best = joint[j]
    while len(best) < min(per_node, len(free)):
        base = np.zeros(arr.shape[0], dtype=np.int64)
        for q in best:
            base = base * k + arr[:, q]
        _, base = np.unique(base, return_inverse=True)
        rest = np.array([o for o in free if o not in best])
        h = _column_entropies(base[:, None] * k + arr[:, rest], (int(base.max()) + 1) * k)
        if h.max() - h_best < min_gain:
            break
        h_best = h.max()
        best = best + (int(rest[int(np.argmax(h))]),)
    return best


def build_decision_tree(table: PageSliceMappingTable, offsets_per_node: int = 1,
                        min_gain: float = 1.0) -> DecisionTree:
    """Recursive ID3: split on the offset(s) with maximal entropy among candidates."""
    if table.n == 0:
        raise ConfigurationError("empty mapping table")
    if offsets_per_node < 1:
        raise ConfigurationError("offsets_per_node must be >= 1")
    arr = table.array

    def grow(cands: tuple[int, ...], used: frozenset) -> TreeNode:
        node = TreeNode(cands)
        if len(cands) == 1:
            return node
        sub = arr[list(cands)]
        offs = _pick_offsets(sub, set(used), offsets_per_node, table.slice_count, min_gain)
        groups: dict[tuple[int, ...], list[int]] = {}
        for i, row in zip(cands, sub):
            groups.setdefault(tuple(int(row[o]) for o in offs), []).append(i)
        if len(groups) == 1:
            raise ConfigurationError("indistinguishable mappings in table")
        node.offsets = offs
        node.children = {key: grow(tuple(g), used | set(offs)) for key, g in sorted(groups.items())}
        return node

    return DecisionTree(grow(tuple(range(table.n)), frozenset()), table, offsets_per_node)


def classify_page_tree(page: int, tree: DecisionTree, predictor, retries: int = 2,
                       max_measurements: int = 4096) -> tuple[int, int]:
    """Walk the tree with measured labels; returns (mapping index, offsets measured).

    A measured label with no matching child re-measures the node; after
    ``retries`` failures the walk climbs to the parent and re-measures there.
    """
    node = tree.root
    parents: list[TreeNode] = []
    fails: dict[int, int] = {}
    measured = 0
    while not node.is_leaf:
        key = tuple(predictor.predict(page + (o << LINE_BITS)) for o in node.offsets)
        measured += len(node.offsets)
        child = node.children.get(key)
        if child is not None:
            parents.append(node)
            fails[id(child)] = 0
            node = child
            continue
        fails[id(node)] = fails.get(id(node), 0) + 1
        while fails[id(node)] > retries:
            if not parents:
                raise ClassificationError("retry budget exhausted at the root")
            node = parents.pop()
            fails[id(node)] = fails.get(id(node), 0) + 1
        if measured > max_measurements:
            raise ClassificationError("measurement budget exhausted")
    return node.mapping, measured
