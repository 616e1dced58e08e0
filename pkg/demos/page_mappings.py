"""Walk through page-slice mappings for a 4-slice and a 6-slice function.

Run: python demos/page_mappings.py
"""
from slicelab import enumerate_page_mappings, slice_function
from slicelab.classifier import TruthPredictor
from slicelab.tree import build_decision_tree, classify_page_tree, entropy_table


def show(mapping):
    digits = "".join(f"{s:x}" for s in mapping)
    return " ".join(digits[i:i + 4] for i in range(0, 64, 4))


four = slice_function("linear-4")
table = enumerate_page_mappings(four)
print(f"linear 4-slice: {table.n} mappings")
for i, m in enumerate(table.mappings):
    print(f"  {i}: {show(m)}")
# any one offset pins a linear page down, since mappings differ by a constant XOR
print("  entropy at offset 0:", entropy_table(table)[0].entropy, "bits")

six = slice_function("nonlinear-6")
table6 = enumerate_page_mappings(six)
rows = sorted(entropy_table(table6), key=lambda r: -r.entropy)
print(f"\nnon-linear 6-slice: {table6.n} mappings")
print("  most informative offsets:", [(r.offset, round(r.entropy, 3)) for r in rows[:4]])

tree = build_decision_tree(table6, offsets_per_node=2)
page = table6.witnesses[42]
idx, measured = classify_page_tree(page, tree, TruthPredictor(six))
print(f"  tree depth {tree.depth()}; page {page:#x} -> mapping {idx} after {measured} offsets")
