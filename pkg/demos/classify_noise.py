"""Slice classification accuracy as timing noise grows.

Prints a small table: per-slice accuracy of the comparator profile against
the RDTSCP and tipping-point baselines, then whole-page accuracy of the
Bayesian walk in the quiet setting.

Run: python demos/classify_noise.py
"""
import numpy as np

from slicelab import slice_function
from slicelab.experiments import PageHarness, page_accuracy, slice_confusion
from slicelab.timing import LatencyModel

print("sigma  comparator  rdtscp  tipping")
for sigma in (0.0, 1.5, 3.0, 6.0, 9.0):
    model = LatencyModel(scenario="busy", noise_sigma_busy=sigma, noise_sigma_quiet=min(sigma, 1.5))
    if sigma == 0:
        model = model.noiseless()
    accs = []
    for i, method in enumerate(("comparator", "rdtscp", "tipping")):
        conf = slice_confusion(model, 4, method, 2000, seed=i)
        accs.append(np.trace(conf) / conf.sum())
    print(f"{sigma:5.1f}  " + "  ".join(f"{a:9.3f}" for a in accs))

h = PageHarness(slice_function("linear-4"), LatencyModel(), seed=1)
acc, per_page, _ = page_accuracy(h, "bayes", 300)
print(f"\nBayesian pages (quiet, 4 slices): accuracy {acc:.3f}, {per_page:.2f} offsets per page")
