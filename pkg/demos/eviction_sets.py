"""Full-LLC eviction-set generation on a 6-slice preset, with and without filters.

Run: python demos/eviction_sets.py   (about a minute)
"""
import time

from slicelab import GenerationOptions, generate_full_llc, load_preset
from slicelab.eviction import propagation_yield

cfg = load_preset("i7-8700")
print(f"{cfg.name}: {cfg.classes_per_offset} classes per offset, {cfg.l2_groups} L2 groups")

y = propagation_yield(cfg, pages=256)
print(f"mirrors kept per conventional set: {y['mean_valid_mirrors']:.2f} "
      f"-> conventional share {y['conventional_fraction']:.1%}")

for label, opts in (("slice filter + propagation", GenerationOptions(seed=1)),
                    ("plain L2-filtered group testing", GenerationOptions(seed=1, slice_filter=False,
                                                                           propagate=False))):
    t0 = time.perf_counter()
    st = generate_full_llc(cfg, "full_llc", opts).stats
    print(f"\n{label}:")
    print(f"  sets {st.sets}, coverage {st.coverage:.2%}, duplicates {st.duplicates}, missing {st.missing}")
    print(f"  conventional {st.conventional}, mirrored {st.mirrored}, eviction tests {st.eviction_tests}")
    print(f"  {time.perf_counter() - t0:.1f}s")
