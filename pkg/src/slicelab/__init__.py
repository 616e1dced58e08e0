"""Simulation toolkit for slice-aware LLC eviction-set generation."""
from .slice_function import (SliceFunctionSpec, PageSliceMappingTable, constant_function, eval_slice,
                             enumerate_page_mappings, equivalent_mappings, match_mapping,
                             load_slice_functions, slice_function)
from .cache_model import CacheConfig, CacheHierarchy, AddressSpace, load_preset, preset_names
from .timing import LatencyModel, TimingOracle
from .eviction import EvictionSetCollection, GenerationOptions, generate_full_llc

__version__ = "0.1.0"
