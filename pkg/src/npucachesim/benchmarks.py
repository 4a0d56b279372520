"""Shipped desk-scale benchmark models.

Eight synthetic stand-ins, one per model family in the multi-tenant mix:
convolution-style chains with large reduction dims, depthwise-style
chains with small reduction dims and a large intermediate fraction,
square transformer-style matmuls, and tall-skinny LSTM cells.  Shapes
are small enough for quick runs while keeping aggregate working sets
well above typical shared-cache capacities.
"""

from __future__ import annotations

import os

from .cachemem import HardwareConfig
from .workload import ModelSpec, load_model

BENCHMARK_NAMES = ("rs_small", "mb_small", "ef_small", "vt_small",
                   "be_small", "wv_small", "gn_small", "pp_small")

_DIR = os.path.join(os.path.dirname(__file__), "benchmarks")


def benchmark_path(name: str) -> str:
    path = os.path.join(_DIR, name + ".json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no shipped benchmark named {name!r}")
    return path


def load_benchmark(name: str, hw: HardwareConfig | None = None) -> ModelSpec:
    return load_model(benchmark_path(name), hw=hw)


def load_all(hw: HardwareConfig | None = None):
    return [load_benchmark(name, hw=hw) for name in BENCHMARK_NAMES]
