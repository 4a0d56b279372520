"""Cycle-approximate simulator of multi-tenant DNN execution on an
NPU-integrated SoC with a sliced, way-partitioned shared cache.

The package is a library first:

- `workload`  -- model descriptions, layer blocks, reuse statistics
- `mapper`    -- offline cache-aware mapping (candidate tables per layer)
- `cachemem`  -- shared cache with NPU-controlled regions, paging, DRAM
- `npu`       -- timed execution of one mapping candidate on one core
- `scheduler` -- runtime page allocation (dynamic, static, transparent)
- `simcore`   -- discrete-event engine, dispatch, metrics, sweeps
- `benchmarks`-- shipped desk-scale model files
- `cli`       -- `npucachesim` command (map / run / sweep / stats / compare)
"""

from .cachemem import HardwareConfig, PhysicalCacheAddress, compose, decompose
from .mapper import (MappingCandidate, MappingCandidateTable, generate_mct,
                     generate_model_mcts)
from .scheduler import MODE_FULL, MODE_HW_ONLY, MODE_TRANSPARENT
from .simcore import MetricsReport, Scenario, compare, run, sweep
from .workload import LayerSpec, ModelSpec, ReuseStats, load_model, reuse_stats

__all__ = [
    "HardwareConfig", "PhysicalCacheAddress", "compose", "decompose",
    "MappingCandidate", "MappingCandidateTable", "generate_mct",
    "generate_model_mcts", "MODE_FULL", "MODE_HW_ONLY", "MODE_TRANSPARENT",
    "MetricsReport", "Scenario", "compare", "run", "sweep",
    "LayerSpec", "ModelSpec", "ReuseStats", "load_model", "reuse_stats",
]

__version__ = "0.1.0"
