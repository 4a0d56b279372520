"""Scaling behavior across cache sizes and co-location levels.

Sweeps the full system over cache capacities and tenant counts; traffic
falls monotonically with capacity, and the benefit grows with contention.
"""

from npucachesim import HardwareConfig, Scenario, sweep
from npucachesim.benchmarks import load_benchmark
from npucachesim.scheduler import MODE_FULL

hw = HardwareConfig()
model = load_benchmark("rs_small", hw=hw)

base = Scenario(hw=hw, models=((model, 1),), mode=MODE_FULL, seed=1010,
                inferences_per_instance=4,
                sweep={"cache_bytes": [4 * 2**20, 16 * 2**20, 64 * 2**20],
                       "colocated": [1, 8, 16]})
reports, errors = sweep(base)
assert not errors, errors

print(f"{'cache':>6s} {'tenants':>8s} {'DRAM MB':>9s} {'mean latency':>13s}")
for rep in reports:
    fields = dict(part.split("=") for part in rep.label.split(","))
    latency = rep.per_model[model.name]["mean_latency"]
    print(f"{int(fields['cache']) >> 20:5d}M {fields['colocated']:>8s} "
          f"{rep.dram_total_bytes / 2**20:9.1f} {latency:13.0f}")
