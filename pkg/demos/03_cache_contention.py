"""Reproduce the shared-cache contention effect.

Runs the transparent baseline on a 4MB cache while raising the number of
co-located instances: the hit rate collapses and memory traffic climbs,
the motivation for giving accelerators explicit cache control.
"""

from npucachesim import HardwareConfig, Scenario, run
from npucachesim.benchmarks import load_benchmark
from npucachesim.scheduler import MODE_TRANSPARENT

hw = HardwareConfig(cache_bytes=4 * 1024 * 1024)
model = load_benchmark("be_small", hw=hw)

print(f"transparent LRU, {hw.cache_bytes >> 20}MB cache, fixed total work\n")
print(f"{'co-located':>10s} {'hit rate':>9s} {'DRAM MB':>8s} {'mean lat':>9s}")
for colocated in (1, 2, 4, 8):
    scenario = Scenario(hw=hw, models=((model, colocated),),
                        mode=MODE_TRANSPARENT, seed=5,
                        inferences_per_instance=10**9, total_inferences=32)
    rep = run(scenario)
    latency = rep.per_model[model.name]["mean_latency"]
    print(f"{colocated:10d} {rep.hit_rate:9.3f} "
          f"{rep.dram_total_bytes / 2**20:8.1f} {latency:9.0f}")
