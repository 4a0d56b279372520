"""Reuse statistics of the shipped benchmark models.

Shows the two histograms behind the design: most bytes are touched once
per inference (bypass those), and intermediates sit far from their
consumers (pin those in cache).
"""

from npucachesim import HardwareConfig, reuse_stats
from npucachesim.benchmarks import BENCHMARK_NAMES, load_benchmark

hw = HardwareConfig()

print(f"{'model':10s} | reuse count %            | reuse distance %")
print(f"{'':10s} | {'1':>6s} {'2':>6s} {'3-4':>6s} {'5+':>6s} "
      f"| {'<256K':>6s} {'<1M':>6s} {'1-2M':>6s} {'>2M':>6s}")
for name in BENCHMARK_NAMES:
    model = load_benchmark(name, hw=hw)
    stats = reuse_stats(model, hw=hw)
    c = stats.pct_by_reuse_count
    d = stats.pct_intermediate_by_reuse_distance
    print(f"{name:10s} | {c['1']:6.1f} {c['2']:6.1f} {c['3-4']:6.1f} "
          f"{c['5+']:6.1f} | {d['<256KB']:6.1f} {d['256KB-1MB']:6.1f} "
          f"{d['1-2MB']:6.1f} {d['>2MB']:6.1f}")

total = 0
single = 0.0
for name in BENCHMARK_NAMES:
    stats = reuse_stats(load_benchmark(name, hw=hw), hw=hw)
    total += stats.total_bytes
    single += stats.total_bytes * stats.pct_by_reuse_count["1"] / 100
print(f"\nacross the mix, {single / total:.1%} of bytes have no reuse at "
      f"the cache level: prime bypass candidates")
