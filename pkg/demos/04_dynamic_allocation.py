"""Compare the three scheduler modes on a multi-tenant mix.

The full system (way-partitioned pages + cache-aware candidates + dynamic
allocation) against the static equal split and the transparent baseline.
Also dumps a few allocation decisions to show the candidate ladder and
the timeout/downgrade mechanism at work.
"""

from npucachesim import HardwareConfig, Scenario, compare, run
from npucachesim.benchmarks import load_all
from npucachesim.scheduler import MODE_FULL, MODE_HW_ONLY, MODE_TRANSPARENT

hw = HardwareConfig()
models = tuple((m, 2) for m in load_all())
seed = 11

reports = {}
decisions = []
for mode in (MODE_TRANSPARENT, MODE_HW_ONLY, MODE_FULL):
    scenario = Scenario(hw=hw, models=models, mode=mode, seed=seed,
                        inferences_per_instance=4)
    if mode == MODE_FULL:
        scenario.decision_log = decisions
    reports[mode] = run(scenario)

ref = reports[MODE_TRANSPARENT]
print(f"{'mode':22s} {'DRAM MB':>9s} {'geomean speedup':>16s}")
print(f"{MODE_TRANSPARENT:22s} {ref.dram_total_bytes / 2**20:9.1f} "
      f"{'1.000 (reference)':>16s}")
for mode in (MODE_HW_ONLY, MODE_FULL):
    rep = reports[mode]
    result = compare(rep, ref)
    print(f"{mode:22s} {rep.dram_total_bytes / 2**20:9.1f} "
          f"{result['geomean_speedup']:16.3f}")

downgraded = [row for row in decisions if row[6] > 0]
print(f"\n{len(decisions)} allocation decisions, "
      f"{len(downgraded)} after a timeout downgrade; a sample:")
print(f"{'cycle':>9s} {'task':>5s} {'layer':>5s} {'kind':>4s} "
      f"{'P_need':>6s} {'P_ahead':>7s} {'downgrades':>10s}")
for row in decisions[:6] + downgraded[:4]:
    print(f"{row[0]:9d} {row[1]:5d} {row[2]:5d} {row[3]:>4s} "
          f"{row[4]:6d} {row[5]:7d} {row[6]:10d}")
