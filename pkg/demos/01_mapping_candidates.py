"""Walk through offline mapping for a single layer.

Generates the mapping candidate table for one matmul-normalized layer and
prints the page-need / DRAM-traffic ladder the runtime later picks from.
"""

from npucachesim import HardwareConfig, generate_mct
from npucachesim.mapper import traffic_plan
from npucachesim.workload import LayerSpec

hw = HardwareConfig()
layer = LayerSpec(id=0, kind="Conv", M=256, N=768, K=512, elem_bytes=2)

print(f"layer: {layer.M}x{layer.N}x{layer.K} @ {layer.elem_bytes}B")
print(f"tensors: input {layer.input_bytes >> 10}KB, "
      f"weights {layer.weight_bytes >> 10}KB, "
      f"output {layer.output_bytes >> 10}KB")
print(f"usage limits (pages): {hw.usage_limits}\n")

mct = generate_mct(layer, hw)
print(f"{'kind':5s} {'pages':>5s} {'dram KB':>9s} {'compute cyc':>11s} "
      f"{'order':12s} {'tiles':15s} cached")
for cand in mct.lwms + (mct.lbm,):
    cached = ",".join(r for r, e in cand.cmap.entries
                      if e.placement == "cached") or "-"
    print(f"{cand.kind:5s} {cand.p_need:5d} {cand.est_dram_bytes >> 10:9d} "
          f"{cand.est_compute_cycles:11d} {'/'.join(cand.loop.order):12s} "
          f"{str(cand.loop.factors):15s} {cached}")

best = mct.lwms[-1]
print("\nper-tensor traffic of the largest candidate:")
for role, entry in traffic_plan(layer, best.loop, best.cmap).items():
    print(f"  {role:8s} visits {entry.visits:2d} placement {entry.placement:9s}"
          f" dram {entry.dram_read + entry.dram_write >> 10}KB")
