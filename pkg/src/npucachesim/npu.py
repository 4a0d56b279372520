"""Timed execution of one mapping candidate on one NPU core.

A layer execution is modeled at sweep granularity rather than tile by
tile: per tensor, the traffic plan says how many times the whole tensor
crosses each boundary, and the core issues one aggregated request per
sweep.  Double buffering overlaps loads with compute, so the layer
latency is the maximum of the compute time, the DRAM completion span and
the cache-access time, never their sum.  Byte counters are exact: the
bytes a core moves equal the mapper's traffic estimate for the same
candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cachemem import (CacheMemory, HardwareConfig, NecRequest,
                       KIND_BYPASS_READ, KIND_BYPASS_WRITE, KIND_FETCH,
                       KIND_MULTICAST_BYPASS_READ, KIND_MULTICAST_READ,
                       KIND_READ, KIND_WRITE, KIND_WRITEBACK)
from .errors import ScratchpadOverflow
from .mapper import (MappingCandidate, PLACE_CACHED, ROLE_INPUT, ROLE_OUTPUT,
                     ROLE_WEIGHTS, ROLES, traffic_plan)
from .workload import LayerSpec


@dataclass
class NpuCore:
    """One accelerator core; owned by the event engine."""

    id: int
    hw: HardwareConfig
    busy_until: int = 0


@dataclass(frozen=True)
class LayerExecution:
    """Observed outcome of running one layer on one core."""

    task_id: object
    layer_id: int
    kind: str
    start: int
    end: int
    dram_read_bytes: int
    dram_write_bytes: int
    cache_hits: int
    cache_misses: int

    @property
    def dram_bytes(self) -> int:
        return self.dram_read_bytes + self.dram_write_bytes


@dataclass(frozen=True)
class TensorAddresses:
    """DRAM-side addresses of one layer's tensors for one task."""

    input: int
    weights: int
    output: int

    def get(self, role: str) -> int:
        return getattr(self, role)


def execute_layer(core: NpuCore, cache: CacheMemory, task_id, layer: LayerSpec,
                  candidate: MappingCandidate, now: int,
                  addrs: TensorAddresses, roles_category: dict,
                  group: tuple = ()) -> LayerExecution:
    """Run one layer in paged mode; returns timing plus observed traffic.

    `roles_category` maps tensor role to an accounting category (external
    input / weights / intermediate / output) used for the per-category
    DRAM counters.  `group` lists sibling cores running the same task in
    replicated-inference mode; reads become multicast kinds and are
    counted once.
    """
    if candidate.scratch_bytes > core.hw.scratchpad_bytes:
        raise ScratchpadOverflow(
            f"candidate needs {candidate.scratch_bytes}B scratchpad on core "
            f"{core.id} ({core.hw.scratchpad_bytes}B available)")

    plan = traffic_plan(layer, candidate.loop, candidate.cmap)
    read0, write0 = cache.dram_read_bytes, cache.dram_write_bytes
    hits0, misses0 = cache.cache_hits, cache.cache_misses
    mem_done, cache_time = _issue_paged(core, cache, plan, candidate, addrs,
                                        roles_category, now, group)
    compute = candidate.est_compute_cycles
    end = now + max(compute, mem_done - now, cache_time)
    return LayerExecution(
        task_id=task_id, layer_id=layer.id, kind=candidate.kind,
        start=now, end=end,
        dram_read_bytes=cache.dram_read_bytes - read0,
        dram_write_bytes=cache.dram_write_bytes - write0,
        cache_hits=cache.cache_hits - hits0,
        cache_misses=cache.cache_misses - misses0)


def _issue_paged(core, cache, plan, candidate, addrs, roles_category, now,
                 group):
    """NPU-controlled access: explicit fetch/bypass/writeback per sweep."""
    hw = core.hw
    mem_done = now
    batches = 0
    read_kind = KIND_MULTICAST_READ if group else KIND_READ
    bypass_read_kind = KIND_MULTICAST_BYPASS_READ if group else KIND_BYPASS_READ
    for role in ROLES:
        t = plan[role]
        cat = roles_category.get(role, role)
        entry = candidate.cmap.get(role)
        mem_addr = addrs.get(role)
        if role == ROLE_OUTPUT:
            if t.pinned:
                batches += 2 * t.visits - 1
                cache.nec_execute(NecRequest(
                    kind=KIND_WRITE, requester=core.id, address=entry.vc_base,
                    bytes=t.bytes, role=cat), now)
            elif t.placement == PLACE_CACHED:
                batches += 2 * t.visits - 1
                cache.nec_execute(NecRequest(
                    kind=KIND_WRITE, requester=core.id, address=entry.vc_base,
                    bytes=t.bytes, role=cat), now)
                done = cache.nec_execute(NecRequest(
                    kind=KIND_WRITEBACK, requester=core.id,
                    address=entry.vc_base, bytes=t.bytes,
                    mem_address=mem_addr, role=cat), now)
                mem_done = max(mem_done, done)
            else:
                done = cache.nec_execute(NecRequest(
                    kind=KIND_BYPASS_WRITE, requester=core.id,
                    address=mem_addr, bytes=t.bytes, role=cat), now)
                mem_done = max(mem_done, done)
                for _ in range(t.visits - 1):
                    done = cache.nec_execute(NecRequest(
                        kind=bypass_read_kind, requester=core.id,
                        address=mem_addr, bytes=t.bytes, role=cat,
                        group=group), now)
                    done = max(done, cache.nec_execute(NecRequest(
                        kind=KIND_BYPASS_WRITE, requester=core.id,
                        address=mem_addr, bytes=t.bytes, role=cat), now))
                    mem_done = max(mem_done, done)
        else:
            if t.pinned:
                batches += t.visits
                cache.nec_execute(NecRequest(
                    kind=read_kind, requester=core.id, address=entry.vc_base,
                    bytes=t.bytes, role=cat, group=group), now)
            elif t.placement == PLACE_CACHED:
                done = cache.nec_execute(NecRequest(
                    kind=KIND_FETCH, requester=core.id, address=entry.vc_base,
                    bytes=t.bytes, mem_address=mem_addr, role=cat), now)
                mem_done = max(mem_done, done)
                batches += t.visits
                cache.nec_execute(NecRequest(
                    kind=read_kind, requester=core.id, address=entry.vc_base,
                    bytes=t.bytes, role=cat, group=group), now)
            else:
                for _ in range(t.visits):
                    done = cache.nec_execute(NecRequest(
                        kind=bypass_read_kind, requester=core.id,
                        address=mem_addr, bytes=t.bytes, role=cat,
                        group=group), now)
                    mem_done = max(mem_done, done)
    return mem_done, batches * hw.cache_hit_cycles


def transparent_sweep_plan(layer: LayerSpec, candidate: MappingCandidate,
                           addrs: TensorAddresses):
    """Ordered (base, bytes, is_write) sweeps of one layer for LRU mode.

    Input and weight visits come first, the output visits (including
    partial-sum read-modify-write revisits) last, mirroring when each
    tensor's traffic completes.  The caller spreads these sweeps over the
    layer's compute interval so co-running tasks interleave between them;
    a hardware-managed cache discovers misses at use time, so each miss
    stalls the stream rather than overlapping with compute the way the
    paged mode's explicit prefetches do.
    """
    plan = traffic_plan(layer, candidate.loop, candidate.cmap)
    # visits of different tensors alternate the way the loop nest revisits
    # them; output revisits keep their read-modify-write pair adjacent
    queues = {role: plan[role].visits for role in ROLES}
    sweeps = []
    round_idx = 0
    while any(queues.values()):
        for role in ROLES:
            if queues[role] <= 0:
                continue
            queues[role] -= 1
            base = addrs.get(role)
            nbytes = plan[role].bytes
            if role == ROLE_OUTPUT:
                if round_idx > 0:
                    sweeps.append((base, nbytes, False))
                sweeps.append((base, nbytes, True))
            else:
                sweeps.append((base, nbytes, False))
        round_idx += 1
    return sweeps


class ProfileTable:
    """Profiling-based latency estimates, per (model, layer).

    Before the first observation the estimate falls back to the analytic
    bound of the layer's largest candidate: compute cycles or the
    bandwidth bound, whichever is larger.  Observations update by an
    exponential moving average with alpha = 0.5.
    """

    ALPHA = 0.5

    def __init__(self, hw: HardwareConfig):
        self.hw = hw
        self._obs: dict = {}

    def analytic_estimate(self, candidate: MappingCandidate) -> int:
        bw = float(self.hw.dram_bw_bytes_per_cycle)
        traffic_bound = int(candidate.est_dram_bytes / bw)
        return max(candidate.est_compute_cycles, traffic_bound)

    def record(self, model_name: str, layer_id: int, latency: int,
               fallback: MappingCandidate | None = None) -> None:
        key = (model_name, layer_id)
        prev = self._obs.get(key)
        if prev is None and fallback is not None:
            # the first observation blends with the analytic prior
            prev = float(self.analytic_estimate(fallback))
        if prev is None:
            self._obs[key] = float(latency)
        else:
            self._obs[key] = self.ALPHA * latency + (1 - self.ALPHA) * prev

    def layer_estimate(self, model_name: str, layer_id: int,
                       fallback: MappingCandidate) -> float:
        est = self._obs.get((model_name, layer_id))
        if est is None:
            return float(self.analytic_estimate(fallback))
        return est

    def block_estimate(self, model_name: str, layer_ids, fallbacks) -> float:
        return sum(self.layer_estimate(model_name, lid, fb)
                   for lid, fb in zip(layer_ids, fallbacks))
