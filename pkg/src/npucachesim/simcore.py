"""Deterministic discrete-event simulation of multi-tenant execution.

One scenario is one logical thread of execution: a seeded closed-loop
dispatcher keeps every lane (an NPU core, or a core group in replicated
mode) busy by drawing the next model from the scenario pool the moment
the previous inference finishes.  Per-lane random streams make the drawn
workload independent of timing, so two runs with the same seed produce
bit-identical metrics and different cache sizes see identical work.

Sweeps run the Cartesian product of axis values; each cell derives its
own seed from the base seed and the axis indices and may execute in a
separate process (capped by CAMDN_SIM_THREADS), with results merged by
cell index.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import json
import math
import os
import random
from dataclasses import dataclass, field, replace

from . import mapper
from .cachemem import CacheMemory, HardwareConfig
from .errors import ConfigError, InvariantViolation
from .npu import (LayerExecution, NpuCore, ProfileTable, TensorAddresses,
                  execute_layer, transparent_sweep_plan)
from .scheduler import (MODE_FULL, MODE_HW_ONLY, MODE_TRANSPARENT, MODES,
                        PageAllocator, RuntimeAllocationTables,
                        SelectionResult, cpt_mapping_for, downgrade_candidate,
                        pred_avail_pages, select_candidate, select_static,
                        static_share)
from .workload import ModelSpec, load_model, model_from_dict

PRIO_END = 0
PRIO_GRANT = 1
PRIO_TIMEOUT = 2
PRIO_START = 3

CATEGORY_INPUT = "input"
CATEGORY_WEIGHTS = "weights"
CATEGORY_OUTPUT = "output"
CATEGORY_INTERMEDIATE = "intermediate"


def mix_seed(*parts) -> int:
    """Stable hash of heterogeneous parts into a 63-bit seed."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


class Engine:
    """Event heap with a total (cycle, priority, sequence) order."""

    def __init__(self, check=None):
        self._heap = []
        self._seq = 0
        self.now = 0
        self.events_processed = 0
        self._check = check

    def schedule(self, cycle: int, prio: int, fn) -> None:
        if cycle < self.now:
            raise InvariantViolation(
                f"event scheduled at {cycle} before current cycle {self.now}")
        heapq.heappush(self._heap, (cycle, prio, self._seq, fn))
        self._seq += 1

    def run(self, max_cycles: int) -> None:
        heap = self._heap
        check = self._check
        while heap:
            cycle, _prio, _seq, fn = heapq.heappop(heap)
            if cycle > max_cycles:
                break
            self.now = cycle
            self.events_processed += 1
            fn(cycle)
            if check is not None:
                check()


@dataclass
class Scenario:
    """One experiment: hardware, a model pool, a mode and a stop rule."""

    hw: HardwareConfig
    models: tuple  # ((ModelSpec, instances), ...)
    mode: str
    seed: int
    inferences_per_instance: int = 100
    total_inferences: int | None = None
    max_cycles: int = 10**9
    replicas: int = 1
    allow_lbm: bool | None = None
    usage_limits: tuple | None = None
    sweep: dict | None = None
    label: str = ""
    check_invariants: bool = True
    decision_log: list | None = None
    trace: object = None
    cache_factory: object = None  # hook for instrumented cache models

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; pick from {MODES}")
        if not self.models or sum(c for _, c in self.models) < 1:
            raise ConfigError("scenario needs at least one model instance")
        if self.seed is None:
            raise ConfigError("scenario seed is mandatory")
        if self.replicas < 1 or self.hw.num_npus // self.replicas < 1:
            raise ConfigError("replicas must fit the core count")
        if self.allow_lbm is None:
            self.allow_lbm = self.hw.enable_lbm

    @property
    def total_instances(self) -> int:
        return sum(c for _, c in self.models)


def scenario_from_dict(data: dict, base_dir: str = ".") -> Scenario:
    """Build a scenario from its JSON form (see README for the schema)."""
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    hw_field = data.get("hardware", {})
    if isinstance(hw_field, str):
        hw = HardwareConfig.from_json(os.path.join(base_dir, hw_field))
    else:
        hw = HardwareConfig.from_dict(hw_field)
    models = []
    for entry in data.get("models", []):
        instances = int(entry.get("instances", 1))
        if "file" in entry:
            model = load_model(os.path.join(base_dir, entry["file"]), hw=hw)
        elif "inline" in entry:
            model = model_from_dict(entry["inline"], hw=hw)
        else:
            raise ConfigError("each model entry needs 'file' or 'inline'")
        models.append((model, instances))
    stop = data.get("stop", {})
    if "seed" not in data:
        raise ConfigError("scenario requires an explicit seed")
    return Scenario(
        hw=hw, models=tuple(models),
        mode=data.get("mode", MODE_FULL),
        seed=int(data["seed"]),
        inferences_per_instance=int(stop.get("inferences_per_instance", 100)),
        total_inferences=(int(stop["total_inferences"])
                          if "total_inferences" in stop else None),
        max_cycles=int(stop.get("max_cycles", 10**9)),
        replicas=int(data.get("replicas", 1)),
        allow_lbm=data.get("allow_lbm"),
        sweep=data.get("sweep"),
        label=data.get("label", ""),
    )


@dataclass
class MetricsReport:
    """Per-model and aggregate results of one scenario run."""

    label: str
    mode: str
    seed: int
    cycles: int
    inferences: int
    events: int              # scheduled events plus timed requests
    per_model: dict          # name -> {inferences, mean_latency, dram_*}
    dram_read_bytes: int
    dram_write_bytes: int
    dram_bytes_by_category: dict
    cache_hits: int
    cache_misses: int
    hit_rate: float | None
    speedup: dict | None = None  # filled by compare()

    @property
    def dram_total_bytes(self) -> int:
        return self.dram_read_bytes + self.dram_write_bytes

    def to_dict(self) -> dict:
        return {
            "label": self.label, "mode": self.mode, "seed": self.seed,
            "cycles": self.cycles, "inferences": self.inferences,
            "events": self.events, "per_model": self.per_model,
            "dram_read_bytes": self.dram_read_bytes,
            "dram_write_bytes": self.dram_write_bytes,
            "dram_total_bytes": self.dram_total_bytes,
            "dram_bytes_by_category": self.dram_bytes_by_category,
            "cache_hits": self.cache_hits, "cache_misses": self.cache_misses,
            "hit_rate": self.hit_rate, "speedup": self.speedup,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def csv_rows(self, cell: str = "-"):
        rows = []
        for name in sorted(self.per_model):
            stats = self.per_model[name]
            speed = ""
            if self.speedup and name in self.speedup.get("models", {}):
                speed = f"{self.speedup['models'][name]['speedup']:.6g}"
            rows.append([
                cell, name, f"{stats['mean_latency']:.6g}",
                stats["dram_read_bytes"], stats["dram_write_bytes"],
                "" if self.hit_rate is None else f"{self.hit_rate:.6g}",
                speed,
            ])
        return rows


CSV_HEADER = ["cell", "model", "latency", "dram_read", "dram_write",
              "hit_rate", "speedup"]


@dataclass
class _Task:
    task_id: int
    lane: int
    cores: tuple
    model: ModelSpec
    mcts: dict
    start_cycle: int
    layer_idx: int = 0
    lbm_enabled: bool = False
    lbm_block: tuple | None = None
    held_pages: list = field(default_factory=list)
    selection: SelectionResult | None = None
    downgrades: int = 0
    waiter: object = None
    addr_io: list = field(default_factory=list)
    addr_w: list = field(default_factory=list)

    def addresses(self, layer_idx: int) -> TensorAddresses:
        return TensorAddresses(input=self.addr_io[layer_idx],
                               weights=self.addr_w[layer_idx],
                               output=self.addr_io[layer_idx + 1])


class _Run:
    """Mutable state of one scenario execution."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.hw = scenario.hw
        self.transparent = scenario.mode == MODE_TRANSPARENT
        factory = scenario.cache_factory or CacheMemory
        self.cache = factory(self.hw, transparent=self.transparent,
                             trace=scenario.trace)
        self.tables = RuntimeAllocationTables(total_pages=self.hw.npu_pages)
        self.allocator = PageAllocator(self.hw, self.cache, self.tables)
        self.profile = ProfileTable(self.hw)
        check = (self._check if scenario.check_invariants
                 and not self.transparent else None)
        self.engine = Engine(check=check)
        self.share = static_share(self.hw)
        self.cores = [NpuCore(id=i, hw=self.hw)
                      for i in range(self.hw.num_npus)]
        self.mcts_by_model = {}
        self.model_index = {}
        pool = []
        for model, count in scenario.models:
            if model.name not in self.mcts_by_model:
                self.model_index[model.name] = len(self.model_index)
                self.mcts_by_model[model.name] = mapper.generate_model_mcts(
                    model, self.hw, scenario.usage_limits)
            pool.extend([model] * count)
        self.pool = pool
        group = scenario.replicas
        self.lanes = min(scenario.total_instances,
                         self.hw.num_npus // group)
        self.lane_cores = [tuple(range(l * group, (l + 1) * group))
                           for l in range(self.lanes)]
        self.lane_rng = [random.Random(mix_seed(scenario.seed, lane))
                         for lane in range(self.lanes)]
        self.lane_done = [0] * self.lanes
        self.dispatched = 0
        self.completed = 0
        self.next_task_id = 0
        self.model_latencies: dict = {}
        self.model_dram: dict = {}
        self.exec_dram_total = 0

    # -- invariants ----------------------------------------------------
    def _check(self):
        self.tables.check_conservation(self.allocator)

    # -- dispatch -------------------------------------------------------
    def _quota_left(self, lane: int) -> bool:
        if self.lane_done[lane] >= self.sc.inferences_per_instance:
            return False
        if (self.sc.total_inferences is not None
                and self.dispatched >= self.sc.total_inferences):
            return False
        return True

    def dispatch(self, lane: int, now: int) -> None:
        if not self._quota_left(lane):
            return
        model = self.lane_rng[lane].choice(self.pool)
        task = _Task(task_id=self.next_task_id, lane=lane,
                     cores=self.lane_cores[lane], model=model,
                     mcts=self.mcts_by_model[model.name], start_cycle=now)
        self.next_task_id += 1
        self.dispatched += 1
        self._build_addresses(task)
        if not self.transparent:
            self.tables.register(task.task_id, now)
        self.start_layer(task, now)

    def _build_addresses(self, task: _Task) -> None:
        hw = self.hw
        line = hw.line_bytes
        sets_total = hw.slices * hw.sets_per_slice

        def aligned(nbytes):
            return -(-nbytes // line) * line

        def stagger(*parts):
            # real allocators land buffers at varied set alignments; an
            # all-zero low-bit layout would alias every region onto set 0
            return (mix_seed(*parts) % sets_total) << hw.offset_bits

        base = ((task.task_id + 1) << 34) + stagger("task", task.task_id)
        cursor = base
        for layer in task.model.layers:
            if layer.weight_resident:
                # resident weights stay at a fixed address per instance, so
                # repeated inferences can reuse them in a transparent cache
                midx = self.model_index[task.model.name]
                task.addr_w.append(
                    1 << 58 | midx << 50 | task.lane << 40 | layer.id << 34
                    | stagger("resident", midx, task.lane, layer.id))
            else:
                task.addr_w.append(cursor)
                cursor += aligned(layer.weight_bytes)
        task.addr_io.append(cursor)
        cursor += aligned(task.model.layers[0].input_bytes)
        for layer in task.model.layers:
            task.addr_io.append(cursor)
            cursor += aligned(layer.output_bytes)

    # -- per-layer flow ---------------------------------------------------
    def start_layer(self, task: _Task, now: int) -> None:
        model = task.model
        lid = task.layer_idx
        mct = task.mcts[lid]
        if self.transparent:
            # a cache-oblivious compiler tiles for minimal memory traffic
            # without controlling the cache: the pure-streaming candidate;
            # the transparent cache absorbs whatever repeats it can
            cand = mct.lwms[0]
            sel = SelectionResult(candidate=cand, pages_needed=0,
                                  timeout_cycle=None, p_ahead=0)
            task.selection = sel
            self._log_decision(task, sel, now)
            self._execute(task, cand, now)
            return

        head = model.is_block_head(lid)
        if self.sc.mode == MODE_HW_ONLY:
            sel = select_static(mct, self.share, head, task.lbm_enabled,
                                allow_lbm=self.sc.allow_lbm)
        else:
            blk = model.block_of(lid)
            fallbacks = [task.mcts[i].lwms[-1] for i in range(blk[0], blk[1])]
            block_est = self.profile.block_estimate(
                model.name, range(blk[0], blk[1]), fallbacks)
            layer_est = self.profile.layer_estimate(model.name, lid,
                                                    mct.lwms[-1])
            sel = select_candidate(mct, self.tables, task.task_id, now,
                                   layer_est, block_est, head,
                                   task.lbm_enabled, self.hw.timeout_factor,
                                   allow_lbm=self.sc.allow_lbm)
        task.selection = sel
        task.downgrades = 0
        self._log_decision(task, sel, now)

        if task.lbm_enabled:
            # pages held since the block head; no reallocation
            self._execute(task, sel.candidate, now)
            return
        self._request_pages(task, sel, now)

    def _request_pages(self, task: _Task, sel: SelectionResult,
                       now: int) -> None:
        grant = self.allocator.try_allocate(task.task_id, sel.pages_needed,
                                            now)
        if grant is not None:
            self._granted(task, grant, now)
            return
        if sel.timeout_cycle is None:
            raise InvariantViolation(
                f"task {task.task_id} would wait forever for "
                f"{sel.pages_needed} pages")
        task.waiter = self.allocator.enqueue(
            task.task_id, sel.pages_needed, now,
            lambda pcpns, cycle, t=task: self._granted(t, pcpns, cycle))
        if sel.timeout_cycle is not None:
            self._schedule_timeout(task, task.waiter, sel.timeout_cycle)

    def _schedule_timeout(self, task: _Task, waiter, cycle: float) -> None:
        when = max(self.engine.now, int(math.ceil(cycle)))
        self.engine.schedule(when, PRIO_TIMEOUT,
                             lambda c, t=task, w=waiter: self._timeout(t, w, c))

    def _timeout(self, task: _Task, waiter, now: int) -> None:
        if not waiter.active or task.waiter is not waiter:
            return
        mct = task.mcts[task.layer_idx]
        sel = task.selection
        next_cand = downgrade_candidate(mct, sel.candidate)
        task.downgrades += 1
        layer_est = self.profile.layer_estimate(task.model.name,
                                                task.layer_idx, mct.lwms[-1])
        t_ahead = now + layer_est * self.hw.timeout_factor
        p_ahead = pred_avail_pages(self.tables, t_ahead, task.task_id)
        task.selection = SelectionResult(
            candidate=next_cand, pages_needed=next_cand.p_need,
            timeout_cycle=t_ahead, p_ahead=p_ahead)
        self._log_decision(task, task.selection, now)
        if next_cand.p_need == 0:
            waiter.active = False
            task.waiter = None
            self._granted(task, [], now)
            return
        self.allocator.update_waiter(waiter, next_cand.p_need)
        self._serve_queue(now)
        if waiter.active:
            self._schedule_timeout(task, waiter, t_ahead)

    def _serve_queue(self, now: int) -> None:
        for waiter, grant in self.allocator.serve(now):
            self.engine.schedule(now, PRIO_GRANT,
                                 lambda c, w=waiter, g=grant: w.on_grant(g, c))

    def _granted(self, task: _Task, pcpns, now: int) -> None:
        task.waiter = None
        sel = task.selection
        task.held_pages.extend(pcpns)
        delay = 0
        if pcpns:
            mapping = cpt_mapping_for(sel.candidate, self.hw, pcpns)
            for c in task.cores:
                self.cache.cpts[c].program(mapping)
            delay = self.hw.cpt_program_cycles
        if sel.lbm_head:
            task.lbm_enabled = True
            task.lbm_block = task.model.block_of(task.layer_idx)
        if delay:
            self.engine.schedule(now + delay, PRIO_START,
                                 lambda c, t=task: self._execute(
                                     t, t.selection.candidate, c))
        else:
            self._execute(task, sel.candidate, now)

    def _execute(self, task: _Task, candidate, now: int) -> None:
        lid = task.layer_idx
        layer = task.model.layers[lid]
        core = self.cores[task.cores[0]]
        if self.transparent:
            self._start_transparent(task, candidate, now)
            return
        cats = {
            "input": CATEGORY_INPUT if lid == 0 else CATEGORY_INTERMEDIATE,
            "weights": CATEGORY_WEIGHTS,
            "output": (CATEGORY_OUTPUT if lid == task.model.num_layers - 1
                       else CATEGORY_INTERMEDIATE),
        }
        group = task.cores if len(task.cores) > 1 else ()
        exec_rec = execute_layer(core, self.cache, task.task_id, layer,
                                 candidate, now, task.addresses(lid), cats,
                                 group=group)
        self._account_execution(task, exec_rec)
        self.engine.schedule(exec_rec.end, PRIO_END,
                             lambda c, t=task, e=exec_rec: self._layer_end(
                                 t, e, c))

    def _start_transparent(self, task: _Task, candidate, now: int) -> None:
        """Drive one layer through the LRU cache, one sweep per event.

        Sweeps are spread over the compute interval so co-running tasks
        interleave between them; a miss pushes the next sweep past its
        planned cycle (demand misses stall a hardware-managed cache).
        """
        lid = task.layer_idx
        layer = task.model.layers[lid]
        sweeps = transparent_sweep_plan(layer, candidate, task.addresses(lid))
        compute = candidate.est_compute_cycles
        line = self.hw.line_bytes
        # accumulated across this layer's sweep events; global counters are
        # useless per layer because co-runners interleave
        state = {"start": now, "mem_done": now, "hits": 0, "misses": 0,
                 "wb_lines": 0, "kind": candidate.kind}
        step = max(1, compute // max(1, len(sweeps)))

        def run_sweep(cycle, i=0):
            base, nbytes, is_write = sweeps[i]
            hits, misses, wb, done = self.cache.lru_sweep(
                task.cores[0], base, nbytes, is_write, cycle)
            state["mem_done"] = max(state["mem_done"], done)
            state["hits"] += hits
            state["misses"] += misses
            state["wb_lines"] += wb
            nxt = i + 1
            if nxt < len(sweeps):
                planned = state["start"] + step * (nxt + 1)
                when = max(planned, state["mem_done"], cycle)
                self.engine.schedule(when, PRIO_END,
                                     lambda c, j=nxt: run_sweep(c, j))
            else:
                end = max(state["start"] + compute, state["mem_done"])
                exec_rec = LayerExecution(
                    task_id=task.task_id, layer_id=lid, kind=state["kind"],
                    start=state["start"], end=end,
                    dram_read_bytes=state["misses"] * line,
                    dram_write_bytes=state["wb_lines"] * line,
                    cache_hits=state["hits"],
                    cache_misses=state["misses"])
                self._account_execution(task, exec_rec)
                self.engine.schedule(end, PRIO_END,
                                     lambda c, t=task, e=exec_rec:
                                     self._layer_end(t, e, c))

        self.engine.schedule(now + step, PRIO_END,
                             lambda c: run_sweep(c, 0))

    def _account_execution(self, task: _Task, exec_rec) -> None:
        self.exec_dram_total += exec_rec.dram_bytes
        dram = self.model_dram.setdefault(task.model.name, [0, 0])
        dram[0] += exec_rec.dram_read_bytes
        dram[1] += exec_rec.dram_write_bytes

    def _layer_end(self, task: _Task, exec_rec: LayerExecution,
                   now: int) -> None:
        model = task.model
        lid = task.layer_idx
        self.profile.record(model.name, lid, exec_rec.end - exec_rec.start,
                            fallback=task.mcts[lid].lwms[-1])
        last_layer = lid == model.num_layers - 1
        block_end = task.lbm_enabled and lid == task.lbm_block[1] - 1
        keep = task.lbm_enabled and not block_end and not last_layer

        if not self.transparent and not keep and task.held_pages:
            pages = task.held_pages
            task.held_pages = []
            for c in task.cores:
                self.cache.cpts[c].invalidate()
            self.allocator.release(task.task_id, pages, now)
        if block_end or last_layer:
            task.lbm_enabled = False
            task.lbm_block = None

        if last_layer:
            self._finish_task(task, now)
        else:
            task.layer_idx += 1
            if not self.transparent:
                self._update_forecast(task, now)
            self.start_layer(task, now)
        if not self.transparent:
            self._serve_queue(now)

    def _update_forecast(self, task: _Task, now: int) -> None:
        model = task.model
        nid = task.layer_idx
        mct_next = task.mcts[nid]
        if task.lbm_enabled:
            blk = task.lbm_block
            fallbacks = [task.mcts[i].lwms[-1] for i in range(nid, blk[1])]
            remaining = self.profile.block_estimate(
                model.name, range(nid, blk[1]), fallbacks)
            self.tables.time_next[task.task_id] = now + remaining
            self.tables.pages_next[task.task_id] = mct_next.lbm.p_need
            return
        self.tables.time_next[task.task_id] = now
        p_avail = pred_avail_pages(self.tables, now, task.task_id)
        nxt = mct_next.lwms[0]
        for cand in mct_next.lwms:
            if nxt.p_need < cand.p_need <= p_avail:
                nxt = cand
        self.tables.pages_next[task.task_id] = nxt.p_need

    def _finish_task(self, task: _Task, now: int) -> None:
        if not self.transparent:
            self.tables.remove(task.task_id)
        self.model_latencies.setdefault(task.model.name, []).append(
            now - task.start_cycle)
        self.completed += 1
        self.lane_done[task.lane] += 1
        self.engine.schedule(now, PRIO_START,
                             lambda c, lane=task.lane: self.dispatch(lane, c))

    def _log_decision(self, task: _Task, sel: SelectionResult,
                      now: int) -> None:
        log = self.sc.decision_log
        if log is not None:
            log.append([now, task.task_id, task.layer_idx,
                        sel.candidate.kind, sel.pages_needed, sel.p_ahead,
                        task.downgrades])

    # -- top level ---------------------------------------------------------
    def run(self) -> MetricsReport:
        for lane in range(self.lanes):
            self.engine.schedule(0, PRIO_START,
                                 lambda c, l=lane: self.dispatch(l, c))
        self.engine.run(self.sc.max_cycles)
        cache = self.cache
        observed = cache.dram_read_bytes + cache.dram_write_bytes
        if observed != self.exec_dram_total:
            raise InvariantViolation(
                f"accounting closure broken: cache counters {observed} != "
                f"sum of layer executions {self.exec_dram_total}")
        per_model = {}
        for name in sorted(self.model_latencies):
            lats = self.model_latencies[name]
            dram = self.model_dram.get(name, [0, 0])
            per_model[name] = {
                "inferences": len(lats),
                "mean_latency": sum(lats) / len(lats),
                "dram_read_bytes": dram[0],
                "dram_write_bytes": dram[1],
            }
        return MetricsReport(
            label=self.sc.label, mode=self.sc.mode, seed=self.sc.seed,
            cycles=self.engine.now, inferences=self.completed,
            events=self.engine.events_processed + cache.timed_ops,
            per_model=per_model,
            dram_read_bytes=cache.dram_read_bytes,
            dram_write_bytes=cache.dram_write_bytes,
            dram_bytes_by_category=dict(sorted(
                cache.dram_bytes_by_role.items())),
            cache_hits=cache.cache_hits, cache_misses=cache.cache_misses,
            hit_rate=cache.hit_rate if self.transparent else None)


def run(scenario: Scenario) -> MetricsReport:
    """Run one scenario to completion and aggregate its metrics."""
    return _Run(scenario).run()


# ---------------------------------------------------------------------
# Comparison and sweeps
# ---------------------------------------------------------------------

def compare(report: MetricsReport, reference: MetricsReport) -> dict:
    """Per-model speedups and traffic reduction of `report` vs `reference`.

    Speedup averages use the geometric mean.
    """
    if set(report.per_model) != set(reference.per_model):
        raise ConfigError("scenario shape mismatch: different model sets")
    models = {}
    logs = []
    for name in sorted(report.per_model):
        mine = report.per_model[name]
        ref = reference.per_model[name]
        speed = ref["mean_latency"] / mine["mean_latency"]
        mine_dram = mine["dram_read_bytes"] + mine["dram_write_bytes"]
        ref_dram = ref["dram_read_bytes"] + ref["dram_write_bytes"]
        models[name] = {
            "speedup": speed,
            "dram_reduction_pct":
                100.0 * (1.0 - mine_dram / ref_dram) if ref_dram else 0.0,
        }
        logs.append(math.log(speed))
    total_ref = reference.dram_total_bytes
    result = {
        "reference": reference.label or reference.mode,
        "models": models,
        "geomean_speedup": math.exp(sum(logs) / len(logs)),
        "dram_reduction_pct":
            100.0 * (1.0 - report.dram_total_bytes / total_ref)
            if total_ref else 0.0,
    }
    report.speedup = result
    return result


def _colocate(models, count: int):
    """Distribute `count` instance slots round-robin over the model list."""
    base = [m for m, _ in models]
    counts = [0] * len(base)
    for i in range(count):
        counts[i % len(base)] += 1
    return tuple((m, c) for m, c in zip(base, counts) if c > 0)


def sweep_cells(scenario: Scenario):
    """Expand the scenario's sweep axes into concrete cell scenarios."""
    axes = scenario.sweep or {}
    cache_axis = axes.get("cache_bytes", [scenario.hw.cache_bytes])
    colo_axis = axes.get("colocated", [scenario.total_instances])
    mode_axis = axes.get("mode", [scenario.mode])
    cells = []
    for ci, cache_bytes in enumerate(cache_axis):
        for ni, colocated in enumerate(colo_axis):
            for mi, mode in enumerate(mode_axis):
                label = (f"cache={cache_bytes},colocated={colocated},"
                         f"mode={mode}")
                cell = replace(
                    scenario,
                    hw=scenario.hw.with_cache_bytes(int(cache_bytes)),
                    models=_colocate(scenario.models, int(colocated)),
                    mode=mode,
                    seed=mix_seed(scenario.seed, ci, ni, mi),
                    sweep=None, label=label)
                cells.append(cell)
    return cells


def _run_cell(cell: Scenario):
    try:
        return run(cell), None
    except Exception as exc:  # cell failures must not kill sibling cells
        return None, f"{cell.label}: {exc}"


def sweep(scenario: Scenario):
    """Run every cell of the sweep; returns (reports, errors).

    Cells are independent; failures are reported per cell.  Parallelism
    is capped by the CAMDN_SIM_THREADS environment variable (default 1);
    results merge in cell order either way.
    """
    cells = sweep_cells(scenario)
    threads = int(os.environ.get("CAMDN_SIM_THREADS", "1"))
    if threads > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_cell, cells))
    else:
        outcomes = [_run_cell(cell) for cell in cells]
    reports = [r for r, _ in outcomes if r is not None]
    errors = [e for _, e in outcomes if e is not None]
    return reports, errors


def reports_to_csv(reports) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(CSV_HEADER)
    for report in reports:
        for row in report.csv_rows(report.label or "-"):
            writer.writerow(row)
    return out.getvalue()
