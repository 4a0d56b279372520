"""Offline cache-aware mapping.

For every layer the mapper emits a table of mapping candidates: several
layer-wise mappings (LWM), one per cache-usage limit, plus one
layer-block mapping (LBM) that keeps a block's intermediate tensors
entirely in cache.  Each candidate is a loop table (tile-loop order and
factors) plus a cache map (per-tensor placement in virtual cache address
space) plus its page need and modeled DRAM traffic.

The search replaces an external integer-programming solver with
exhaustive evaluation of a heuristically pruned grid: the objective
(minimal DRAM traffic) is identical and the pruned instances are small.

Traffic model.  Loops are named m, n, k; the input tensor depends on
(m, k), weights on (n, k), the output on (m, n).  A tensor is re-fetched
into the scratchpad whenever any loop at or above its innermost
dependent loop advances, so its per-byte reload factor is the product of
the trip counts of non-dependent loops placed outside that innermost
dependent loop.  A cached tensor crosses DRAM once regardless of reload;
a bypassed tensor pays its full per-visit traffic.  A bypassed output
revisited across reduction tiles additionally pays partial-sum
read-modify-write traffic: 2 * (visits - 1) * tensor_bytes.  The test
suite checks this model byte-for-byte against a brute-force trace
simulator replaying the tile loop nest.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, replace

from .cachemem import HardwareConfig
from .errors import ConfigError
from .workload import LayerSpec

KIND_LWM = "LWM"
KIND_LBM = "LBM"

PLACE_CACHED = "cached"
PLACE_BYPASSED = "bypassed"

ROLE_INPUT = "input"
ROLE_WEIGHTS = "weights"
ROLE_OUTPUT = "output"
ROLES = (ROLE_INPUT, ROLE_WEIGHTS, ROLE_OUTPUT)

DEPS = {
    ROLE_INPUT: ("m", "k"),
    ROLE_WEIGHTS: ("n", "k"),
    ROLE_OUTPUT: ("m", "n"),
}

# canonical stationary orders, outermost first
ORDER_OUTPUT_STATIONARY = ("m", "n", "k")
ORDER_INPUT_STATIONARY = ("m", "k", "n")
ORDER_WEIGHT_STATIONARY = ("n", "k", "m")
CANONICAL_ORDERS = (ORDER_OUTPUT_STATIONARY, ORDER_INPUT_STATIONARY,
                    ORDER_WEIGHT_STATIONARY)


@dataclass(frozen=True)
class LoopTable:
    """Tile-loop permutation (outermost first) and tile factors."""

    order: tuple
    factors: tuple  # (Tm, Tn, Tk)

    def tile(self, dim_name: str) -> int:
        return self.factors["mnk".index(dim_name)]

    def trip_counts(self, layer: LayerSpec) -> dict:
        tm, tn, tk = self.factors
        return {
            "m": -(-layer.M // tm),
            "n": -(-layer.N // tn),
            "k": -(-layer.K // tk),
        }


@dataclass(frozen=True)
class CacheMapEntry:
    placement: str
    vc_base: int = 0
    bytes: int = 0
    pinned: bool = False


@dataclass(frozen=True)
class CacheMapTable:
    """Per-tensor placement in virtual cache address space."""

    entries: tuple  # ((role, CacheMapEntry), ...) in ROLES order

    def get(self, role: str) -> CacheMapEntry:
        for r, e in self.entries:
            if r == role:
                return e
        raise KeyError(role)

    def cached_roles(self):
        return tuple(r for r, e in self.entries if e.placement == PLACE_CACHED)

    def validate(self, hw: HardwareConfig) -> None:
        spans = []
        for role, e in self.entries:
            if e.placement != PLACE_CACHED:
                continue
            if e.vc_base % hw.page_bytes:
                raise ConfigError(f"{role}: vc_base must be page-aligned")
            pages = -(-e.bytes // hw.page_bytes)
            spans.append((e.vc_base, e.vc_base + pages * hw.page_bytes, role))
        spans.sort()
        for (s0, e0, r0), (s1, e1, r1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ConfigError(f"cache map overlap between {r0} and {r1}")


@dataclass(frozen=True)
class MappingCandidate:
    kind: str
    loop: LoopTable
    cmap: CacheMapTable
    p_need: int
    est_dram_bytes: int
    est_compute_cycles: int
    scratch_bytes: int

    def dedupe_key(self):
        return (self.loop.order, self.loop.factors,
                tuple((r, e.placement, e.pinned) for r, e in self.cmap.entries))


@dataclass(frozen=True)
class MappingCandidateTable:
    """All candidates for one layer: LWMs by rising page need, one LBM."""

    layer_id: int
    lwms: tuple
    lbm: MappingCandidate


@dataclass(frozen=True)
class Subspace:
    """One pruned search subspace: a fixed loop order plus a factor grid."""

    order: tuple
    points: tuple  # feasible (Tm, Tn, Tk) triples


# ---------------------------------------------------------------------
# Heuristic pruning
# ---------------------------------------------------------------------

def tile_grid(dim: int, cap: int = 64) -> tuple:
    """Candidate tile sizes: divisors plus 16-multiples, at most `cap`."""
    vals = {d for d in range(1, dim + 1) if dim % d == 0}
    vals.update(range(16, dim + 1, 16))
    vals.add(dim)
    ordered = sorted(vals)
    if len(ordered) > cap:
        idxs = sorted({round(i * (len(ordered) - 1) / (cap - 1))
                       for i in range(cap)})
        ordered = [ordered[i] for i in idxs]
    return tuple(ordered)


def scratch_bytes_for(factors, elem_bytes: int) -> int:
    """Double-buffered scratchpad footprint of one tile set."""
    tm, tn, tk = factors
    return 2 * (tm * tk + tk * tn + tm * tn) * elem_bytes


def heuristic_prune(layer: LayerSpec, hw: HardwareConfig):
    """Shrink the search space with four rules.

    (a) Tn restricted to whole cache lines (or the full dimension);
    (b) tiles must fit the scratchpad double-buffered;
    (c) prefer tiles covering the PE array, when any such tile survives;
    (d) loop orders restricted to the three canonical stationary choices.
    Returns at most one subspace per canonical order.
    """
    line_elems = max(1, hw.line_bytes // layer.elem_bytes)
    tm_grid = tile_grid(layer.M)
    tn_grid = tuple(v for v in tile_grid(layer.N)
                    if v % line_elems == 0 or v == layer.N)
    tk_grid = tile_grid(layer.K)

    points = []
    for tm in tm_grid:
        for tk in tk_grid:
            head = 2 * (tm * tk) * layer.elem_bytes
            if head > hw.scratchpad_bytes:
                break
            for tn in tn_grid:
                if scratch_bytes_for((tm, tn, tk), layer.elem_bytes) \
                        <= hw.scratchpad_bytes:
                    points.append((tm, tn, tk))
    pe_cover = [p for p in points if p[0] * p[1] >= hw.pe_dim * hw.pe_dim]
    if pe_cover:
        points = pe_cover
    pts = tuple(points)
    return [Subspace(order=o, points=pts) for o in CANONICAL_ORDERS]


# ---------------------------------------------------------------------
# Traffic model
# ---------------------------------------------------------------------

def reload_factor(role: str, order, trips: dict) -> int:
    """Per-byte scratchpad reload count of `role` under a loop order."""
    deps = DEPS[role]
    other = next(d for d in "mnk" if d not in deps)
    innermost_dep = max(order.index(d) for d in deps)
    return trips[other] if order.index(other) < innermost_dep else 1


@dataclass(frozen=True)
class RoleTraffic:
    role: str
    bytes: int
    visits: int
    placement: str
    pinned: bool
    dram_read: int
    dram_write: int


@functools.lru_cache(maxsize=16384)
def traffic_plan(layer: LayerSpec, loop: LoopTable, cmap: CacheMapTable):
    """Per-tensor DRAM traffic under one candidate; shared with the
    execution model so estimated and observed bytes agree exactly."""
    trips = loop.trip_counts(layer)
    plan = {}
    sizes = {ROLE_INPUT: layer.input_bytes, ROLE_WEIGHTS: layer.weight_bytes,
             ROLE_OUTPUT: layer.output_bytes}
    for role in ROLES:
        entry = cmap.get(role)
        nbytes = sizes[role]
        visits = reload_factor(role, loop.order, trips)
        cached = entry.placement == PLACE_CACHED
        if role == ROLE_OUTPUT:
            if entry.pinned:
                rd, wr = 0, 0
            elif cached:
                rd, wr = 0, nbytes
            else:
                rd, wr = (visits - 1) * nbytes, visits * nbytes
        else:
            if entry.pinned:
                rd, wr = 0, 0
            elif cached:
                rd, wr = nbytes, 0
            else:
                rd, wr = visits * nbytes, 0
        plan[role] = RoleTraffic(role=role, bytes=nbytes, visits=visits,
                                 placement=entry.placement, pinned=entry.pinned,
                                 dram_read=rd, dram_write=wr)
    return plan


def dram_traffic(candidate: MappingCandidate, layer: LayerSpec) -> int:
    """Total modeled DRAM bytes for one execution of `layer`."""
    plan = traffic_plan(layer, candidate.loop, candidate.cmap)
    return sum(t.dram_read + t.dram_write for t in plan.values())


def _tile_cycle_sum(dim: int, tile: int, pe: int) -> int:
    full, edge = divmod(dim, tile)
    total = full * (-(-tile // pe))
    if edge:
        total += -(-edge // pe)
    return total


def compute_cycles(layer: LayerSpec, loop: LoopTable, pe_dim: int) -> int:
    """One cycle per PE-array wavefront, summed over the exact tile grid."""
    tm, tn, _tk = loop.factors
    return (_tile_cycle_sum(layer.M, tm, pe_dim)
            * _tile_cycle_sum(layer.N, tn, pe_dim)
            * layer.K)


# ---------------------------------------------------------------------
# Candidate construction and search
# ---------------------------------------------------------------------

def _pages(nbytes: int, hw: HardwareConfig) -> int:
    return -(-nbytes // hw.page_bytes)


def _build_cmap(layer: LayerSpec, hw: HardwareConfig, cached_roles) -> CacheMapTable:
    sizes = {ROLE_INPUT: layer.input_bytes, ROLE_WEIGHTS: layer.weight_bytes,
             ROLE_OUTPUT: layer.output_bytes}
    entries = []
    offset = 0
    for role in ROLES:
        if role in cached_roles:
            entries.append((role, CacheMapEntry(
                placement=PLACE_CACHED, vc_base=offset, bytes=sizes[role])))
            offset += _pages(sizes[role], hw) * hw.page_bytes
        else:
            entries.append((role, CacheMapEntry(placement=PLACE_BYPASSED,
                                                bytes=sizes[role])))
    return CacheMapTable(entries=tuple(entries))


def _make_candidate(layer: LayerSpec, hw: HardwareConfig, order, factors,
                    cached_roles) -> MappingCandidate:
    loop = LoopTable(order=order, factors=factors)
    cmap = _build_cmap(layer, hw, cached_roles)
    p_need = sum(_pages(cmap.get(r).bytes, hw) for r in cached_roles)
    cand = MappingCandidate(
        kind=KIND_LWM, loop=loop, cmap=cmap, p_need=p_need,
        est_dram_bytes=0, est_compute_cycles=compute_cycles(layer, loop, hw.pe_dim),
        scratch_bytes=scratch_bytes_for(factors, layer.elem_bytes))
    return replace(cand, est_dram_bytes=dram_traffic(cand, layer))


def fully_bypassed_candidate(layer: LayerSpec, hw: HardwareConfig) -> MappingCandidate:
    """The zero-page fallback: every tensor streamed, nothing cached."""
    subspaces = heuristic_prune(layer, hw)
    best = None
    for sub in subspaces:
        cand = solve_min_traffic(sub, layer, hw, limit=0)
        if cand is not None and (best is None or _rank(cand) < _rank(best)):
            best = cand
    if best is None:
        # degenerate grid; stream with unit tiles
        best = _make_candidate(layer, hw, ORDER_OUTPUT_STATIONARY,
                               (1, 1, 1), frozenset())
    return best


def _rank(cand: MappingCandidate):
    tm, tn, tk = cand.loop.factors
    return (cand.est_dram_bytes, cand.p_need, -(tm * tn * tk),
            CANONICAL_ORDERS.index(cand.loop.order), tm, tn, tk)


def solve_min_traffic(subspace: Subspace, layer: LayerSpec, hw: HardwareConfig,
                      limit: int):
    """Exhaustively evaluate one subspace under a page limit.

    For each tile point the beneficial tensors (reload factor above one)
    may be cached if the page budget allows; reload-one tensors are
    always bypassed since caching them cannot reduce traffic.  Ties break
    toward fewer pages, then larger tiles, then lexicographic order.
    """
    sizes = {ROLE_INPUT: layer.input_bytes, ROLE_WEIGHTS: layer.weight_bytes,
             ROLE_OUTPUT: layer.output_bytes}
    best = None
    best_key = None
    order = subspace.order
    for factors in subspace.points:
        tm, tn, tk = factors
        trips = {"m": -(-layer.M // tm), "n": -(-layer.N // tn),
                 "k": -(-layer.K // tk)}
        reloads = {r: reload_factor(r, order, trips) for r in ROLES}
        beneficial = [r for r in ROLES if reloads[r] > 1]
        n_opt = len(beneficial)
        for mask in range(1 << n_opt):
            cached = frozenset(beneficial[i] for i in range(n_opt)
                               if mask >> i & 1)
            pages = sum(_pages(sizes[r], hw) for r in cached)
            if pages > limit:
                continue
            traffic = 0
            for role in ROLES:
                v, b = reloads[role], sizes[role]
                if role in cached:
                    traffic += b
                elif role == ROLE_OUTPUT:
                    traffic += v * b + (v - 1) * b
                else:
                    traffic += v * b
            key = (traffic, pages, -(tm * tn * tk),
                   CANONICAL_ORDERS.index(order), tm, tn, tk, mask)
            if best_key is None or key < best_key:
                best_key = key
                best = (factors, cached)
    if best is None:
        return None
    return _make_candidate(layer, hw, order, best[0], best[1])


_BEST_LWM_CACHE: dict = {}


def best_lwm(layer: LayerSpec, hw: HardwareConfig, limit: int) -> MappingCandidate:
    """Traffic-minimal candidate across all pruned subspaces."""
    key = (hw, layer.M, layer.N, layer.K, layer.elem_bytes, limit)
    hit = _BEST_LWM_CACHE.get(key)
    if hit is not None:
        return hit
    best = None
    for sub in heuristic_prune(layer, hw):
        cand = solve_min_traffic(sub, layer, hw, limit)
        if cand is not None and (best is None or _rank(cand) < _rank(best)):
            best = cand
    if best is None:
        best = fully_bypassed_candidate(layer, hw)
    _BEST_LWM_CACHE[key] = best
    return best


def generate_mct(layer: LayerSpec, hw: HardwareConfig,
                 usage_limits=None,
                 block_layers=None) -> MappingCandidateTable:
    """Build the mapping candidate table for one layer.

    One candidate per usage limit, deduplicated; the zero-page fallback is
    always present so the table can satisfy any availability.  The LBM
    slot is block-aware when `block_layers` is given and degenerates to
    the largest LWM for a single-layer block.
    """
    if usage_limits is None:
        usage_limits = hw.usage_limits
    if not usage_limits or list(usage_limits) != sorted(usage_limits):
        raise ConfigError("usage_limits must be nonempty and ascending")
    limits = sorted(set(usage_limits) | {0})
    raw = [best_lwm(layer, hw, limit) for limit in limits]
    # dedupe identical candidates, then keep only traffic improvements
    seen = set()
    unique = []
    for cand in raw:
        k = cand.dedupe_key()
        if k not in seen:
            seen.add(k)
            unique.append(cand)
    unique.sort(key=lambda c: (c.p_need, c.est_dram_bytes))
    lwms = []
    for cand in unique:
        if not lwms:
            lwms.append(cand)
        elif cand.est_dram_bytes < lwms[-1].est_dram_bytes:
            lwms.append(cand)
    if block_layers is None:
        block_layers = (layer,)
    _, per_layer = lbm_layer_candidates(block_layers, hw)
    idx = next(i for i, l in enumerate(block_layers) if l.id == layer.id)
    return MappingCandidateTable(layer_id=layer.id, lwms=tuple(lwms),
                                 lbm=per_layer[idx])


# ---------------------------------------------------------------------
# Layer-block mapping
# ---------------------------------------------------------------------

def lbm_layer_candidates(block_layers, hw: HardwareConfig):
    """Block-level LBM plan plus its per-layer specializations.

    Every intermediate tensor of the block lives in cache and crosses
    DRAM zero times.  Consecutive intermediates ping-pong between two
    page regions; per-layer working tensors (anything the embedded
    layer-wise mapping caches) share one window sized for the largest
    layer.  Page need is the same for every member layer: the whole block
    runs inside one grant.
    """
    block_layers = tuple(block_layers)
    n = len(block_layers)
    embedded = [best_lwm(l, hw, hw.npu_pages) for l in block_layers]
    if n == 1:
        cand = replace(embedded[0], kind=KIND_LBM)
        return cand, [cand]

    inter_pages = [_pages(block_layers[i].output_bytes, hw)
                   for i in range(n - 1)]
    ping = max(inter_pages[0::2])
    pong = max(inter_pages[1::2]) if len(inter_pages) > 1 else 0
    region_base = {0: 0, 1: ping * hw.page_bytes}
    window_base = (ping + pong) * hw.page_bytes

    per_layer = []
    window_pages = 0
    for i, (layer, emb) in enumerate(zip(block_layers, embedded)):
        pinned_in = i > 0
        pinned_out = i < n - 1
        entries = []
        offset = window_base
        pages_here = 0
        for role in ROLES:
            emb_entry = emb.cmap.get(role)
            if role == ROLE_INPUT and pinned_in:
                entries.append((role, CacheMapEntry(
                    placement=PLACE_CACHED, vc_base=region_base[(i - 1) % 2],
                    bytes=layer.input_bytes, pinned=True)))
            elif role == ROLE_OUTPUT and pinned_out:
                entries.append((role, CacheMapEntry(
                    placement=PLACE_CACHED, vc_base=region_base[i % 2],
                    bytes=layer.output_bytes, pinned=True)))
            elif emb_entry.placement == PLACE_CACHED:
                entries.append((role, CacheMapEntry(
                    placement=PLACE_CACHED, vc_base=offset,
                    bytes=emb_entry.bytes)))
                pg = _pages(emb_entry.bytes, hw)
                offset += pg * hw.page_bytes
                pages_here += pg
            else:
                entries.append((role, emb_entry))
        window_pages = max(window_pages, pages_here)
        cmap = CacheMapTable(entries=tuple(entries))
        cand = MappingCandidate(
            kind=KIND_LBM, loop=emb.loop, cmap=cmap, p_need=0,
            est_dram_bytes=0, est_compute_cycles=emb.est_compute_cycles,
            scratch_bytes=emb.scratch_bytes)
        per_layer.append((layer, cand))

    p_need = ping + pong + window_pages
    final = []
    total_dram = 0
    for layer, cand in per_layer:
        est = sum(t.dram_read + t.dram_write
                  for t in traffic_plan(layer, cand.loop, cand.cmap).values())
        total_dram += est
        final.append(replace(cand, p_need=p_need, est_dram_bytes=est))
    block_cand = replace(final[0], est_dram_bytes=total_dram,
                         est_compute_cycles=sum(c.est_compute_cycles
                                                for c in final),
                         scratch_bytes=max(c.scratch_bytes for c in final))
    return block_cand, final


def lbm_candidate(block_layers, hw: HardwareConfig) -> MappingCandidate:
    """Block-level LBM candidate (page need and traffic for the block)."""
    block, _ = lbm_layer_candidates(block_layers, hw)
    return block


def lbm_footprint_pages(block_layers, hw: HardwareConfig) -> int:
    """Pages a block needs under LBM; the segmentation oracle."""
    return lbm_candidate(block_layers, hw).p_need


def counting_candidate(layer: LayerSpec, hw: HardwareConfig) -> MappingCandidate:
    """Default candidate for reuse counting: weight-stationary, full limit."""
    sub = next(s for s in heuristic_prune(layer, hw)
               if s.order == ORDER_WEIGHT_STATIONARY)
    cand = solve_min_traffic(sub, layer, hw, hw.npu_pages)
    return cand if cand is not None else fully_bypassed_candidate(layer, hw)


# ---------------------------------------------------------------------
# Model-level mapping and serialization
# ---------------------------------------------------------------------

def generate_model_mcts(model, hw: HardwareConfig, usage_limits=None) -> dict:
    """Mapping candidate tables for every layer of a (segmented) model."""
    mcts = {}
    for start, end in model.blocks:
        block = model.layers[start:end]
        for layer in block:
            mcts[layer.id] = generate_mct(layer, hw, usage_limits,
                                          block_layers=block)
    return mcts


def candidate_to_dict(cand: MappingCandidate) -> dict:
    return {
        "kind": cand.kind,
        "order": list(cand.loop.order),
        "factors": list(cand.loop.factors),
        "p_need": cand.p_need,
        "est_dram_bytes": cand.est_dram_bytes,
        "est_compute_cycles": cand.est_compute_cycles,
        "scratch_bytes": cand.scratch_bytes,
        "cmap": {
            role: {"placement": e.placement, "vc_base": e.vc_base,
                   "bytes": e.bytes, "pinned": e.pinned}
            for role, e in cand.cmap.entries
        },
    }


def candidate_from_dict(data: dict) -> MappingCandidate:
    entries = tuple(
        (role, CacheMapEntry(**data["cmap"][role])) for role in ROLES)
    return MappingCandidate(
        kind=data["kind"],
        loop=LoopTable(order=tuple(data["order"]),
                       factors=tuple(data["factors"])),
        cmap=CacheMapTable(entries=entries),
        p_need=data["p_need"],
        est_dram_bytes=data["est_dram_bytes"],
        est_compute_cycles=data["est_compute_cycles"],
        scratch_bytes=data["scratch_bytes"],
    )


def mcts_to_dict(model_name: str, mcts: dict) -> dict:
    return {
        "model": model_name,
        "layers": [
            {
                "layer": lid,
                "lwms": [candidate_to_dict(c) for c in mct.lwms],
                "lbm": candidate_to_dict(mct.lbm),
            }
            for lid, mct in sorted(mcts.items())
        ],
    }


def mcts_from_dict(data: dict) -> dict:
    mcts = {}
    for entry in data["layers"]:
        mcts[entry["layer"]] = MappingCandidateTable(
            layer_id=entry["layer"],
            lwms=tuple(candidate_from_dict(c) for c in entry["lwms"]),
            lbm=candidate_from_dict(entry["lbm"]),
        )
    return mcts


def save_mcts(path: str, model_name: str, mcts: dict) -> None:
    with open(path, "w") as fh:
        json.dump(mcts_to_dict(model_name, mcts), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_mcts(path: str) -> tuple:
    with open(path) as fh:
        data = json.load(fh)
    return data["model"], mcts_from_dict(data)
