"""Runtime cache allocation.

Three modes:

* camdn-full -- the dynamic allocation algorithm: at each layer head it
  predicts near-future available pages from per-task reallocation
  forecasts, selects the largest candidate that fits, and waits for
  pages with a timeout; every timeout downgrades to the candidate
  needing strictly fewer pages, ending at the zero-page fallback.
* camdn-hw-only -- pages statically split equally among cores; each task
  always takes the largest candidate fitting its share.
* transparent-baseline -- no page management at all; the cache runs as a
  set-associative LRU shared by everything.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cachemem import CacheMemory, HardwareConfig
from .errors import InvariantViolation
from .mapper import (MappingCandidate, MappingCandidateTable,
                     PLACE_CACHED as PLACE_CACHED_STR)

MODE_FULL = "camdn-full"
MODE_HW_ONLY = "camdn-hw-only"
MODE_TRANSPARENT = "transparent-baseline"
MODES = (MODE_FULL, MODE_HW_ONLY, MODE_TRANSPARENT)

UNBOUNDED = None


@dataclass
class RuntimeAllocationTables:
    """Per-task forecasts driving the allocation algorithm.

    time_next: predicted next reallocation cycle per task;
    pages_next: predicted pages needed at that reallocation;
    pages_alloc: pages currently held.  The idle count plus all holdings
    always equals the NPU-subspace page total.
    """

    total_pages: int
    time_next: dict = field(default_factory=dict)
    pages_next: dict = field(default_factory=dict)
    pages_alloc: dict = field(default_factory=dict)

    @property
    def idle_pages(self) -> int:
        return self.total_pages - sum(self.pages_alloc.values())

    def register(self, task_id, now: int) -> None:
        self.time_next[task_id] = now
        self.pages_next[task_id] = 0
        self.pages_alloc[task_id] = 0

    def remove(self, task_id) -> None:
        if self.pages_alloc.get(task_id, 0) != 0:
            raise InvariantViolation(
                f"task {task_id} removed while holding pages")
        self.time_next.pop(task_id, None)
        self.pages_next.pop(task_id, None)
        self.pages_alloc.pop(task_id, None)

    def check_conservation(self, allocator: "PageAllocator") -> None:
        held = sum(self.pages_alloc.values())
        if held + allocator.free_count != self.total_pages:
            raise InvariantViolation(
                f"page conservation broken: held {held} + free "
                f"{allocator.free_count} != {self.total_pages}")


def pred_avail_pages(tables: RuntimeAllocationTables, t_ahead: float,
                     t_cur) -> int:
    """Pages expected to be available to `t_cur` by cycle `t_ahead`.

    Idle pages plus, for every other task predicted to reallocate before
    `t_ahead`, the pages it is expected to shed (negative if it is
    expected to grow).
    """
    p_ahead = tables.idle_pages
    for task in tables.pages_alloc:
        if task != t_cur and tables.time_next[task] < t_ahead:
            p_ahead += tables.pages_alloc[task] - tables.pages_next[task]
    return p_ahead


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of candidate selection for one layer."""

    candidate: MappingCandidate
    pages_needed: int
    timeout_cycle: float | None  # None = unbounded wait
    p_ahead: int
    lbm_head: bool = False  # grants enable LBM for the block


def select_candidate(mct: MappingCandidateTable, tables: RuntimeAllocationTables,
                     t_cur, now: int, layer_est: float, block_est: float,
                     is_block_head: bool, lbm_enabled: bool,
                     timeout_factor: float, allow_lbm: bool = True) -> SelectionResult:
    """Predict near-future cache usage and pick the candidate that fits.

    Mirrors the runtime selection procedure: a block that already enabled
    block mapping keeps it with an unbounded threshold; at a block head,
    block mapping is chosen when its page need undercuts the prediction;
    otherwise the largest layer-wise candidate within the prediction wins.
    """
    if lbm_enabled:
        cand = mct.lbm
        return SelectionResult(candidate=cand, pages_needed=cand.p_need,
                               timeout_cycle=UNBOUNDED, p_ahead=0)
    if allow_lbm and is_block_head:
        t_ahead = now + block_est * timeout_factor
        p_ahead = pred_avail_pages(tables, t_ahead, t_cur)
        if mct.lbm.p_need < p_ahead:
            return SelectionResult(candidate=mct.lbm,
                                   pages_needed=mct.lbm.p_need,
                                   timeout_cycle=t_ahead, p_ahead=p_ahead,
                                   lbm_head=True)
    t_ahead = now + layer_est * timeout_factor
    p_ahead = pred_avail_pages(tables, t_ahead, t_cur)
    chosen = mct.lwms[0]
    for cand in mct.lwms:
        if chosen.p_need < cand.p_need <= p_ahead:
            chosen = cand
    return SelectionResult(candidate=chosen, pages_needed=chosen.p_need,
                           timeout_cycle=t_ahead, p_ahead=p_ahead)


def downgrade_candidate(mct: MappingCandidateTable,
                        current: MappingCandidate) -> MappingCandidate:
    """Next candidate with strictly fewer pages after a timeout.

    From block mapping the chain drops to the largest layer-wise
    candidate below it, then walks the table downward; the zero-page
    fallback terminates the chain.
    """
    below = [c for c in mct.lwms if c.p_need < current.p_need]
    if not below:
        return mct.lwms[0]
    return max(below, key=lambda c: c.p_need)


def static_share(hw: HardwareConfig) -> int:
    """Pages per core under the static equal split (remainder stays idle)."""
    return hw.npu_pages // hw.num_npus


def select_static(mct: MappingCandidateTable, share: int, is_block_head: bool,
                  lbm_enabled: bool, allow_lbm: bool = True) -> SelectionResult:
    """HW-only selection: largest candidate fitting the fixed share."""
    if lbm_enabled:
        cand = mct.lbm
        return SelectionResult(candidate=cand, pages_needed=cand.p_need,
                               timeout_cycle=UNBOUNDED, p_ahead=share)
    if allow_lbm and is_block_head and mct.lbm.p_need <= share:
        return SelectionResult(candidate=mct.lbm, pages_needed=mct.lbm.p_need,
                               timeout_cycle=UNBOUNDED, p_ahead=share,
                               lbm_head=True)
    chosen = mct.lwms[0]
    for cand in mct.lwms:
        if chosen.p_need < cand.p_need <= share:
            chosen = cand
    return SelectionResult(candidate=chosen, pages_needed=chosen.p_need,
                           timeout_cycle=UNBOUNDED, p_ahead=share)


@dataclass
class _Waiter:
    arrival: int
    order: int
    task_id: object
    pages: int
    on_grant: object  # callable(granted_pcpns, cycle)
    active: bool = True


class PageAllocator:
    """NPU-subspace page pool with FIFO waiting.

    Waiters are served in arrival order (ties by task id) on every
    release event, with head-of-line blocking: a later waiter is not
    served past an earlier one that still cannot be satisfied.  Zero-page
    requests never wait.
    """

    def __init__(self, hw: HardwareConfig, cache: CacheMemory,
                 tables: RuntimeAllocationTables,
                 reserved: frozenset = frozenset()):
        self.hw = hw
        self.cache = cache
        self.tables = tables
        self.free = sorted(set(range(hw.npu_pages)) - reserved)
        self.waiters: list[_Waiter] = []
        self._order = 0

    @property
    def free_count(self) -> int:
        return len(self.free)

    def try_allocate(self, task_id, pages: int, now: int):
        """Immediate allocation; returns pcpns or None if short."""
        if pages == 0:
            return []
        if pages > len(self.free) or self._blocked_before(task_id):
            return None
        grant = self.free[:pages]
        del self.free[:pages]
        self.cache.claim_pages(task_id, grant)
        self.tables.pages_alloc[task_id] = (
            self.tables.pages_alloc.get(task_id, 0) + pages)
        return grant

    def _blocked_before(self, task_id) -> bool:
        return any(w.active and w.task_id != task_id for w in self.waiters)

    def enqueue(self, task_id, pages: int, now: int, on_grant) -> _Waiter:
        self._order += 1
        waiter = _Waiter(arrival=now, order=self._order, task_id=task_id,
                         pages=pages, on_grant=on_grant)
        self.waiters.append(waiter)
        self.waiters.sort(key=lambda w: (w.arrival, w.task_id, w.order))
        return waiter

    def release(self, task_id, pcpns, now: int) -> None:
        if not pcpns:
            return
        self.cache.release_pages(task_id, pcpns)
        self.free.extend(pcpns)
        self.free.sort()
        held = self.tables.pages_alloc.get(task_id, 0)
        if held < len(pcpns):
            raise InvariantViolation(
                f"task {task_id} released more pages than held")
        self.tables.pages_alloc[task_id] = held - len(pcpns)

    def serve(self, now: int):
        """Grant queued requests in FIFO order; stop at the first misfit.

        Returns [(waiter, pcpns)] granted now; the caller schedules the
        continuations.
        """
        granted = []
        while self.waiters:
            head = self.waiters[0]
            if not head.active:
                self.waiters.pop(0)
                continue
            if head.pages > len(self.free):
                break
            self.waiters.pop(0)
            head.active = False
            grant = self.free[:head.pages]
            del self.free[:head.pages]
            self.cache.claim_pages(head.task_id, grant)
            self.tables.pages_alloc[head.task_id] = (
                self.tables.pages_alloc.get(head.task_id, 0) + head.pages)
            granted.append((head, grant))
        return granted

    def update_waiter(self, waiter: _Waiter, pages: int) -> None:
        waiter.pages = pages


def cpt_mapping_for(candidate: MappingCandidate, hw: HardwareConfig,
                    pcpns) -> dict:
    """vcpn -> pcpn map for one grant.

    Candidates pack their cached regions at the bottom of the virtual
    space, and a block-mapping grant covers every region the whole block
    will touch, so the map is simply the first len(pcpns) virtual pages.
    """
    for _, entry in candidate.cmap.entries:
        if entry.placement != PLACE_CACHED_STR:
            continue
        last_vcpn = (entry.vc_base + max(entry.bytes - 1, 0)) // hw.page_bytes
        if last_vcpn >= len(pcpns):
            raise InvariantViolation(
                f"grant of {len(pcpns)} pages cannot cover vcpn {last_vcpn}")
    return {vcpn: pcpn for vcpn, pcpn in enumerate(pcpns)}
