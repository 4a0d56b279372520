"""Runtime allocation: selection, prediction, waiting, static mode."""

import random

import pytest

from npucachesim import mapper
from npucachesim.cachemem import CacheMemory, HardwareConfig
from npucachesim.errors import InvariantViolation
from npucachesim.scheduler import (PageAllocator, RuntimeAllocationTables,
                                   cpt_mapping_for, downgrade_candidate,
                                   pred_avail_pages, select_candidate,
                                   select_static, static_share)
from npucachesim.workload import LayerSpec

from oracles import INF, ref_pred_avail_pages, ref_select

HW = HardwareConfig()

_DUMMY_LOOP = mapper.LoopTable(mapper.ORDER_OUTPUT_STATIONARY, (1, 1, 1))
_DUMMY_CMAP = mapper.CacheMapTable(entries=(
    ("input", mapper.CacheMapEntry(placement="bypassed", bytes=1)),
    ("weights", mapper.CacheMapEntry(placement="bypassed", bytes=1)),
    ("output", mapper.CacheMapEntry(placement="bypassed", bytes=1)),
))


def cand(p_need, kind="LWM"):
    return mapper.MappingCandidate(kind=kind, loop=_DUMMY_LOOP,
                                   cmap=_DUMMY_CMAP, p_need=p_need,
                                   est_dram_bytes=100 - p_need,
                                   est_compute_cycles=10, scratch_bytes=8)


def mct_of(lwm_needs, lbm_need):
    return mapper.MappingCandidateTable(
        layer_id=0,
        lwms=tuple(cand(p) for p in lwm_needs),
        lbm=cand(lbm_need, kind="LBM"))


def tables_of(total, alloc, nxt, tnext):
    t = RuntimeAllocationTables(total_pages=total)
    for task in alloc:
        t.pages_alloc[task] = alloc[task]
        t.pages_next[task] = nxt[task]
        t.time_next[task] = tnext[task]
    return t


class TestPredAvailPages:
    def test_shedding_task_counts(self):
        # idle 10; another task below the horizon sheds 8 - 3 = 5
        t = tables_of(18, {"a": 8}, {"a": 3}, {"a": 50})
        assert pred_avail_pages(t, 100, "me") == 15

    def test_no_other_tasks(self):
        t = tables_of(10, {}, {}, {})
        assert pred_avail_pages(t, 100, "me") == 10

    def test_task_beyond_horizon_contributes_nothing(self):
        t = tables_of(18, {"a": 8}, {"a": 3}, {"a": 100})
        assert pred_avail_pages(t, 100, "me") == 10

    def test_growing_task_counts_negative(self):
        t = tables_of(18, {"a": 2}, {"a": 9}, {"a": 0})
        assert pred_avail_pages(t, 100, "me") == 16 - 7

    def test_self_excluded(self):
        t = tables_of(18, {"me": 8}, {"me": 0}, {"me": 0})
        assert pred_avail_pages(t, 100, "me") == 10


class TestSelectCandidate:
    def test_largest_fitting_lwm(self):
        t = tables_of(12, {}, {}, {})  # idle 12 -> P_ahead 12
        sel = select_candidate(mct_of([2, 6, 10, 16], 40), t, "me", now=0,
                               layer_est=100, block_est=400,
                               is_block_head=False, lbm_enabled=False,
                               timeout_factor=0.2)
        assert sel.pages_needed == 10
        assert sel.timeout_cycle == 20  # now + layer_est * 0.2

    def test_head_layer_takes_block_mapping(self):
        t = tables_of(24, {}, {}, {})
        sel = select_candidate(mct_of([0, 4], 20), t, "me", now=100,
                               layer_est=100, block_est=400,
                               is_block_head=True, lbm_enabled=False,
                               timeout_factor=0.2)
        assert sel.candidate.kind == "LBM"
        assert sel.lbm_head
        assert sel.timeout_cycle == 100 + 400 * 0.2

    def test_enabled_block_mapping_unbounded(self):
        t = tables_of(24, {}, {}, {})
        sel = select_candidate(mct_of([0, 4], 20), t, "me", now=0,
                               layer_est=100, block_est=400,
                               is_block_head=False, lbm_enabled=True,
                               timeout_factor=0.2)
        assert sel.candidate.kind == "LBM"
        assert sel.timeout_cycle is None

    def test_head_without_room_falls_to_lwm(self):
        t = tables_of(8, {}, {}, {})
        sel = select_candidate(mct_of([0, 4], 20), t, "me", now=0,
                               layer_est=100, block_est=400,
                               is_block_head=True, lbm_enabled=False,
                               timeout_factor=0.2)
        assert sel.candidate.kind == "LWM"
        assert sel.pages_needed == 4
        assert sel.timeout_cycle == 20  # recomputed with the layer rule

    def test_lbm_disabled_flag(self):
        t = tables_of(24, {}, {}, {})
        sel = select_candidate(mct_of([0, 4], 20), t, "me", now=0,
                               layer_est=100, block_est=400,
                               is_block_head=True, lbm_enabled=False,
                               timeout_factor=0.2, allow_lbm=False)
        assert sel.candidate.kind == "LWM"


class TestAlgorithmOracle:
    def test_matches_transcription_randomized(self):
        # 10^4 random table snapshots, exact agreement with the listing
        rng = random.Random(99)
        checked = 0
        for _ in range(10000):
            n_tasks = rng.randrange(1, 17)
            tasks = [f"t{i}" for i in range(n_tasks)]
            total = rng.randrange(16, 385)
            alloc = {}
            remaining = total
            for task in tasks:
                take = rng.randrange(0, remaining + 1) if remaining else 0
                take = min(take, rng.randrange(0, 65))
                alloc[task] = take
                remaining -= take
            nxt = {task: rng.randrange(0, 65) for task in tasks}
            tnext = {task: rng.randrange(0, 2000) for task in tasks}
            tables = tables_of(total, alloc, nxt, tnext)
            t_cur = rng.choice(tasks)

            ladder = sorted(rng.sample(range(0, 129), rng.randrange(1, 6)))
            if ladder[0] != 0:
                ladder[0] = 0
            lbm_need = rng.randrange(0, 200)
            mct = mct_of(ladder, lbm_need)
            now = rng.randrange(0, 5000)
            layer_est = rng.randrange(1, 3000)
            block_est = rng.randrange(1, 9000)
            is_head = rng.random() < 0.5
            enabled = rng.random() < 0.2

            sel = select_candidate(mct, tables, t_cur, now, layer_est,
                                   block_est, is_head, enabled, 0.2)
            ref_kind, ref_pages, ref_timeout = ref_select(
                t_cur, list(ladder), lbm_need, now, enabled, is_head,
                layer_est, block_est, tasks, tnext, nxt, alloc,
                tables.idle_pages)
            t_ahead = now + (block_est if is_head else layer_est) * 0.2
            assert ref_pred_avail_pages(
                t_ahead, t_cur, tasks, tnext, nxt, alloc,
                tables.idle_pages) == pred_avail_pages(tables, t_ahead, t_cur)
            if ref_kind == "LBM":
                assert sel.candidate.kind == "LBM"
            else:
                assert sel.candidate.kind == "LWM"
                assert sel.candidate.p_need == ladder[ref_kind]
            assert sel.pages_needed == ref_pages
            if ref_timeout == INF:
                assert sel.timeout_cycle is None
            else:
                assert sel.timeout_cycle == ref_timeout
            checked += 1
        assert checked == 10000


class TestDowngrade:
    def test_chain_strictly_decreases_and_terminates(self):
        mct = mct_of([0, 4, 9, 17], 40)
        cur = mct.lbm
        seen = [cur.p_need]
        while cur.p_need > 0:
            nxt = downgrade_candidate(mct, cur)
            assert nxt.p_need < cur.p_need
            cur = nxt
            seen.append(cur.p_need)
        assert seen == [40, 17, 9, 4, 0]

    def test_bottom_stays_at_zero_fallback(self):
        mct = mct_of([0, 4], 9)
        assert downgrade_candidate(mct, mct.lwms[0]).p_need == 0


class TestStaticMode:
    def test_equal_split(self):
        assert static_share(HW) == 24  # 384 pages over 16 cores

    def test_single_core_owns_everything(self):
        assert static_share(HardwareConfig(num_npus=1)) == 384

    def test_zero_share_always_falls_back(self):
        sel = select_static(mct_of([0, 4, 9], 9), share=0,
                            is_block_head=True, lbm_enabled=False)
        assert sel.pages_needed == 0

    def test_share_bounds_selection(self):
        sel = select_static(mct_of([0, 4, 9, 30], 50), share=24,
                            is_block_head=False, lbm_enabled=False)
        assert sel.pages_needed == 9

    def test_lbm_only_when_it_fits_share(self):
        fits = select_static(mct_of([0, 4], 20), share=24,
                             is_block_head=True, lbm_enabled=False)
        assert fits.candidate.kind == "LBM"
        no_fit = select_static(mct_of([0, 4], 30), share=24,
                               is_block_head=True, lbm_enabled=False)
        assert no_fit.candidate.kind == "LWM"


class TestPageAllocator:
    def _alloc(self, total_override=None):
        tables = RuntimeAllocationTables(total_pages=HW.npu_pages)
        cache = CacheMemory(HW)
        return PageAllocator(HW, cache, tables), tables

    def test_grant_and_conservation(self):
        alloc, tables = self._alloc()
        tables.register("a", 0)
        grant = alloc.try_allocate("a", 10, 0)
        assert len(grant) == 10
        tables.check_conservation(alloc)
        alloc.release("a", grant, 5)
        tables.check_conservation(alloc)
        assert tables.pages_alloc["a"] == 0

    def test_zero_page_requests_never_wait(self):
        alloc, tables = self._alloc()
        tables.register("a", 0)
        tables.register("b", 0)
        assert alloc.try_allocate("a", HW.npu_pages, 0) is not None
        alloc.enqueue("b", 5, 0, lambda *_: None)
        assert alloc.try_allocate("b", 0, 1) == []

    def test_fifo_head_of_line(self):
        alloc, tables = self._alloc()
        for task in ("a", "b", "c"):
            tables.register(task, 0)
        held = alloc.try_allocate("a", 380, 0)
        grants = []
        alloc.enqueue("b", 100, 1, lambda p, c: grants.append(("b", len(p))))
        alloc.enqueue("c", 2, 2, lambda p, c: grants.append(("c", len(p))))
        # 4 pages free: c would fit but b blocks the head of the queue
        assert [w.task_id for w, _ in [(w, None) for w in alloc.waiters]] == \
            ["b", "c"]
        assert alloc.serve(3) == []
        alloc.release("a", held[:200], 4)
        served = alloc.serve(4)
        assert [(w.task_id, len(g)) for w, g in served] == [("b", 100),
                                                            ("c", 2)]

    def test_newcomer_cannot_jump_queue(self):
        alloc, tables = self._alloc()
        for task in ("a", "b", "c"):
            tables.register(task, 0)
        alloc.try_allocate("a", 380, 0)
        alloc.enqueue("b", 100, 1, lambda *_: None)
        assert alloc.try_allocate("c", 2, 2) is None

    def test_double_claim_is_fatal(self):
        alloc, tables = self._alloc()
        tables.register("a", 0)
        tables.register("b", 0)
        alloc.try_allocate("a", 4, 0)
        with pytest.raises(InvariantViolation):
            alloc.cache.claim_pages("b", [0])

    def test_release_of_foreign_pages_fatal(self):
        alloc, tables = self._alloc()
        tables.register("a", 0)
        tables.register("b", 0)
        grant = alloc.try_allocate("a", 4, 0)
        with pytest.raises(InvariantViolation):
            alloc.release("b", grant, 1)


class TestCptMapping:
    def _candidate(self):
        layer = LayerSpec(id=0, kind="MatMul", M=384, N=384, K=384,
                          elem_bytes=4)
        candidate = mapper.best_lwm(layer, HW, HW.npu_pages)
        assert candidate.p_need > 0
        return candidate

    def test_grant_covers_all_regions(self):
        candidate = self._candidate()
        pcpns = list(range(40, 40 + candidate.p_need))
        mapping = cpt_mapping_for(candidate, HW, pcpns)
        assert sorted(mapping) == list(range(candidate.p_need))
        assert sorted(mapping.values()) == pcpns

    def test_short_grant_rejected(self):
        candidate = self._candidate()
        with pytest.raises(InvariantViolation):
            cpt_mapping_for(candidate, HW, list(range(candidate.p_need - 1)))
