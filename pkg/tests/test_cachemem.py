"""Cache, paging and DRAM-queue behavior."""

import random

import pytest

from npucachesim.cachemem import (CacheMemory, HardwareConfig, NecRequest,
                                  PhysicalCacheAddress, compose, decompose)
from npucachesim.errors import ConfigError, InvalidPageError, InvariantViolation

from oracles import SingleSetLRU

HW = HardwareConfig()


class TestConfig:
    def test_default_geometry(self):
        assert HW.npu_pages == 384  # 16MB * 12/16 / 32KB
        assert HW.sets_per_slice == 2048
        assert HW.addr_bits == 24
        assert HW.total_pages == 512

    def test_usage_limits_default(self):
        assert HW.usage_limits == (0, 48, 96, 192, 384)

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            HardwareConfig(npu_ways=17)
        with pytest.raises(ConfigError):
            HardwareConfig(slices=6)
        with pytest.raises(ConfigError):
            HardwareConfig(page_bytes=3000)

    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(ConfigError):
            HardwareConfig.from_dict({"page_size": 1})


class TestAddressBits:
    def test_zero(self):
        assert decompose(HW, 0) == PhysicalCacheAddress(0, 0, 0, 0)

    def test_line_one_lands_on_next_slice(self):
        addr = decompose(HW, 64)
        assert (addr.way, addr.set, addr.slice, addr.offset) == (0, 0, 1, 0)

    def test_slice_wraps_to_next_set(self):
        addr = decompose(HW, 64 * 8)
        assert (addr.way, addr.set, addr.slice, addr.offset) == (0, 1, 0, 0)

    def test_two_megabyte_boundary(self):
        # 2MB = one full slice/set span, lands at way 2 under the defaults
        addr = decompose(HW, 2 * 1024 * 1024)
        assert addr == PhysicalCacheAddress(way=2, set=0, slice=0, offset=0)
        assert compose(HW, addr) == 2 * 1024 * 1024

    def test_out_of_range_rejected(self):
        with pytest.raises(InvariantViolation):
            decompose(HW, HW.cache_bytes)
        with pytest.raises(InvariantViolation):
            compose(HW, PhysicalCacheAddress(16, 0, 0, 0))

    def test_roundtrip_random(self):
        rng = random.Random(1)
        for _ in range(10000):
            pcaddr = rng.randrange(HW.cache_bytes)
            assert compose(HW, decompose(HW, pcaddr)) == pcaddr

    def test_consecutive_lines_hit_consecutive_slices(self):
        slices = [decompose(HW, line * 64).slice for line in range(16)]
        assert slices == [line % 8 for line in range(16)]


class TestTranslation:
    def test_identity_mapping(self):
        cm = CacheMemory(HW)
        cm.cpts[0].program({i: i for i in range(4)})
        assert decompose(HW, 0) == cm.translate(0, 0)
        assert cm.translate(0, 64).slice == 1

    def test_paging_arithmetic(self):
        cm = CacheMemory(HW)
        cm.cpts[0].program({0: 5})
        assert cm.translate(0, 0) == decompose(HW, 5 * HW.page_bytes)
        assert cm.translate(0, 100) == decompose(HW, 5 * HW.page_bytes + 100)

    def test_invalid_page_raises(self):
        cm = CacheMemory(HW)
        with pytest.raises(InvalidPageError):
            cm.translate(0, 0)

    def test_translation_matches_paging_arithmetic_random(self):
        rng = random.Random(2)
        cm = CacheMemory(HW)
        for _ in range(1000):
            mapping = {v: rng.randrange(HW.npu_pages)
                       for v in rng.sample(range(HW.total_pages), 8)}
            cm.cpts[3].entries.clear()
            cm.cpts[3].program(mapping)
            for vcpn, pcpn in mapping.items():
                off = rng.randrange(HW.page_bytes)
                vcaddr = vcpn * HW.page_bytes + off
                expect = decompose(HW, pcpn * HW.page_bytes + off)
                assert cm.translate(3, vcaddr) == expect

    def test_cpt_rejects_general_purpose_ways(self):
        cm = CacheMemory(HW)
        with pytest.raises(InvariantViolation):
            cm.cpts[0].program({0: HW.npu_pages})  # first page past the mask


class TestNecSemantics:
    def _mem(self):
        cm = CacheMemory(HW)
        cm.claim_pages("t0", [0, 1])
        cm.cpts[0].program({0: 0, 1: 1})
        return cm

    def test_bypass_write_touches_dram_only(self):
        cm = self._mem()
        before = cm.cache_state_fingerprint()
        cm.nec_execute(NecRequest(kind="bypass_write", requester=0,
                                  address=1 << 20, bytes=1024), 0)
        assert cm.dram_write_bytes == 1024
        assert cm.cache_state_fingerprint() == before

    def test_bypass_purity_over_sequences(self):
        cm = self._mem()
        before = cm.cache_state_fingerprint()
        rng = random.Random(3)
        for _ in range(100):
            kind = rng.choice(["bypass_read", "bypass_write",
                               "multicast_bypass_read"])
            group = (0, 1) if kind.startswith("multicast") else ()
            cm.nec_execute(NecRequest(kind=kind, requester=0, group=group,
                                      address=rng.randrange(1 << 30),
                                      bytes=64 * rng.randrange(1, 9)), 0)
        assert cm.cache_state_fingerprint() == before

    def test_multicast_bypass_counts_once(self):
        cm = self._mem()
        cm.nec_execute(NecRequest(kind="multicast_bypass_read", requester=0,
                                  group=(0, 1, 2, 3), address=0, bytes=64), 0)
        assert cm.dram_read_bytes == 64  # not 256

    def test_multicast_read_counts_one_cache_access(self):
        cm = self._mem()
        cm.nec_execute(NecRequest(kind="multicast_read", requester=0,
                                  group=(0, 1, 2, 3), address=0, bytes=256), 0)
        assert cm.nec_cache_accesses == 1

    def test_fetch_then_read_hits_cache(self):
        cm = self._mem()
        cm.nec_execute(NecRequest(kind="fetch", requester=0, address=0,
                                  bytes=4096, mem_address=1 << 22), 0)
        read_bytes = cm.dram_read_bytes
        cm.nec_execute(NecRequest(kind="read", requester=0, address=0,
                                  bytes=4096), 50)
        assert cm.dram_read_bytes == read_bytes  # served from cache

    def test_paged_access_requires_valid_entry(self):
        cm = CacheMemory(HW)
        with pytest.raises(InvalidPageError):
            cm.nec_execute(NecRequest(kind="read", requester=5, address=0,
                                      bytes=64), 0)

    def test_page_exclusivity_enforced(self):
        cm = CacheMemory(HW)
        cm.claim_pages("a", [7])
        with pytest.raises(InvariantViolation):
            cm.claim_pages("b", [7])
        cm.release_pages("a", [7])
        cm.claim_pages("b", [7])

    def test_release_requires_ownership(self):
        cm = CacheMemory(HW)
        cm.claim_pages("a", [1])
        with pytest.raises(InvariantViolation):
            cm.release_pages("b", [1])

    def test_multicast_requires_group(self):
        with pytest.raises(InvariantViolation):
            NecRequest(kind="multicast_read", requester=0, address=0, bytes=64)


class TestDramQueue:
    def test_single_transfer_latency(self):
        cm = CacheMemory(HW)
        # 64B at 25.6 B/cycle per channel: ceil -> 3 cycles + base 100
        assert cm.dram_submit(0, 64, False, 0) == 103

    def test_back_to_back_same_channel_queue(self):
        cm = CacheMemory(HW)
        first = cm.dram_submit(0, 64, False, 0)
        second = cm.dram_submit(64 * 4, 64, False, 0)  # same channel
        assert first == 103
        assert second == 106  # delayed by the first transfer term

    def test_distinct_channels_do_not_interact(self):
        cm = CacheMemory(HW)
        assert cm.dram_submit(0, 64, False, 0) == 103
        assert cm.dram_submit(64, 64, False, 0) == 103
        assert cm.dram_submit(128, 64, False, 0) == 103
        assert cm.dram_submit(192, 64, False, 0) == 103

    def test_striped_transfer_conserves_bytes(self):
        cm = CacheMemory(HW)
        cm.dram_transfer(0, 1000, False, 0)
        assert cm.dram_read_bytes == 1000

    def test_byte_counters_split_read_write(self):
        cm = CacheMemory(HW)
        cm.dram_submit(0, 256, False, 0)
        cm.dram_submit(0, 128, True, 10)
        assert (cm.dram_read_bytes, cm.dram_write_bytes) == (256, 128)

    def test_role_attribution(self):
        cm = CacheMemory(HW)
        cm.dram_transfer(0, 512, False, 0, role="intermediate")
        cm.dram_transfer(0, 256, True, 0, role="weights")
        assert cm.dram_bytes_by_role == {"intermediate": 512, "weights": 256}


class TestTransparentLru:
    def test_cold_miss_then_install(self):
        cm = CacheMemory(HW, transparent=True)
        hit, _ = cm.lru_access(0, 0, False, 0)
        assert not hit
        hit, _ = cm.lru_access(0, 0, False, 10)
        assert hit

    def test_seventeen_lines_evict_first(self):
        cm = CacheMemory(HW, transparent=True)
        set_stride = 64 * 8 * 2048  # same slice+set, different tags
        for i in range(17):
            cm.lru_access(0, i * set_stride, False, i)
        hit, _ = cm.lru_access(0, 0, False, 100)
        assert not hit  # first line was least recently used

    def test_matches_single_set_reference(self):
        cm = CacheMemory(HW, transparent=True)
        ref = SingleSetLRU(HW.total_ways)
        rng = random.Random(4)
        set_stride = 64 * 8 * 2048
        for step in range(10000):
            tag = rng.randrange(40)
            is_write = rng.random() < 0.3
            hit, _ = cm.lru_access(0, tag * set_stride, is_write, step)
            assert hit == ref.access(tag, is_write)

    def test_sweep_matches_per_line_accesses(self):
        a = CacheMemory(HW, transparent=True)
        b = CacheMemory(HW, transparent=True)
        rng = random.Random(5)
        for step in range(200):
            base = rng.randrange(1 << 24) & ~63
            nbytes = rng.randrange(64, 8192)
            is_write = rng.random() < 0.5
            a.lru_sweep(0, base, nbytes, is_write, step)
            for line in range(base >> 6, (base + nbytes - 1 >> 6) + 1):
                b.lru_access(0, line << 6, is_write, step)
        assert (a.cache_hits, a.cache_misses) == (b.cache_hits, b.cache_misses)
