"""Sliced, way-partitioned shared cache with NPU-controlled regions.

Two operating modes cover the simulated systems:

* paged mode -- a subset of cache ways (the NPU subspace) is addressed
  directly through per-NPU page tables.  A physical cache address fully
  determines the target line, so the subspace performs no tag matching.
  Bypass and multicast request kinds let cores skip the cache entirely or
  share one transaction across a group of cores.
* transparent mode -- the whole cache behaves as a conventional
  set-associative LRU cache.  This is the baseline the paged mode is
  compared against.

A bandwidth-queue DRAM sits behind the cache: requests are interleaved
over channels at line granularity, and each channel is a FIFO pipe with a
fixed base latency plus a size-proportional transfer term.  No data
payloads are stored anywhere; the model tracks line/page metadata and
byte counters only.
"""

from __future__ import annotations

import functools
import json
from collections import OrderedDict
from dataclasses import dataclass, fields, replace
from fractions import Fraction

from .errors import ConfigError, InvalidPageError, InvariantViolation

KIND_READ = "read"
KIND_WRITE = "write"
KIND_BYPASS_READ = "bypass_read"
KIND_BYPASS_WRITE = "bypass_write"
KIND_MULTICAST_READ = "multicast_read"
KIND_MULTICAST_BYPASS_READ = "multicast_bypass_read"
KIND_FETCH = "fetch"
KIND_WRITEBACK = "writeback"

REQUEST_KINDS = frozenset({
    KIND_READ, KIND_WRITE, KIND_BYPASS_READ, KIND_BYPASS_WRITE,
    KIND_MULTICAST_READ, KIND_MULTICAST_BYPASS_READ, KIND_FETCH,
    KIND_WRITEBACK,
})

_CACHE_STATE_KINDS = frozenset({KIND_READ, KIND_WRITE, KIND_MULTICAST_READ,
                                KIND_FETCH, KIND_WRITEBACK})


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class HardwareConfig:
    """SoC configuration; defaults model the reference 16-core system.

    Latency constants and scheduling knobs are exposed here as well so a
    single JSON file describes one simulated platform.  They affect
    absolute numbers only; all comparisons in the experiment suite are
    relative.
    """

    pe_dim: int = 32
    scratchpad_bytes: int = 256 * 1024
    num_npus: int = 16
    cache_bytes: int = 16 * 1024 * 1024
    total_ways: int = 16
    npu_ways: int = 12
    slices: int = 8
    line_bytes: int = 64
    page_bytes: int = 32 * 1024
    dram_bw_bytes_per_cycle: float = 102.4
    dram_channels: int = 4
    cache_hit_cycles: int = 20
    dram_base_cycles: int = 100
    cpt_program_cycles: int = 64
    timeout_factor: float = 0.2
    max_block_layers: int = 4
    lbm_page_cap_fraction: float = 0.25
    enable_lbm: bool = True
    usage_limit_fractions: tuple = (0.0, 0.125, 0.25, 0.5, 1.0)

    def __post_init__(self):
        if self.npu_ways > self.total_ways:
            raise ConfigError("npu_ways must not exceed total_ways")
        if self.cache_bytes % (self.slices * self.total_ways * self.line_bytes):
            raise ConfigError("cache_bytes must divide into slices*ways*lines")
        if self.page_bytes % self.line_bytes:
            raise ConfigError("page_bytes must be a multiple of line_bytes")
        for name in ("cache_bytes", "total_ways", "slices", "line_bytes",
                     "page_bytes", "dram_channels"):
            if not _is_pow2(getattr(self, name)):
                raise ConfigError(f"{name} must be a power of two")
        if not _is_pow2(self.sets_per_slice):
            raise ConfigError("derived set count must be a power of two")
        if self.page_shift > self.way_shift:
            raise ConfigError("page_bytes must not span multiple ways")

    # -- derived address geometry ------------------------------------
    @property
    def offset_bits(self) -> int:
        return self.line_bytes.bit_length() - 1

    @property
    def slice_bits(self) -> int:
        return self.slices.bit_length() - 1

    @property
    def sets_per_slice(self) -> int:
        return self.cache_bytes // (self.slices * self.total_ways * self.line_bytes)

    @property
    def set_bits(self) -> int:
        return self.sets_per_slice.bit_length() - 1

    @property
    def way_bits(self) -> int:
        return self.total_ways.bit_length() - 1

    @property
    def way_shift(self) -> int:
        return self.offset_bits + self.slice_bits + self.set_bits

    @property
    def addr_bits(self) -> int:
        return self.way_shift + self.way_bits

    @property
    def page_shift(self) -> int:
        return self.page_bytes.bit_length() - 1

    @property
    def total_pages(self) -> int:
        return self.cache_bytes // self.page_bytes

    @property
    def pages_per_way(self) -> int:
        return self.cache_bytes // (self.total_ways * self.page_bytes)

    @property
    def npu_pages(self) -> int:
        """Allocatable pages inside the NPU subspace."""
        return self.npu_ways * self.pages_per_way

    @property
    def cpt_entries(self) -> int:
        return self.total_pages

    @functools.cached_property
    def dram_channel_rate(self) -> Fraction:
        """Per-channel bandwidth as an exact rational (bytes per cycle)."""
        return Fraction(str(self.dram_bw_bytes_per_cycle)) / self.dram_channels

    @functools.cached_property
    def _channel_rate_ratio(self) -> tuple:
        rate = self.dram_channel_rate
        return rate.numerator, rate.denominator

    @property
    def lbm_page_cap(self) -> int:
        return max(1, int(self.npu_pages * self.lbm_page_cap_fraction))

    @property
    def usage_limits(self) -> tuple:
        limits = sorted({int(f * self.npu_pages) for f in self.usage_limit_fractions})
        if not limits or limits[0] != 0:
            limits.insert(0, 0)
        return tuple(limits)

    def way_of_page(self, pcpn: int) -> int:
        return pcpn // self.pages_per_way

    # -- serialization ------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "HardwareConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown hardware config fields: {sorted(unknown)}")
        if "usage_limit_fractions" in data:
            data = dict(data)
            data["usage_limit_fractions"] = tuple(data["usage_limit_fractions"])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "HardwareConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"hardware config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"hardware config {path} is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise ConfigError(f"hardware config {path} must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = list(val) if isinstance(val, tuple) else val
        return out

    def with_cache_bytes(self, cache_bytes: int) -> "HardwareConfig":
        return replace(self, cache_bytes=cache_bytes)


@dataclass(frozen=True, slots=True)
class PhysicalCacheAddress:
    """Decomposed physical cache address.

    Bit layout, lower to higher: byte offset, slice index, set index, way
    index.  Consecutive lines therefore land on consecutive slices.
    """

    way: int
    set: int
    slice: int
    offset: int


def decompose(hw: HardwareConfig, pcaddr: int) -> PhysicalCacheAddress:
    if not 0 <= pcaddr < hw.cache_bytes:
        raise InvariantViolation(f"pcaddr {pcaddr:#x} outside cache")
    off = pcaddr & (hw.line_bytes - 1)
    sl = (pcaddr >> hw.offset_bits) & (hw.slices - 1)
    st = (pcaddr >> (hw.offset_bits + hw.slice_bits)) & (hw.sets_per_slice - 1)
    wy = pcaddr >> hw.way_shift
    return PhysicalCacheAddress(way=wy, set=st, slice=sl, offset=off)


def compose(hw: HardwareConfig, addr: PhysicalCacheAddress) -> int:
    if not (0 <= addr.offset < hw.line_bytes and 0 <= addr.slice < hw.slices
            and 0 <= addr.set < hw.sets_per_slice and 0 <= addr.way < hw.total_ways):
        raise InvariantViolation(f"address fields out of range: {addr}")
    return (addr.way << hw.way_shift
            | addr.set << (hw.offset_bits + hw.slice_bits)
            | addr.slice << hw.offset_bits
            | addr.offset)


class CachePageTable:
    """Per-NPU table translating virtual cache pages to physical pages."""

    def __init__(self, hw: HardwareConfig, npu_id: int):
        self.hw = hw
        self.npu_id = npu_id
        self.entries: dict[int, int] = {}

    def program(self, mapping: dict[int, int]) -> None:
        for vcpn, pcpn in mapping.items():
            if not 0 <= vcpn < self.hw.cpt_entries:
                raise InvariantViolation(f"vcpn {vcpn} exceeds table size")
            if self.hw.way_of_page(pcpn) >= self.hw.npu_ways:
                raise InvariantViolation(
                    f"pcpn {pcpn} maps outside the NPU subspace")
            self.entries[vcpn] = pcpn

    def invalidate(self, vcpns=None) -> None:
        if vcpns is None:
            self.entries.clear()
        else:
            for v in vcpns:
                self.entries.pop(v, None)

    def lookup(self, vcpn: int) -> int:
        try:
            return self.entries[vcpn]
        except KeyError:
            raise InvalidPageError(
                f"npu {self.npu_id}: no valid entry for vcpn {vcpn}")


@dataclass
class NecRequest:
    """One NPU-originated cache/memory request.

    `address` is a virtual cache address for in-cache kinds (read, write,
    multicast_read) and a memory address for DRAM-facing kinds.  `mem_address`
    carries the DRAM side of fetch/writeback.  Multicast kinds require a
    nonempty `group`.
    """

    kind: str
    requester: int
    address: int
    bytes: int
    group: tuple = ()
    mem_address: int = 0
    role: str = ""

    def __post_init__(self):
        if self.kind not in REQUEST_KINDS:
            raise InvariantViolation(f"unknown request kind {self.kind!r}")
        if self.kind.startswith("multicast") and len(self.group) < 1:
            raise InvariantViolation("multicast request needs a group")
        if self.bytes <= 0:
            raise InvariantViolation("request length must be positive")


class CacheMemory:
    """Shared cache state plus the DRAM bandwidth-queue model.

    Owned and advanced by a single event engine; instances are not safe
    for concurrent mutation.
    """

    def __init__(self, hw: HardwareConfig, transparent: bool = False,
                 trace=None):
        self.hw = hw
        self.transparent = transparent
        self.trace = trace
        self.cpts = [CachePageTable(hw, i) for i in range(hw.num_npus)]
        # page ownership inside the NPU subspace (pcpn -> task id)
        self.page_owner: dict[int, object] = {}
        self.page_last_touch: dict[int, int] = {}
        # transparent mode: (slice, set) -> OrderedDict tag -> dirty
        self._sets: dict[tuple, OrderedDict] = {}
        # counters
        self.dram_read_bytes = 0
        self.dram_write_bytes = 0
        self.dram_bytes_by_role: dict[str, int] = {}
        self.cache_hits = 0
        self.cache_misses = 0
        self.nec_cache_accesses = 0
        # discrete timed operations applied to this model (requests and
        # per-channel transfers); the engine adds its own scheduled events
        self.timed_ops = 0
        # bumped on every cache-state mutation; lets instrumented runs
        # assert cheaply that bypass traffic leaves the cache untouched
        self.state_mutations = 0
        self._channel_free = [0] * hw.dram_channels
        # hot-path constants, resolved once
        self._offset_bits = hw.offset_bits
        self._nch = hw.dram_channels
        self._base_cycles = hw.dram_base_cycles
        self._rate_num, self._rate_den = hw._channel_rate_ratio
        self._line_bytes = hw.line_bytes

    # -- paging --------------------------------------------------------
    def claim_pages(self, task, pcpns) -> None:
        for p in pcpns:
            if self.hw.way_of_page(p) >= self.hw.npu_ways:
                raise InvariantViolation(f"page {p} outside NPU subspace")
            owner = self.page_owner.get(p)
            if owner is not None and owner != task:
                raise InvariantViolation(
                    f"page {p} already owned by task {owner}")
            self.page_owner[p] = task
            self.state_mutations += 1

    def release_pages(self, task, pcpns) -> None:
        for p in pcpns:
            owner = self.page_owner.get(p)
            if owner != task:
                raise InvariantViolation(
                    f"task {task} released page {p} owned by {owner}")
            del self.page_owner[p]
            self.page_last_touch.pop(p, None)
            self.state_mutations += 1

    def translate(self, npu: int, vcaddr: int) -> PhysicalCacheAddress:
        vcpn = vcaddr >> self.hw.page_shift
        pcpn = self.cpts[npu].lookup(vcpn)
        pcaddr = (pcpn << self.hw.page_shift) | (vcaddr & (self.hw.page_bytes - 1))
        return decompose(self.hw, pcaddr)

    # -- DRAM queue ------------------------------------------------------
    def dram_submit(self, address: int, nbytes: int, is_write: bool,
                    now: int, role: str = "") -> int:
        """Queue one transfer on the channel selected by `address`.

        Completion is max(now, channel_free) + base + ceil(size/rate); the
        channel is busy for the transfer term only, so base latencies
        pipeline.
        """
        if nbytes <= 0:
            raise InvariantViolation("dram transfer must move bytes")
        self.timed_ops += 1
        ch = (address >> self._offset_bits) % self._nch
        start = max(now, self._channel_free[ch])
        transfer = -(-nbytes * self._rate_den // self._rate_num)
        completion = start + self._base_cycles + transfer
        self._channel_free[ch] = start + transfer
        if is_write:
            self.dram_write_bytes += nbytes
        else:
            self.dram_read_bytes += nbytes
        if role:
            self.dram_bytes_by_role[role] = (
                self.dram_bytes_by_role.get(role, 0) + nbytes)
        return completion

    def dram_transfer(self, address: int, nbytes: int, is_write: bool,
                      now: int, role: str = "") -> int:
        """Stripe one contiguous transfer across channels line by line.

        Consecutive lines walk consecutive channels, so a large transfer
        loads every channel queue with its share; byte counters record the
        exact request length once.
        """
        line_bytes = self._line_bytes
        if nbytes <= line_bytes:
            return self.dram_submit(address, nbytes, is_write, now, role)
        nch = self._nch
        base_cycles = self._base_cycles
        num, den = self._rate_num, self._rate_den
        free = self._channel_free
        full_lines, tail = divmod(nbytes, line_bytes)
        first_line = address >> self._offset_bits
        nlines = full_lines + (1 if tail else 0)
        base_cnt, extra = divmod(nlines, nch)
        last_ch = (first_line + nlines - 1) % nch
        done = 0
        for c in range(nch):
            cnt = base_cnt + (1 if c < extra else 0)
            if cnt == 0:
                continue
            self.timed_ops += 1
            ch = (first_line + c) % nch
            cbytes = cnt * line_bytes
            if tail and ch == last_ch:
                cbytes -= line_bytes - tail
            start = free[ch] if free[ch] > now else now
            transfer = -(-cbytes * den // num)
            free[ch] = start + transfer
            completion = start + base_cycles + transfer
            if completion > done:
                done = completion
        if is_write:
            self.dram_write_bytes += nbytes
        else:
            self.dram_read_bytes += nbytes
        if role:
            self.dram_bytes_by_role[role] = (
                self.dram_bytes_by_role.get(role, 0) + nbytes)
        return done

    # -- NPU-controlled access -------------------------------------------
    def nec_execute(self, req: NecRequest, now: int) -> int:
        """Apply one request; returns its completion cycle."""
        if self.trace is not None:
            self.trace(now, req.requester, req.kind, req.address, req.bytes)
        self.timed_ops += 1
        kind = req.kind
        if kind in (KIND_BYPASS_READ, KIND_MULTICAST_BYPASS_READ):
            # one memory transaction regardless of group size
            return self.dram_transfer(req.address, req.bytes, False, now,
                                      req.role)
        if kind == KIND_BYPASS_WRITE:
            return self.dram_transfer(req.address, req.bytes, True, now,
                                      req.role)
        if kind == KIND_FETCH:
            done = self.dram_transfer(req.mem_address, req.bytes, False, now,
                                      req.role)
            self._touch_span(req.requester, req.address, req.bytes, now)
            return done
        if kind == KIND_WRITEBACK:
            self._touch_span(req.requester, req.address, req.bytes, now)
            return self.dram_transfer(req.mem_address, req.bytes, True, now,
                                      req.role)
        # read / write / multicast_read: in-cache, one transaction
        self._touch_span(req.requester, req.address, req.bytes, now)
        self.nec_cache_accesses += 1
        return now + self.hw.cache_hit_cycles

    def _touch_span(self, npu: int, vcaddr: int, nbytes: int, now: int) -> None:
        """Validate and touch every page a request span covers."""
        hw = self.hw
        first = vcaddr >> hw.page_shift
        last = (vcaddr + nbytes - 1) >> hw.page_shift
        for vcpn in range(first, last + 1):
            pcpn = self.cpts[npu].lookup(vcpn)
            if hw.way_of_page(pcpn) >= hw.npu_ways:
                raise InvariantViolation(
                    f"paged access to way {hw.way_of_page(pcpn)} outside mask")
            self.page_last_touch[pcpn] = now
            self.state_mutations += 1

    # -- transparent LRU ----------------------------------------------
    def lru_access(self, requester: int, mem_address: int, is_write: bool,
                   now: int):
        """Set-associative lookup over all ways; returns (hit, completion)."""
        hw = self.hw
        line = mem_address >> hw.offset_bits
        sl = line & (hw.slices - 1)
        st = (line >> hw.slice_bits) & (hw.sets_per_slice - 1)
        tag = line >> (hw.slice_bits + hw.set_bits)
        self.state_mutations += 1  # every lookup reorders recency
        bucket = self._sets.get((sl, st))
        if bucket is None:
            bucket = self._sets[(sl, st)] = OrderedDict()
        if tag in bucket:
            self.cache_hits += 1
            bucket.move_to_end(tag)
            if is_write:
                bucket[tag] = True
            return True, now + hw.cache_hit_cycles
        self.cache_misses += 1
        done = self.dram_submit(mem_address, hw.line_bytes, False, now)
        if len(bucket) >= hw.total_ways:
            victim_tag, dirty = bucket.popitem(last=False)
            if dirty:
                victim_line = (victim_tag << (hw.slice_bits + hw.set_bits)
                               | st << hw.slice_bits | sl)
                self.dram_submit(victim_line << hw.offset_bits,
                                 hw.line_bytes, True, now)
        bucket[tag] = is_write
        return False, done

    def lru_sweep(self, requester: int, base: int, nbytes: int,
                  is_write: bool, now: int):
        """Stream a contiguous range through the LRU cache, line by line.

        Misses are aggregated into striped DRAM reads and dirty evictions
        into striped writes; returns (hits, misses, writeback_lines,
        completion).
        """
        hw = self.hw
        line_bytes = hw.line_bytes
        slices_mask = hw.slices - 1
        sets_mask = hw.sets_per_slice - 1
        slice_bits = hw.slice_bits
        set_bits = hw.set_bits
        ways = hw.total_ways
        sets = self._sets
        hits = 0
        misses = 0
        wb_lines = 0
        self.timed_ops += 1
        self.state_mutations += 1  # every sweep reorders recency
        first = base >> hw.offset_bits
        last = (base + nbytes - 1) >> hw.offset_bits
        for line in range(first, last + 1):
            key = (line & slices_mask, (line >> slice_bits) & sets_mask)
            bucket = sets.get(key)
            if bucket is None:
                bucket = sets[key] = OrderedDict()
            tag = line >> (slice_bits + set_bits)
            if tag in bucket:
                hits += 1
                bucket.move_to_end(tag)
                if is_write:
                    bucket[tag] = True
            else:
                misses += 1
                if len(bucket) >= ways:
                    _, dirty = bucket.popitem(last=False)
                    if dirty:
                        wb_lines += 1
                bucket[tag] = is_write
        self.cache_hits += hits
        self.cache_misses += misses
        done = now + hw.cache_hit_cycles
        if misses:
            done = max(done, self.dram_transfer(base, misses * line_bytes,
                                                False, now))
        if wb_lines:
            self.dram_transfer(base, wb_lines * line_bytes, True, now)
        if self.trace is not None:
            self.trace(now, requester, "lru_write" if is_write else "lru_read",
                       base, nbytes)
        return hits, misses, wb_lines, done

    # -- inspection -----------------------------------------------------
    def cache_state_fingerprint(self):
        """Snapshot of all mutable cache state, for purity checks."""
        return (dict(self.page_owner), dict(self.page_last_touch),
                {k: list(v.items()) for k, v in self._sets.items()})

    @property
    def hit_rate(self):
        total = self.cache_hits + self.cache_misses
        return self.cache_hits / total if total else None
