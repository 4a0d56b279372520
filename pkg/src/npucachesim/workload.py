"""DNN workload model: layer chains, layer blocks, reuse statistics.

Every layer kind is normalized to matmul-like dimensions (M, N, K): an
M x K input streamed against K x N weights producing an M x N output.
Consecutive layers chain (layer i's output is layer i+1's input), so a
model is fully described by its layer list.  Blocks are contiguous layer
ranges used by layer-block mapping; they are computed, never stored in
model files.

Reuse statistics summarize how often each piece of data is touched at the
shared-cache level and how far apart an intermediate tensor's production
and consumption are.  The exact counting rules are documented on
`reuse_stats`; a brute-force trace counter in the test suite replays the
same access stream independently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .cachemem import HardwareConfig
from .errors import ModelFormatError

LAYER_KINDS = ("MatMul", "Conv", "DwConv", "LSTMCell")

COUNT_BUCKETS = ("1", "2", "3-4", "5+")
DISTANCE_BUCKETS = ("<256KB", "256KB-1MB", "1-2MB", ">2MB")

_KB = 1024
_MB = 1024 * 1024


@dataclass(frozen=True)
class LayerSpec:
    """One layer, normalized to matmul dimensions."""

    id: int
    kind: str
    M: int
    N: int
    K: int
    elem_bytes: int = 1
    weight_resident: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ModelFormatError(
                f"layer {self.id}: unknown kind {self.kind!r}")
        if min(self.M, self.N, self.K) < 1:
            raise ModelFormatError(
                f"layer {self.id}: dimensions must be >= 1")
        if self.elem_bytes not in (1, 2, 4):
            raise ModelFormatError(
                f"layer {self.id}: elem_bytes must be 1, 2 or 4")

    @property
    def input_bytes(self) -> int:
        return self.M * self.K * self.elem_bytes

    @property
    def weight_bytes(self) -> int:
        return self.K * self.N * self.elem_bytes

    @property
    def output_bytes(self) -> int:
        return self.M * self.N * self.elem_bytes


@dataclass(frozen=True)
class ModelSpec:
    """A model: ordered layer chain plus its block partition."""

    name: str
    layers: tuple
    blocks: tuple = ()
    qos_ms: float | None = None

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def block_of(self, layer_idx: int) -> tuple:
        for blk in self.blocks:
            if blk[0] <= layer_idx < blk[1]:
                return blk
        raise ModelFormatError(
            f"{self.name}: layer {layer_idx} not covered by any block")

    def block_index(self, layer_idx: int) -> int:
        for i, blk in enumerate(self.blocks):
            if blk[0] <= layer_idx < blk[1]:
                return i
        raise ModelFormatError(
            f"{self.name}: layer {layer_idx} not covered by any block")

    def is_block_head(self, layer_idx: int) -> bool:
        return any(layer_idx == blk[0] for blk in self.blocks)

    def intermediate_bytes(self, producer_idx: int) -> int:
        """Bytes of the tensor flowing from layer i to layer i+1."""
        return self.layers[producer_idx].output_bytes


@dataclass(frozen=True)
class ReuseStats:
    """Byte-weighted histograms of reuse counts and reuse distances.

    `pct_by_reuse_count` covers every piece of data the model touches;
    `pct_intermediate_by_reuse_distance` covers intermediate tensors only
    (empty-model edge: all zeros when a model has no intermediates).
    """

    pct_by_reuse_count: dict
    pct_intermediate_by_reuse_distance: dict
    total_bytes: int
    intermediate_bytes: int


def validate_model(model: ModelSpec) -> ModelSpec:
    """Check chain consistency and the block partition."""
    if not model.layers:
        raise ModelFormatError(f"{model.name}: model has no layers")
    for i, layer in enumerate(model.layers):
        if layer.id != i:
            raise ModelFormatError(
                f"{model.name}: layer ids must be 0..n-1 in order")
    for prev, cur in zip(model.layers, model.layers[1:]):
        if prev.N != cur.K:
            raise ModelFormatError(
                f"{model.name}: dimension mismatch at layer {cur.id} "
                f"(N={prev.N} of layer {prev.id} != K={cur.K})")
    if model.qos_ms is not None and model.qos_ms <= 0:
        raise ModelFormatError(f"{model.name}: qos_ms must be positive")
    if model.blocks:
        expect = 0
        for start, end in model.blocks:
            if start != expect or end <= start:
                raise ModelFormatError(
                    f"{model.name}: blocks must partition the layer list")
            first = model.layers[start]
            for idx in range(start, end):
                if (model.layers[idx].M != first.M
                        or model.layers[idx].elem_bytes != first.elem_bytes):
                    raise ModelFormatError(
                        f"{model.name}: M/elem_bytes change inside block "
                        f"at layer {idx}")
            expect = end
        if expect != model.num_layers:
            raise ModelFormatError(
                f"{model.name}: blocks must cover all layers")
    return model


def load_model(path: str, hw: HardwareConfig | None = None) -> ModelSpec:
    """Load and validate a model description file.

    The file is JSON: {name, qos_ms?, layers: [{kind, M, N, K,
    elem_bytes?, weight_resident?}]}.  Blocks are computed here with the
    default segmentation caps, not read from the file.
    """
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ModelFormatError(f"model file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path} is not valid JSON: {exc}")
    return model_from_dict(data, hw=hw)


def model_from_dict(data: dict, hw: HardwareConfig | None = None) -> ModelSpec:
    if not isinstance(data, dict) or "name" not in data or "layers" not in data:
        raise ModelFormatError("model needs 'name' and 'layers' fields")
    layers = []
    for i, raw in enumerate(data["layers"]):
        try:
            layers.append(LayerSpec(
                id=i,
                kind=raw["kind"],
                M=int(raw["M"]), N=int(raw["N"]), K=int(raw["K"]),
                elem_bytes=int(raw.get("elem_bytes", 1)),
                weight_resident=bool(raw.get("weight_resident", False)),
            ))
        except KeyError as exc:
            raise ModelFormatError(f"layer {i}: missing field {exc}")
    model = ModelSpec(name=str(data["name"]), layers=tuple(layers),
                      qos_ms=data.get("qos_ms"))
    validate_model(model)
    return segment_blocks(model, hw=hw)


def model_to_dict(model: ModelSpec) -> dict:
    out = {"name": model.name, "layers": []}
    if model.qos_ms is not None:
        out["qos_ms"] = model.qos_ms
    for layer in model.layers:
        entry = {"kind": layer.kind, "M": layer.M, "N": layer.N, "K": layer.K}
        if layer.elem_bytes != 1:
            entry["elem_bytes"] = layer.elem_bytes
        if layer.weight_resident:
            entry["weight_resident"] = True
        out["layers"].append(entry)
    return out


def segment_blocks(model: ModelSpec,
                   max_block_layers: int | None = None,
                   lbm_page_cap: int | None = None,
                   hw: HardwareConfig | None = None) -> ModelSpec:
    """Partition the layer list into blocks, greedily.

    A block grows while (a) its length stays within `max_block_layers`,
    (b) its block-mapping cache footprint fits `lbm_page_cap` pages, and
    (c) M and elem_bytes stay constant (the chain invariant inside a
    block).  A single layer always forms a valid block, whatever its
    footprint.
    """
    hw = hw or HardwareConfig()
    if max_block_layers is None:
        max_block_layers = hw.max_block_layers
    if lbm_page_cap is None:
        lbm_page_cap = hw.lbm_page_cap
    if max_block_layers < 1 or lbm_page_cap < 1:
        raise ModelFormatError("segmentation caps must be >= 1")

    from . import mapper  # deferred: mapper provides the footprint oracle

    blocks = []
    start = 0
    n = model.num_layers
    while start < n:
        end = start + 1
        while end < n:
            nxt = model.layers[end]
            head = model.layers[start]
            if (end - start + 1 > max_block_layers
                    or nxt.M != head.M or nxt.elem_bytes != head.elem_bytes):
                break
            candidate = model.layers[start:end + 1]
            if mapper.lbm_footprint_pages(candidate, hw) > lbm_page_cap:
                break
            end += 1
        blocks.append((start, end))
        start = end
    return validate_model(replace(model, blocks=tuple(blocks)))


# ---------------------------------------------------------------------
# Reuse statistics
# ---------------------------------------------------------------------

def _bucket_count(count: int) -> str:
    if count <= 1:
        return "1"
    if count == 2:
        return "2"
    if count <= 4:
        return "3-4"
    return "5+"


def _bucket_distance(dist: int) -> str:
    if dist < 256 * _KB:
        return "<256KB"
    if dist < _MB:
        return "256KB-1MB"
    if dist <= 2 * _MB:
        return "1-2MB"
    return ">2MB"


def layer_access_counts(layer: LayerSpec, hw: HardwareConfig | None = None):
    """Per-tensor cache-access counts for one layer, one inference.

    Counting rule (fixed, so it is testable): the layer runs its default
    counting candidate, a weight-stationary tiling in which each weight
    byte is streamed exactly once per inference, the input is re-read once
    per output-column tile, and the output is read-modified-written once
    per reduction tile after the first.  Returns a dict
    {"input": reads, "weights": reads, "output": accesses}.
    """
    from . import mapper

    hw = hw or HardwareConfig()
    cand = mapper.counting_candidate(layer, hw)
    trips = cand.loop.trip_counts(layer)
    n_n = trips["n"]
    n_k = trips["k"]
    return {"input": n_n, "weights": 1, "output": 2 * n_k - 1}


def reuse_stats(model: ModelSpec, window: int = 0,
                hw: HardwareConfig | None = None) -> ReuseStats:
    """Compute the two reuse histograms for a model.

    Reuse counts: each distinct piece of data (external input, per-layer
    weights, intermediates, final output) is credited with the number of
    cache-level accesses it receives during one inference under the
    default counting candidate (see `layer_access_counts`); intermediates
    accumulate their producer-side and consumer-side accesses.  `window`
    optionally widens the analysis to as many whole inferences as fit in
    that many streamed bytes, which multiplies every count (weights are
    re-streamed each invocation).

    Reuse distances: under sequential layer execution the canonical
    stream per layer is [weights][input][output]; an intermediate byte is
    produced in layer i's output pass and consumed in layer i+1's input
    pass, so the other-data bytes between the two accesses are the rest
    of that intermediate plus layer i+1's weights.  Distances are uniform
    over a tensor; histograms weight by bytes.
    """
    validate_model(model)
    hw = hw or HardwareConfig()
    counts = [layer_access_counts(layer, hw) for layer in model.layers]
    stream_bytes = sum(l.weight_bytes + l.input_bytes + l.output_bytes
                      for l in model.layers)
    inferences = max(1, window // stream_bytes) if window else 1

    count_hist = {b: 0 for b in COUNT_BUCKETS}
    total_bytes = 0

    def credit(nbytes: int, count: int):
        nonlocal total_bytes
        count_hist[_bucket_count(count * inferences)] += nbytes
        total_bytes += nbytes

    first, last = model.layers[0], model.layers[-1]
    credit(first.input_bytes, counts[0]["input"])
    for i, layer in enumerate(model.layers):
        credit(layer.weight_bytes, counts[i]["weights"])
    for i in range(model.num_layers - 1):
        produced = counts[i]["output"]
        consumed = counts[i + 1]["input"]
        credit(model.intermediate_bytes(i), produced + consumed)
    credit(last.output_bytes, counts[-1]["output"])

    dist_hist = {b: 0 for b in DISTANCE_BUCKETS}
    inter_bytes = 0
    for i in range(model.num_layers - 1):
        nbytes = model.intermediate_bytes(i)
        dist = (nbytes - 1) + model.layers[i + 1].weight_bytes
        dist_hist[_bucket_distance(dist)] += nbytes
        inter_bytes += nbytes

    count_pct = {b: 100.0 * v / total_bytes for b, v in count_hist.items()}
    if inter_bytes:
        dist_pct = {b: 100.0 * v / inter_bytes for b, v in dist_hist.items()}
    else:
        dist_pct = {b: 0.0 for b in DISTANCE_BUCKETS}
    return ReuseStats(pct_by_reuse_count=count_pct,
                      pct_intermediate_by_reuse_distance=dist_pct,
                      total_bytes=total_bytes,
                      intermediate_bytes=inter_bytes)
