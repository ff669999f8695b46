"""Kernel-blocked FC timing/functional model and the alternating-scan pipeline.

Cycle model: an FC unit issues one kr x kc weight block per cycle, plus an
adder-tree fill of ceil(log2(max(kr, 2))) cycles charged once per pass:

    cycles(R, C, kr, kc, B) = ceil(R/kr) * ceil(C/kc) * B + fill

Scheduling rules (all in integer cycles):

* layers alternate scan direction, column first;
* a column-scan layer needs all its inputs, then emits one kc-wide output
  group every ceil(R/kr) cycles (group g completes g*ceil(R/kr) + fill after
  its start);
* a row-scan layer consumes input chunks of kr as they arrive, spending
  ceil(C/kc) cycles per chunk on partial sums for every output, and releases
  all outputs only at completion;
* a layer unit serves queries of a batch in order, back to back;
* a DRAM-spilled layer streams its weights once per batch: the first query's
  pass is floored so that finishing fraction f of the work also waits for
  fraction f of the weight fetch.

Hence a (column, row) pair overlaps while consecutive pairs serialize, which
caps the benefit at 2x for long equal stacks.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

SCAN_COLUMN = "column"
SCAN_ROW = "row"


def is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


@dataclass
class FcLayerSpec:
    in_width: int
    out_width: int
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    scan: str = SCAN_COLUMN

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError("layer widths must be >= 1")
        if self.scan not in (SCAN_COLUMN, SCAN_ROW):
            raise ValueError(f"unknown scan {self.scan!r}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float32)
            if self.weights.shape != (self.out_width, self.in_width):
                raise ValueError(
                    f"weight shape {self.weights.shape} != ({self.out_width}, {self.in_width})"
                )
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float32)
            if self.bias.shape != (self.out_width,):
                raise ValueError(f"bias shape {self.bias.shape} != ({self.out_width},)")


def make_layers(layer_dims, weights=None, biases=None) -> list[FcLayerSpec]:
    """Build an FC stack with alternating scans, column scan first."""
    layers = []
    for l in range(len(layer_dims) - 1):
        layers.append(FcLayerSpec(
            layer_dims[l], layer_dims[l + 1],
            None if weights is None else weights[l],
            None if biases is None else biases[l],
            SCAN_COLUMN if l % 2 == 0 else SCAN_ROW,
        ))
    return layers


@dataclass(frozen=True)
class KernelAssignment:
    """Per-layer (kr, kc) block sizes plus the vector-sum kernel (kr_e, kc_e)."""

    bottom: tuple[tuple[int, int], ...]
    top: tuple[tuple[int, int], ...]
    ev: tuple[int, int] = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "bottom", tuple((int(a), int(b)) for a, b in self.bottom))
        object.__setattr__(self, "top", tuple((int(a), int(b)) for a, b in self.top))
        object.__setattr__(self, "ev", (int(self.ev[0]), int(self.ev[1])))

    def validate(self, model_spec) -> None:
        for name, dims, kernels in (("bottom", model_spec.bottom_mlp_dims, self.bottom),
                                    ("top", model_spec.top_mlp_dims, self.top)):
            if len(kernels) != len(dims) - 1:
                raise ValueError(f"{name}: {len(kernels)} kernels for {len(dims) - 1} layers")
            for l, (kr, kc) in enumerate(kernels):
                r, c = dims[l], dims[l + 1]
                if not (1 <= kr <= r and 1 <= kc <= c):
                    raise ValueError(f"{name} layer {l}: kernel ({kr}, {kc}) exceeds ({r}, {c})")
                if not (is_pow2(kr) and is_pow2(kc)):
                    raise ValueError(f"{name} layer {l}: kernel ({kr}, {kc}) not powers of two")
        kr_e, kc_e = self.ev
        if kr_e != 1:
            raise ValueError("vector-sum kernel row width is fixed to 1")
        if not (1 <= kc_e <= model_spec.ev_dim and is_pow2(kc_e)):
            raise ValueError(f"kc_e {kc_e} invalid for ev_dim {model_spec.ev_dim}")

    def flat(self) -> tuple[tuple[int, int], ...]:
        return self.bottom + self.top + (self.ev,)

    def objective(self) -> int:
        return sum(kr * kc for kr, kc in self.flat())

    @staticmethod
    def largest_pow2(n: int) -> int:
        return 1 << (n.bit_length() - 1)

    @classmethod
    def all_max(cls, model_spec) -> "KernelAssignment":
        p2 = cls.largest_pow2
        bottom = tuple((p2(model_spec.bottom_mlp_dims[l]), p2(model_spec.bottom_mlp_dims[l + 1]))
                       for l in range(len(model_spec.bottom_mlp_dims) - 1))
        top = tuple((p2(model_spec.top_mlp_dims[l]), p2(model_spec.top_mlp_dims[l + 1]))
                    for l in range(len(model_spec.top_mlp_dims) - 1))
        return cls(bottom, top, (1, p2(model_spec.ev_dim)))


def fill_cycles(kr: int) -> int:
    return math.ceil(math.log2(max(kr, 2)))


def fc_cycles(layer: FcLayerSpec, kernel: tuple[int, int], batch: int = 1) -> int:
    kr, kc = kernel
    if not (1 <= kr <= layer.in_width and 1 <= kc <= layer.out_width):
        raise ValueError(f"kernel ({kr}, {kc}) exceeds layer ({layer.in_width}, {layer.out_width})")
    chunks = -(-layer.in_width // kr)
    groups = -(-layer.out_width // kc)
    return chunks * groups * batch + fill_cycles(kr)


def conventional_cycles(layers, kernels, batch: int = 1) -> int:
    """No inter-layer overlap: the sum of the individual layer passes."""
    return sum(fc_cycles(l, k, batch) for l, k in zip(layers, kernels))


# ---------------------------------------------------------------------------
# Functional paths.

def decompose_first_layer(weights: np.ndarray, bottom_width: int,
                          emb_width: int) -> tuple[np.ndarray, np.ndarray]:
    """Column-split the first top-layer weights into the halves consuming the
    bottom-MLP output and the concatenated embedding sums."""
    weights = np.asarray(weights, dtype=np.float32)
    if weights.shape[1] != bottom_width + emb_width:
        raise ValueError(
            f"split {bottom_width}+{emb_width} != layer input width {weights.shape[1]}"
        )
    return weights[:, :bottom_width].copy(), weights[:, bottom_width:].copy()


def _ascending_dot(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    prod = weights * x
    if prod.shape[1] == 1:
        return prod[:, 0].copy()
    return prod.cumsum(axis=1, dtype=np.float32)[:, -1]


def eval_decomposed(w_bottom: np.ndarray, w_emb: np.ndarray, bias: np.ndarray,
                    bottom_in: np.ndarray, emb_in: np.ndarray) -> np.ndarray:
    """Two-phase split evaluation: both partial dot products accumulate in
    ascending input order, the embedding partial is added to the bottom
    partial, bias last."""
    p = _ascending_dot(w_bottom, np.asarray(bottom_in, dtype=np.float32))
    q = _ascending_dot(w_emb, np.asarray(emb_in, dtype=np.float32))
    return ((p + q) + np.asarray(bias, dtype=np.float32)).astype(np.float32)


def _tree_sum(block: np.ndarray) -> np.ndarray:
    """Pairwise adder-tree reduction along axis 1, FP32 at every node."""
    while block.shape[1] > 1:
        half = block.shape[1] // 2
        paired = (block[:, 0:2 * half:2] + block[:, 1:2 * half:2]).astype(np.float32)
        if block.shape[1] % 2:
            paired = np.concatenate([paired, block[:, -1:]], axis=1)
        block = paired
    return block[:, 0]


def mlp_forward_blocked(layer_dims, weights, biases, kernels, x) -> np.ndarray:
    """Forward pass in the engine's accumulation order: input blocks of kr in
    ascending order, adder-tree order inside each block, bias at completion,
    activation on emission (ReLU on hidden layers, linear output)."""
    x = np.asarray(x, dtype=np.float32)
    nlayers = len(layer_dims) - 1
    if len(kernels) != nlayers:
        raise ValueError(f"{len(kernels)} kernels for {nlayers} layers")
    for l in range(nlayers):
        w = np.asarray(weights[l], dtype=np.float32)
        r = layer_dims[l]
        if w.shape != (layer_dims[l + 1], r) or x.shape != (r,):
            raise ValueError(f"layer {l}: shape mismatch {w.shape} vs input {x.shape}")
        kr, kc = kernels[l]
        if not (1 <= kr <= r and 1 <= kc <= layer_dims[l + 1]):
            raise ValueError(f"layer {l}: kernel ({kr}, {kc}) exceeds dims")
        prod = w * x
        acc = None
        for i in range(0, r, kr):
            part = _tree_sum(prod[:, i:min(i + kr, r)])
            acc = part if acc is None else (acc + part).astype(np.float32)
        y = (acc + np.asarray(biases[l], dtype=np.float32)).astype(np.float32)
        if l < nlayers - 1:
            y = np.maximum(y, np.float32(0.0))
        x = y
    return x


# ---------------------------------------------------------------------------
# Pipeline scheduling.

@dataclass
class LayerQuerySchedule:
    layer: int
    query: int
    scan: str
    start_cycle: int
    end_cycle: int                      # completion incl. fill
    emissions: list[int] = field(default_factory=list)   # group g at emissions[g-1]
    chunk_ready: list[int] = field(default_factory=list)  # row layers: input chunk ready
    chunk_start: list[int] = field(default_factory=list)
    chunk_end: list[int] = field(default_factory=list)


@dataclass
class PipelineSchedule:
    entries: list[LayerQuerySchedule]
    makespan_cycles: int
    clock_period_ns: float
    completions: list[int]              # per-query last-layer completion, cycles

    def to_ns(self, cycles: int) -> int:
        return round(cycles * self.clock_period_ns)

    @property
    def makespan_ns(self) -> int:
        return self.to_ns(self.makespan_cycles)

    def completions_ns(self) -> list[int]:
        return [self.to_ns(c) for c in self.completions]


def _stream_floor(done_work: int, total_work: int, floor: int) -> int:
    # completing a fraction of the work also waits for that fraction of the fetch
    if floor <= 0:
        return 0
    return math.ceil(floor * done_work / total_work)


def _column_pass(entry: LayerQuerySchedule, chunks: int, groups: int, fill: int,
                 ready: int, unit_free: int, floor: int) -> tuple[int, int]:
    start = max(ready, unit_free)
    work = chunks * groups
    for g in range(1, groups + 1):
        t = start + max(g * chunks, _stream_floor(g * chunks, work, floor))
        entry.emissions.append(t + fill)
    issue_end = start + max(work, floor)
    entry.start_cycle = start
    entry.end_cycle = issue_end + fill
    return entry.end_cycle, issue_end


def _row_pass(entry: LayerQuerySchedule, kr: int, in_width: int, groups: int, fill: int,
              avail, unit_free: int, floor: int) -> tuple[int, int]:
    chunks = -(-in_width // kr)
    work = chunks * groups
    busy = unit_free
    first_start = None
    for j in range(chunks):
        last_input = min((j + 1) * kr, in_width) - 1
        ready_j = avail(last_input)
        start_j = max(ready_j, busy)
        if first_start is None:
            first_start = start_j
        end_j = start_j + groups
        end_j = max(end_j, first_start + _stream_floor((j + 1) * groups, work, floor))
        entry.chunk_ready.append(ready_j)
        entry.chunk_start.append(start_j)
        entry.chunk_end.append(end_j)
        busy = end_j
    entry.start_cycle = first_start
    entry.end_cycle = busy + fill
    return entry.end_cycle, busy


def pipeline_schedule(layers: list[FcLayerSpec], kernels, clock_period_ns: float,
                      inputs_at_cycles=None, batch: int | None = None,
                      floor_cycles=None) -> PipelineSchedule:
    """Schedule a batch through an alternating-scan FC stack.

    `inputs_at_cycles[q]` is when query q's stack inputs are all available.
    `floor_cycles[l]`, when set, is the weight-fetch floor of a DRAM-spilled
    layer, paid by the first query of the batch.
    """
    n = len(layers)
    if n == 0:
        raise ValueError("empty layer stack")
    for l, layer in enumerate(layers):
        want = SCAN_COLUMN if l % 2 == 0 else SCAN_ROW
        if layer.scan != want:
            raise ValueError(f"layer {l}: scan {layer.scan!r}, expected {want!r}")
        if l > 0 and layer.in_width != layers[l - 1].out_width:
            raise ValueError(f"layer {l}: input width {layer.in_width} != "
                             f"previous output {layers[l - 1].out_width}")
    if len(kernels) != n:
        raise ValueError(f"{len(kernels)} kernels for {n} layers")
    for l, (layer, (kr, kc)) in enumerate(zip(layers, kernels)):
        if not (1 <= kr <= layer.in_width and 1 <= kc <= layer.out_width):
            raise ValueError(f"layer {l}: kernel ({kr}, {kc}) exceeds dims")
    if inputs_at_cycles is None:
        inputs_at_cycles = [0] * (batch or 1)
    B = len(inputs_at_cycles)
    floors = list(floor_cycles) if floor_cycles is not None else [0] * n

    unit_free = [0] * n
    entries: list[LayerQuerySchedule] = []
    completions = []
    for q in range(B):
        prev_entry = None
        prev_kc = None
        completion = 0
        for l, layer in enumerate(layers):
            kr, kc = kernels[l]
            chunks = -(-layer.in_width // kr)
            groups = -(-layer.out_width // kc)
            fill = fill_cycles(kr)
            floor = floors[l] if q == 0 else 0
            entry = LayerQuerySchedule(l, q, layer.scan, 0, 0)
            if layer.scan == SCAN_COLUMN:
                ready = inputs_at_cycles[q] if l == 0 else prev_entry.end_cycle
                completion, free = _column_pass(entry, chunks, groups, fill, ready,
                                                unit_free[l], floor)
            else:
                emis = prev_entry.emissions
                pkc = prev_kc
                avail = lambda i, emis=emis, pkc=pkc: emis[i // pkc]
                completion, free = _row_pass(entry, kr, layer.in_width, groups, fill,
                                             avail, unit_free[l], floor)
            unit_free[l] = free
            entries.append(entry)
            prev_entry = entry
            prev_kc = kc
        completions.append(completion)
    return PipelineSchedule(entries, max(completions), clock_period_ns, completions)


def pipeline_schedule_decomposed(top_layers: list[FcLayerSpec], kernels,
                                 clock_period_ns: float, bottom_width: int, emb_width: int,
                                 bottom_ready_cycles, emb_ready_cycles,
                                 floor_cycles=None) -> PipelineSchedule:
    """Top-stack schedule with the first layer split column-wise.

    The first layer's bottom half runs as soon as the bottom-MLP output is
    ready; the embedding half starts when the summed vectors arrive, and only
    then do output groups emit. Remaining layers follow the generic rules.
    """
    n = len(top_layers)
    L0 = top_layers[0]
    if L0.scan != SCAN_COLUMN:
        raise ValueError("decomposed first layer must be column scan")
    if L0.in_width != bottom_width + emb_width:
        raise ValueError("split widths inconsistent with first-layer input width")
    B = len(bottom_ready_cycles)
    if len(emb_ready_cycles) != B:
        raise ValueError("availability lists differ in length")
    floors = list(floor_cycles) if floor_cycles is not None else [0] * n

    kr0, kc0 = kernels[0]
    wb_chunks = -(-bottom_width // kr0)
    we_chunks = -(-emb_width // kr0)
    groups0 = -(-L0.out_width // kc0)
    fill0 = fill_cycles(kr0)

    unit_free = [0] * n
    entries: list[LayerQuerySchedule] = []
    completions = []
    for q in range(B):
        floor = floors[0] if q == 0 else 0
        entry = LayerQuerySchedule(0, q, SCAN_COLUMN, 0, 0)
        start_b = max(bottom_ready_cycles[q], unit_free[0])
        end_b = start_b + wb_chunks * groups0
        start_e = max(end_b, emb_ready_cycles[q])
        work = (wb_chunks + we_chunks) * groups0
        for g in range(1, groups0 + 1):
            t = start_e + max(g * we_chunks,
                              _stream_floor(wb_chunks * groups0 + g * we_chunks, work, floor)
                              - (start_e - start_b))
            entry.emissions.append(t + fill0)
        issue_end = max(start_e + we_chunks * groups0, start_b + max(work, floor))
        entry.start_cycle = start_b
        entry.end_cycle = issue_end + fill0
        unit_free[0] = issue_end
        entries.append(entry)

        prev_entry, prev_kc = entry, kc0
        completion = entry.end_cycle
        for l in range(1, n):
            layer = top_layers[l]
            kr, kc = kernels[l]
            groups = -(-layer.out_width // kc)
            fill = fill_cycles(kr)
            lfloor = floors[l] if q == 0 else 0
            e = LayerQuerySchedule(l, q, layer.scan, 0, 0)
            if layer.scan == SCAN_ROW:
                emis = prev_entry.emissions
                pkc = prev_kc
                avail = lambda i, emis=emis, pkc=pkc: emis[i // pkc]
                completion, free = _row_pass(e, kr, layer.in_width, groups, fill,
                                             avail, unit_free[l], lfloor)
            else:
                chunks = -(-layer.in_width // kr)
                completion, free = _column_pass(e, chunks, groups, fill,
                                                prev_entry.end_cycle, unit_free[l], lfloor)
            unit_free[l] = free
            entries.append(e)
            prev_entry, prev_kc = e, kc
        completions.append(completion)
    return PipelineSchedule(entries, max(completions), clock_period_ns, completions)


def schedule_to_csv(sched: PipelineSchedule) -> str:
    """Gantt-style dump: one row per output group (column layers) or per
    input chunk (row layers)."""
    out = io.StringIO()
    out.write("layer,output_group,start_ns,end_ns\n")
    for e in sched.entries:
        if e.scan == SCAN_COLUMN:
            prev = e.start_cycle
            for g, t in enumerate(e.emissions, 1):
                out.write(f"{e.layer},{g},{sched.to_ns(prev)},{sched.to_ns(t)}\n")
                prev = t
        else:
            for j, (s, t) in enumerate(zip(e.chunk_start, e.chunk_end), 1):
                out.write(f"{e.layer},{j},{sched.to_ns(s)},{sched.to_ns(t)}\n")
    return out.getvalue()
