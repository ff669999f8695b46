"""Scenario runner: full inference configurations over generated workloads.

Modes:

* ``rmssd``        — lookup engine and decomposed first top layer in the
  device; bottom MLP runs concurrently with the flash stage, the top stack
  is pipelined with alternating scans. Batches are dispatched back to back.
* ``emb-vectorsum`` — only lookup + vector sum in the device; summed vectors
  cross the host interface and the MLPs run on the host compute model.
* ``ssd-baseline``  — host-side inference with a static DRAM-resident row
  set covering ``dram_fraction`` of the table bytes; misses pay the full
  synchronous block-read path. Queries are processed serially.

Per-query latency is measured from the dispatch of the query's batch (from
the start of its processing for the baseline). Scores of every mode are
computed with the reference summation orders; for device modes the embedding
values are read back from the flash byte image, so layout bugs surface as
score mismatches.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ev_engine
from .events import EventQueue
from .kernel_search import (ResourceModel, SearchOutcome, SearchSpace, WorkloadProfile,
                            make_lookup_env, resource_usage, bram_placement,
                            _spill_floor_cycles, search)
from .mlp_engine import (KernelAssignment, make_layers, pipeline_schedule,
                         pipeline_schedule_decomposed)
from .recmodel import Model, generate_workload, interact, mlp_forward, reference_inference
from .storage import SsdGeometry, TimingParams, page_read_time

SCHEMA_VERSION = 1

MODE_RMSSD = "rmssd"
MODE_EMB_VECTORSUM = "emb-vectorsum"
MODE_SSD_BASELINE = "ssd-baseline"
MODES = (MODE_RMSSD, MODE_EMB_VECTORSUM, MODE_SSD_BASELINE)


class InfeasibleSearchError(RuntimeError):
    def __init__(self, outcome: SearchOutcome):
        super().__init__(f"kernel search infeasible, binding constraint: "
                         f"{outcome.binding_constraint}")
        self.outcome = outcome


@dataclass(frozen=True)
class WorkloadConfig:
    distribution: str = "uniform"
    pooling: int = 8
    zipf_s: float = 1.0


@dataclass
class Scenario:
    mode: str
    model: Model
    geometry: SsdGeometry
    timing: TimingParams
    workload: WorkloadConfig
    query_count: int
    batch: int = 2
    dram_fraction: float = 0.25
    kernels: KernelAssignment | None = None
    auto_search: bool = False
    resource_model: ResourceModel = field(default_factory=ResourceModel)
    space: SearchSpace | None = None
    duration_ns: int | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.query_count < 0:
            raise ValueError("query_count must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.mode == MODE_SSD_BASELINE and not 0 < self.dram_fraction <= 1:
            raise ValueError(f"dram_fraction must be in (0, 1], got {self.dram_fraction}")
        if self.mode == MODE_RMSSD and self.kernels is None and not self.auto_search:
            raise ValueError("rmssd mode needs a kernel assignment or auto_search")
        if self.kernels is not None:
            self.kernels.validate(self.model.spec)
        if self.duration_ns is not None and self.duration_ns < 0:
            raise ValueError("duration_ns must be >= 0")


@dataclass
class Metrics:
    schema_version: int
    mode: str
    issued: int
    completed: int
    in_flight: int
    horizon_ns: int
    throughput_qps: float
    latency_p50_ns: int
    latency_p95_ns: int
    latency_p99_ns: int
    latency_max_ns: int
    channel_utilization: list[float]
    resources: dict | None
    event_count: int

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "mode": self.mode,
            "issued": self.issued,
            "completed": self.completed,
            "in_flight": self.in_flight,
            "horizon_ns": self.horizon_ns,
            "throughput_qps": self.throughput_qps,
            "latency_ns": {
                "p50": self.latency_p50_ns,
                "p95": self.latency_p95_ns,
                "p99": self.latency_p99_ns,
                "max": self.latency_max_ns,
            },
            "channel_utilization": self.channel_utilization,
            "resources": self.resources,
            "event_count": self.event_count,
        }


def metrics_json(metrics: Metrics) -> str:
    return json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"


def percentile_nearest_rank(sorted_values: list[int], q: float) -> int:
    if not sorted_values:
        return 0
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class RunResult:
    metrics: Metrics
    scores: list[float]
    latencies_ns: list[int]
    spans: list[tuple[int, str, int, int]]     # (query_id, stage, start_ns, end_ns)
    search_outcome: SearchOutcome | None = None
    dram_hits: int = 0
    dram_misses: int = 0


def spans_to_csv(spans) -> str:
    lines = ["query_id,stage,start_ns,end_ns"]
    for qid, stage, s, e in spans:
        lines.append(f"{qid},{stage},{s},{e}")
    return "\n".join(lines) + "\n"


def _host_mlp_ns(spec, timing: TimingParams) -> int:
    macs = 0
    for dims in (spec.bottom_mlp_dims, spec.top_mlp_dims):
        for l in range(len(dims) - 1):
            macs += dims[l] * dims[l + 1]
    return round(macs * timing.host_ns_per_mac)


def _finish_metrics(scenario, events, latencies, completions, issued, busy_per_channel):
    completed = len(latencies)
    horizon = max(completions) if completions else 0
    lat = sorted(latencies)
    util = [0.0] * scenario.geometry.channels
    if horizon > 0:
        util = [b / horizon for b in busy_per_channel]
    thr = completed * 1e9 / horizon if horizon > 0 else 0.0
    return Metrics(
        schema_version=SCHEMA_VERSION,
        mode=scenario.mode,
        issued=issued,
        completed=completed,
        in_flight=issued - completed,
        horizon_ns=horizon,
        throughput_qps=thr,
        latency_p50_ns=percentile_nearest_rank(lat, 0.50),
        latency_p95_ns=percentile_nearest_rank(lat, 0.95),
        latency_p99_ns=percentile_nearest_rank(lat, 0.99),
        latency_max_ns=lat[-1] if lat else 0,
        channel_utilization=util,
        resources=None,
        event_count=events.popped,
    )


def run(scenario: Scenario, seed: int) -> RunResult:
    scenario.validate()
    model = scenario.model
    spec = model.spec
    wl = scenario.workload
    queries = []
    if scenario.query_count >= 1:
        queries = generate_workload(spec, wl.distribution, wl.pooling,
                                    scenario.query_count, seed, wl.zipf_s)
    if scenario.mode == MODE_RMSSD:
        return _run_rmssd(scenario, queries, seed)
    if scenario.mode == MODE_EMB_VECTORSUM:
        return _run_emb_vectorsum(scenario, queries, seed)
    return _run_baseline(scenario, queries, seed)


def _score_device(model, query, ev_concat) -> float:
    spec = model.spec
    bottom = mlp_forward(spec.bottom_mlp_dims, model.bottom_weights, model.bottom_biases,
                         query.dense)
    top_in = interact(bottom, [ev_concat[t * spec.ev_dim:(t + 1) * spec.ev_dim]
                               for t in range(spec.num_tables)])
    out = mlp_forward(spec.top_mlp_dims, model.top_weights, model.top_biases, top_in)
    return float(out[0])


def _spill_floors(scenario, timing):
    _, _, spill = bram_placement(scenario.model.spec, scenario.resource_model)
    return (_spill_floor_cycles(spill["bottom"], scenario.resource_model, timing),
            _spill_floor_cycles(spill["top"], scenario.resource_model, timing))


def _run_rmssd(scenario: Scenario, queries, seed: int) -> RunResult:
    model, spec = scenario.model, scenario.model.spec
    geometry, timing = scenario.geometry, scenario.timing
    outcome = None
    if scenario.auto_search and scenario.kernels is None:
        profile = WorkloadProfile(scenario.workload.distribution, scenario.workload.pooling,
                                  scenario.workload.zipf_s, seed)
        space = scenario.space or SearchSpace(initial_batch=scenario.batch,
                                              max_batch=max(scenario.batch, 16))
        outcome = search(model, scenario.resource_model, geometry, timing, profile, space)
        if not outcome.feasible:
            raise InfeasibleSearchError(outcome)
        assignment, batch = outcome.assignment, outcome.batch
    else:
        assignment, batch = scenario.kernels, scenario.batch

    emap, ftl = make_lookup_env(model, geometry)
    flash = ev_engine.build_flash_image(model.tables, emap, geometry)
    bottom_layers = make_layers(spec.bottom_mlp_dims)
    top_layers = make_layers(spec.top_mlp_dims)
    floors_b, floors_t = _spill_floors(scenario, timing)
    period = timing.clock_period_ns

    events = EventQueue()
    scores: dict[int, float] = {}
    latencies: dict[int, int] = {}
    completions: list[int] = []
    spans: list[tuple[int, str, int, int]] = []
    busy = [0] * geometry.channels
    issued = 0

    if queries and (scenario.duration_ns is None or scenario.duration_ns > 0):
        events.push(0, "dispatch", 0)
    while len(events):
        ev = events.pop()
        if ev.kind == "complete":
            qid, latency, score = ev.payload
            latencies[qid] = latency
            scores[qid] = score
            completions.append(ev.ts_ns)
            continue
        k = ev.payload
        t0 = ev.ts_ns
        bq = queries[k * batch:(k + 1) * batch]
        if not bq:
            continue
        issued += len(bq)
        lookup = ev_engine.simulate_lookup(model, bq, geometry, timing, emap, ftl,
                                           flash=flash, kc_e=assignment.ev[1])
        bot = pipeline_schedule(bottom_layers, assignment.bottom, period,
                                inputs_at_cycles=[0] * len(bq), floor_cycles=floors_b)
        e_cycles = [timing.ns_to_cycles(e) for e in lookup.e_ns]
        top = pipeline_schedule_decomposed(top_layers, assignment.top, period,
                                           spec.bottom_out_width, spec.emb_out_width,
                                           bot.completions, e_cycles, floor_cycles=floors_t)
        b_ns = bot.completions_ns()
        s_ns = top.completions_ns()
        l0_start = {e.query: top.to_ns(e.start_cycle) for e in top.entries if e.layer == 0}
        for i, q in enumerate(bq):
            qid = k * batch + i
            score = _score_device(model, q, lookup.ev_concat[i])
            events.push(t0 + s_ns[i], "complete", (qid, s_ns[i], score))
            spans.append((qid, "emb", t0 + lookup.flash_start_ns[i], t0 + lookup.e_ns[i]))
            spans.append((qid, "bottom_mlp", t0, t0 + b_ns[i]))
            spans.append((qid, "top_mlp", t0 + l0_start[i], t0 + s_ns[i]))
        for c, b in enumerate(lookup.channel_busy_ns):
            busy[c] += b
        device_free = t0 + max(max(s_ns), lookup.t_emb_ns)
        if (k + 1) * batch < len(queries) and (scenario.duration_ns is None
                                               or device_free < scenario.duration_ns):
            events.push(device_free, "dispatch", k + 1)

    metrics = _finish_metrics(scenario, events, list(latencies.values()), completions,
                              issued, busy)
    metrics.resources = resource_usage(spec, assignment, scenario.resource_model).to_dict()
    ordered = sorted(latencies)
    return RunResult(metrics, [scores[q] for q in ordered],
                     [latencies[q] for q in ordered], spans, search_outcome=outcome)


def _run_emb_vectorsum(scenario: Scenario, queries, seed: int) -> RunResult:
    model, spec = scenario.model, scenario.model.spec
    geometry, timing = scenario.geometry, scenario.timing
    kc_e = scenario.kernels.ev[1] if scenario.kernels is not None else spec.ev_dim
    batch = scenario.batch
    emap, ftl = make_lookup_env(model, geometry)
    flash = ev_engine.build_flash_image(model.tables, emap, geometry)
    host_mlp = _host_mlp_ns(spec, timing)
    xfer = timing.host_iface_ns(spec.emb_out_width * 4) + timing.host_overhead_ns

    events = EventQueue()
    scores: dict[int, float] = {}
    latencies: dict[int, int] = {}
    completions: list[int] = []
    spans: list[tuple[int, str, int, int]] = []
    busy = [0] * geometry.channels
    issued = 0
    host_free = 0

    if queries and (scenario.duration_ns is None or scenario.duration_ns > 0):
        events.push(0, "dispatch", 0)
    while len(events):
        ev = events.pop()
        if ev.kind == "complete":
            qid, latency, score = ev.payload
            latencies[qid] = latency
            scores[qid] = score
            completions.append(ev.ts_ns)
            continue
        k = ev.payload
        t0 = ev.ts_ns
        bq = queries[k * batch:(k + 1) * batch]
        if not bq:
            continue
        issued += len(bq)
        lookup = ev_engine.simulate_lookup(model, bq, geometry, timing, emap, ftl,
                                           flash=flash, kc_e=kc_e)
        for i, q in enumerate(bq):
            qid = k * batch + i
            ready = t0 + lookup.e_ns[i] + xfer
            start = max(ready, host_free)
            s = start + host_mlp
            host_free = s
            score = _score_device(model, q, lookup.ev_concat[i])
            events.push(s, "complete", (qid, s - t0, score))
            spans.append((qid, "emb", t0 + lookup.flash_start_ns[i], t0 + lookup.e_ns[i]))
            spans.append((qid, "host_xfer", t0 + lookup.e_ns[i], ready))
            spans.append((qid, "host_mlp", start, s))
        for c, b in enumerate(lookup.channel_busy_ns):
            busy[c] += b
        device_free = t0 + lookup.t_emb_ns
        if (k + 1) * batch < len(queries) and (scenario.duration_ns is None
                                               or device_free < scenario.duration_ns):
            events.push(device_free, "dispatch", k + 1)

    metrics = _finish_metrics(scenario, events, list(latencies.values()), completions,
                              issued, busy)
    ordered = sorted(latencies)
    return RunResult(metrics, [scores[q] for q in ordered],
                     [latencies[q] for q in ordered], spans)


def resident_sets(spec, dram_fraction: float, distribution: str, seed: int):
    """Static per-table resident row sets: the hottest rows under zipf, a
    seeded uniform sample otherwise. Budget is dram_fraction of table rows."""
    sets = []
    rng = np.random.default_rng([int(seed), 0xD5A])
    for ts in spec.tables:
        m = int(ts.rows * dram_fraction)
        mask = np.zeros(ts.rows, dtype=bool)
        if distribution == "zipf":
            mask[:m] = True
        elif m > 0:
            picks = rng.choice(ts.rows, size=m, replace=False)
            mask[picks] = True
        sets.append(mask)
    return sets


def _run_baseline(scenario: Scenario, queries, seed: int) -> RunResult:
    model, spec = scenario.model, scenario.model.spec
    geometry, timing = scenario.geometry, scenario.timing
    emap, ftl = make_lookup_env(model, geometry)
    resident = resident_sets(spec, scenario.dram_fraction, scenario.workload.distribution,
                             seed)
    host_mlp = _host_mlp_ns(spec, timing)
    # an embedding row never straddles a page, so every miss is one page read
    miss_ns = (page_read_time(geometry, timing) + timing.host_iface_ns(spec.ev_dim * 4)
               + timing.host_overhead_ns)
    hit_ns = timing.dram_hit_ns_int
    page_busy = page_read_time(geometry, timing)

    events = EventQueue()
    scores: dict[int, float] = {}
    latencies: dict[int, int] = {}
    completions: list[int] = []
    spans: list[tuple[int, str, int, int]] = []
    busy = [0] * geometry.channels
    hits = misses = 0
    issued = 0
    t = 0

    for qid, q in enumerate(queries):
        if scenario.duration_ns is not None and t >= scenario.duration_ns:
            break
        issued += 1
        t_start = t
        for tbl, idx_list in enumerate(q.indices):
            mask = resident[tbl]
            for index in idx_list:
                if mask[index]:
                    hits += 1
                    t += hit_ns
                else:
                    misses += 1
                    lba, off = ev_engine.translate_index(emap, tbl, index)
                    busy[ftl.translate(lba).channel] += page_busy
                    t += miss_ns
        emb_end = t
        t += host_mlp
        score = reference_inference(model, q)
        events.push(t, "complete", (qid, t - t_start, score))
        spans.append((qid, "emb", t_start, emb_end))
        spans.append((qid, "host_mlp", emb_end, t))

    while len(events):
        ev = events.pop()
        qid, latency, score = ev.payload
        latencies[qid] = latency
        scores[qid] = score
        completions.append(ev.ts_ns)

    metrics = _finish_metrics(scenario, events, list(latencies.values()), completions,
                              issued, busy)
    ordered = sorted(latencies)
    return RunResult(metrics, [scores[q] for q in ordered],
                     [latencies[q] for q in ordered], spans,
                     dram_hits=hits, dram_misses=misses)


@dataclass
class ComparisonRow:
    mode: str
    throughput_qps: float
    throughput_x: float
    latency_p99_ns: int
    p99_reduction_pct: float
    latency_p50_ns: int
    p50_reduction_pct: float


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]

    def to_dict(self):
        return {"baseline": self.rows[0].mode,
                "rows": [vars(r) for r in self.rows]}


def compare(scenarios: list[Scenario], seed: int) -> tuple[ComparisonReport, list[RunResult]]:
    """Run all scenarios with one seed; ratios are against the first one."""
    if len(scenarios) < 2:
        raise ValueError("compare needs at least two scenarios")
    ref = scenarios[0]
    for s in scenarios[1:]:
        if s.model.spec != ref.model.spec:
            raise ValueError("scenarios must share one model")
        if s.workload != ref.workload or s.query_count != ref.query_count:
            raise ValueError("scenarios must share one workload")
    results = [run(s, seed) for s in scenarios]
    base = results[0].metrics
    rows = []
    for s, r in zip(scenarios, results):
        m = r.metrics
        thr_x = m.throughput_qps / base.throughput_qps if base.throughput_qps > 0 else 0.0
        p99_red = (100.0 * (1.0 - m.latency_p99_ns / base.latency_p99_ns)
                   if base.latency_p99_ns > 0 else 0.0)
        p50_red = (100.0 * (1.0 - m.latency_p50_ns / base.latency_p50_ns)
                   if base.latency_p50_ns > 0 else 0.0)
        rows.append(ComparisonRow(s.mode, m.throughput_qps, thr_x, m.latency_p99_ns,
                                  p99_red, m.latency_p50_ns, p50_red))
    return ComparisonReport(rows), results
