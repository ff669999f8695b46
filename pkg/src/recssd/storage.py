"""SSD geometry, timing, the flash translation layer, and page-read scheduling.

Timing model (all durations are integer nanoseconds):

* a page read is a sense phase (occupies its die) followed by a transfer
  phase (occupies the channel bus); the die stays busy until its page has
  been transferred, so there is one outstanding read per die;
* dies on a channel sense concurrently, transfers on a channel serialize;
* embedding reads outrank queued block I/O at both the die and the bus,
  non-preemptively; ties resolve by arrival then sequence number.
"""

import heapq
import math
from dataclasses import dataclass
from typing import NamedTuple

EV_PRIORITY = 0
BLOCK_PRIORITY = 1


@dataclass(frozen=True)
class SsdGeometry:
    channels: int
    dies_per_channel: int
    page_size: int
    lba_size: int = 512
    pages_per_block: int = 256

    def __post_init__(self):
        for name in ("channels", "dies_per_channel", "page_size", "lba_size", "pages_per_block"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.page_size % self.lba_size != 0:
            raise ValueError(
                f"page_size {self.page_size} not a multiple of lba_size {self.lba_size}"
            )

    @property
    def lbas_per_page(self) -> int:
        return self.page_size // self.lba_size

    @property
    def total_dies(self) -> int:
        return self.channels * self.dies_per_channel


@dataclass(frozen=True)
class TimingParams:
    page_read_us: float = 50.0
    channel_transfer_ns_per_byte: float = 0.4
    dram_hit_ns: float = 100.0
    host_interface_ns_per_byte: float = 0.25
    fc_clock_mhz: float = 200.0
    host_block_io_overhead_us: float = 10.0
    host_ns_per_mac: float = 0.1

    def __post_init__(self):
        for name in ("page_read_us", "channel_transfer_ns_per_byte", "dram_hit_ns",
                     "host_interface_ns_per_byte", "fc_clock_mhz",
                     "host_block_io_overhead_us", "host_ns_per_mac"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def sense_ns(self) -> int:
        return round(self.page_read_us * 1000.0)

    def xfer_ns(self, page_size: int) -> int:
        return round(page_size * self.channel_transfer_ns_per_byte)

    def host_iface_ns(self, nbytes: int) -> int:
        return round(nbytes * self.host_interface_ns_per_byte)

    @property
    def host_overhead_ns(self) -> int:
        return round(self.host_block_io_overhead_us * 1000.0)

    @property
    def dram_hit_ns_int(self) -> int:
        return round(self.dram_hit_ns)

    @property
    def clock_period_ns(self) -> float:
        return 1000.0 / self.fc_clock_mhz

    def cycles_to_ns(self, cycles: int) -> int:
        return round(cycles * self.clock_period_ns)

    def ns_to_cycles(self, ns: int) -> int:
        return math.ceil(ns / self.clock_period_ns)


class PhysLoc(NamedTuple):
    channel: int
    die: int
    page: int      # page index within the die
    offset: int    # byte offset within the page


@dataclass(frozen=True)
class Ftl:
    """Static round-robin FTL: physical page p of the provisioned range lands
    on channel p mod C, die (p div C) mod D. Read-only workload, no GC."""

    geometry: SsdGeometry
    total_pages: int

    def __post_init__(self):
        if self.total_pages < 1:
            raise ValueError("total_pages must be >= 1")

    @property
    def total_lbas(self) -> int:
        return self.total_pages * self.geometry.lbas_per_page

    def page_location(self, page_index: int) -> tuple[int, int, int]:
        g = self.geometry
        if not 0 <= page_index < self.total_pages:
            raise ValueError(f"page {page_index} outside provisioned range [0, {self.total_pages})")
        channel = page_index % g.channels
        die = (page_index // g.channels) % g.dies_per_channel
        die_page = page_index // (g.channels * g.dies_per_channel)
        return channel, die, die_page

    def translate(self, lba: int) -> PhysLoc:
        g = self.geometry
        if not 0 <= lba < self.total_lbas:
            raise ValueError(f"lba {lba} outside provisioned range [0, {self.total_lbas})")
        byte = lba * g.lba_size
        page_index = byte // g.page_size
        channel, die, die_page = self.page_location(page_index)
        return PhysLoc(channel, die, die_page, byte % g.page_size)


def page_read_time(geometry: SsdGeometry, timing: TimingParams) -> int:
    """Sense plus channel transfer for one page, in ns."""
    return timing.sense_ns + timing.xfer_ns(geometry.page_size)


@dataclass(frozen=True)
class PageReadRequest:
    ready_ns: int
    priority: int       # EV_PRIORITY or BLOCK_PRIORITY
    channel: int
    die: int
    seq: int
    tag: object = None


@dataclass(frozen=True)
class PageReadRecord:
    request: PageReadRequest
    sense_start_ns: int
    sense_end_ns: int
    xfer_start_ns: int
    xfer_end_ns: int


@dataclass
class PageSchedule:
    records: list[PageReadRecord]
    makespan_ns: int

    def per_die_records(self) -> dict[tuple[int, int], list[PageReadRecord]]:
        out: dict[tuple[int, int], list[PageReadRecord]] = {}
        for r in self.records:
            out.setdefault((r.request.channel, r.request.die), []).append(r)
        for recs in out.values():
            recs.sort(key=lambda r: r.sense_start_ns)
        return out

    def channel_busy_ns(self, channels: int) -> list[int]:
        """Union of this channel's die-busy intervals (sense start to transfer end)."""
        per_ch: dict[int, list[tuple[int, int]]] = {c: [] for c in range(channels)}
        for r in self.records:
            per_ch[r.request.channel].append((r.sense_start_ns, r.xfer_end_ns))
        busy = []
        for c in range(channels):
            iv = sorted(per_ch[c])
            total, cur_s, cur_e = 0, None, None
            for s, e in iv:
                if cur_s is None:
                    cur_s, cur_e = s, e
                elif s > cur_e:
                    total += cur_e - cur_s
                    cur_s, cur_e = s, e
                else:
                    cur_e = max(cur_e, e)
            if cur_s is not None:
                total += cur_e - cur_s
            busy.append(total)
        return busy


def schedule_page_reads(requests: list[PageReadRequest], geometry: SsdGeometry,
                        timing: TimingParams) -> PageSchedule:
    """Event-driven schedule of page reads over (channel, die) resources.

    Dequeue key is (priority, ready_ns, seq) at the die and
    (priority, sense_end_ns, seq) at the channel bus; both are work-conserving.
    """
    sense = timing.sense_ns
    xfer = timing.xfer_ns(geometry.page_size)

    die_pending: dict[tuple[int, int], list] = {}
    die_busy: dict[tuple[int, int], bool] = {}
    bus_wait: dict[int, list] = {c: [] for c in range(geometry.channels)}
    bus_busy: dict[int, bool] = {c: False for c in range(geometry.channels)}

    started: dict[int, int] = {}    # seq -> sense_start
    sensed: dict[int, int] = {}     # seq -> sense_end
    moved: dict[int, tuple[int, int]] = {}  # seq -> (xfer_start, xfer_end)
    by_seq = {r.seq: r for r in requests}
    if len(by_seq) != len(requests):
        raise ValueError("duplicate request sequence numbers")

    heap: list[tuple[int, int, str, object]] = []
    eseq = 0

    def push(t, kind, payload):
        nonlocal eseq
        heapq.heappush(heap, (t, eseq, kind, payload))
        eseq += 1

    for r in requests:
        if not (0 <= r.channel < geometry.channels and 0 <= r.die < geometry.dies_per_channel):
            raise ValueError(f"request {r.seq}: ({r.channel}, {r.die}) outside geometry")
        push(r.ready_ns, "arrive", r)

    while heap:
        now, _, kind, payload = heapq.heappop(heap)
        if kind == "arrive":
            r = payload
            key = (r.channel, r.die)
            heapq.heappush(die_pending.setdefault(key, []), (r.priority, r.ready_ns, r.seq))
            push(now, "die_check", key)
        elif kind == "die_check":
            key = payload
            pend = die_pending.get(key)
            if pend and not die_busy.get(key, False):
                _, _, seq = heapq.heappop(pend)
                die_busy[key] = True
                started[seq] = now
                push(now + sense, "sense_done", seq)
        elif kind == "sense_done":
            seq = payload
            sensed[seq] = now
            r = by_seq[seq]
            heapq.heappush(bus_wait[r.channel], (r.priority, now, seq))
            push(now, "bus_check", r.channel)
        elif kind == "bus_check":
            ch = payload
            if bus_wait[ch] and not bus_busy[ch]:
                _, _, seq = heapq.heappop(bus_wait[ch])
                bus_busy[ch] = True
                moved[seq] = (now, now + xfer)
                push(now + xfer, "xfer_done", seq)
        elif kind == "xfer_done":
            seq = payload
            r = by_seq[seq]
            key = (r.channel, r.die)
            bus_busy[r.channel] = False
            die_busy[key] = False
            push(now, "bus_check", r.channel)
            push(now, "die_check", key)

    records = []
    makespan = 0
    for r in requests:
        xs, xe = moved[r.seq]
        records.append(PageReadRecord(r, started[r.seq], sensed[r.seq], xs, xe))
        makespan = max(makespan, xe)
    return PageSchedule(records, makespan)


def pages_of_byte_range(ftl: Ftl, lba: int, nbytes: int) -> list[int]:
    g = ftl.geometry
    if nbytes < 1:
        raise ValueError("read length must be >= 1 byte")
    start = lba * g.lba_size
    end = start + nbytes
    if lba < 0 or end > ftl.total_lbas * g.lba_size:
        raise ValueError(f"byte range [{start}, {end}) outside provisioned capacity")
    return list(range(start // g.page_size, (end - 1) // g.page_size + 1))


def host_block_read(ftl: Ftl, lba: int, nbytes: int, timing: TimingParams) -> int:
    """Latency of one synchronous host-path read: flash page reads (parallel
    across channels/dies, serialized per die), host-interface transfer of the
    payload, plus the fixed software-stack overhead."""
    geometry = ftl.geometry
    reqs = []
    for seq, page in enumerate(pages_of_byte_range(ftl, lba, nbytes)):
        ch, die, _ = ftl.page_location(page)
        reqs.append(PageReadRequest(0, BLOCK_PRIORITY, ch, die, seq, tag=page))
    sched = schedule_page_reads(reqs, geometry, timing)
    return sched.makespan_ns + timing.host_iface_ns(nbytes) + timing.host_overhead_ns
