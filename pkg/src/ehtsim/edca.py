"""EDCA contention state, per-flow MPDU queues, A-MPDU construction and block-ACK bookkeeping.

MPDUs are not materialised as objects on the hot path. A flow's MPDUs are
identified by consecutive sequence numbers; sets of them travel as sorted lists
of half-open ``(start, stop)`` ranges.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .engine import RngStream
from .phy import ampdu_bits, max_mpdus_in, ppdu_duration

Ranges = list[tuple[int, int]]


def ranges_count(ranges: Iterable[tuple[int, int]]) -> int:
    return sum(b - a for a, b in ranges)


def ranges_to_array(ranges: Iterable[tuple[int, int]]) -> np.ndarray:
    parts = [np.arange(a, b, dtype=np.int64) for a, b in ranges]
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)


def array_to_ranges(seqs: Sequence[int] | np.ndarray) -> Ranges:
    arr = np.asarray(seqs, dtype=np.int64)
    if arr.size == 0:
        return []
    arr = np.unique(arr)
    breaks = np.flatnonzero(np.diff(arr) != 1) + 1
    starts = np.concatenate(([0], breaks))
    stops = np.concatenate((breaks, [arr.size]))
    return [(int(arr[s]), int(arr[e - 1]) + 1) for s, e in zip(starts, stops)]


class Phase(enum.Enum):
    IDLE = "idle"
    DEFERRING = "deferring"
    BACKOFF = "backoff"
    TX = "tx"
    WAITING_RESPONSE = "waiting_response"


@dataclass
class EdcaState:
    """Contention state of one (device, link) for the single best-effort category."""

    aifs_ns: int = 34_000
    slot_ns: int = 9_000
    cw_min: int = 7
    cw_max: int = 15
    cw: int = -1
    backoff_slots: int | None = None
    phase: Phase = Phase.IDLE
    countdown_from: int = 0

    def __post_init__(self):
        if self.cw < 0:
            self.cw = self.cw_min

    def draw(self, rng: RngStream) -> int:
        self.backoff_slots = rng.uniform_int(0, self.cw)
        return self.backoff_slots

    def access_time(self, idle_ref: int) -> int:
        """Instant the counter hits zero if the medium stays idle from ``idle_ref``."""
        self.countdown_from = idle_ref + self.aifs_ns
        return self.countdown_from + self.backoff_slots * self.slot_ns

    def on_medium_idle(self, idle_ref: int) -> int:
        self.phase = Phase.DEFERRING
        return self.access_time(idle_ref)

    def on_medium_busy(self, now: int) -> int:
        """Freeze the counter, charging only whole idle slots elapsed after AIFS."""
        if self.backoff_slots is not None and now > self.countdown_from:
            used = (now - self.countdown_from) // self.slot_ns
            self.backoff_slots = max(0, self.backoff_slots - used)
        self.phase = Phase.BACKOFF if self.backoff_slots else Phase.DEFERRING
        return self.backoff_slots or 0

    def on_tx_failure(self, rng: RngStream) -> int:
        self.cw = min((self.cw + 1) * 2 - 1, self.cw_max)
        return self.draw(rng)

    def on_tx_success(self) -> None:
        self.cw = self.cw_min
        self.backoff_slots = None


class ArrivalLog:
    """Append-only, time-sorted enqueue timestamps indexed by sequence number."""

    def __init__(self, times: np.ndarray | None = None):
        self._buf = np.asarray(times if times is not None else np.empty(0), dtype=np.int64).copy()
        self.size = int(self._buf.size)

    def append(self, t: int) -> int:
        if self.size and t < self._buf[self.size - 1]:
            raise ValueError("arrivals must be appended in time order")
        if self.size == self._buf.size:
            grown = np.empty(max(16, 2 * self._buf.size), dtype=np.int64)
            grown[: self.size] = self._buf[: self.size]
            self._buf = grown
        self._buf[self.size] = t
        self.size += 1
        return self.size - 1

    @property
    def times(self) -> np.ndarray:
        return self._buf[: self.size]

    def count_until(self, t: int) -> int:
        return int(np.searchsorted(self._buf[: self.size], t, side="right"))

    def __getitem__(self, idx):
        return self._buf[: self.size][idx]


@dataclass
class Mpdu:
    """Standalone view of one queued MPDU (the queue itself stores ranges)."""

    id: int
    size_bytes: int
    src: str
    dst: str
    tid: int
    enqueue_time: int
    retries: int
    deadline: int | None


class FlowQueue:
    """FIFO of MPDUs for one (source, destination, tid) flow.

    Retransmissions sit ahead of fresh traffic. A full-buffer flow manufactures
    fresh MPDUs on demand, so it is never empty. Both the retransmission and the
    fresh part are kept as sorted ranges; retry counts live in a per-sequence array.
    """

    def __init__(self, src: str, dst: str, *, tid: int = 0, mpdu_bytes: int = 1500,
                 full_buffer: bool = False, arrivals: np.ndarray | None = None,
                 lifetime_ns: int | None = None, capacity: int | None = None,
                 retry_limit: int = 10, track_delay: bool = True):
        self.src, self.dst, self.tid = src, dst, tid
        self.mpdu_bytes = mpdu_bytes
        self.full_buffer = full_buffer
        self.arrivals = ArrivalLog(arrivals)
        self.lifetime_ns = lifetime_ns
        self.capacity = capacity
        self.retry_limit = retry_limit
        self.retx: Ranges = []
        self.fresh: deque[tuple[int, int]] = deque()
        self.next_idx = 0
        self._retries = np.zeros(16, dtype=np.int16)
        self.track_delay = track_delay and not full_buffer
        self._completion = np.full(max(16, self.arrivals.size), -1, dtype=np.int64)
        self.generated = 0
        self.acked = 0
        self.dropped_retry = 0
        self.dropped_lifetime = 0
        self.dropped_overflow = 0
        self.in_flight = 0
        self._fresh_count = 0
        self._retx_count = 0
        self._next_time: int | None = None

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.src, self.dst, self.tid)

    # -- arrivals -----------------------------------------------------------
    def enqueue(self, now: int) -> int:
        """Pass one MPDU to the MAC at ``now``; returns its sequence number."""
        seq = self.arrivals.append(now)
        self._next_time = None
        self.materialize(now)
        return seq

    def materialize(self, now: int) -> int:
        """Admit every arrival up to ``now``; overflow drops the newest."""
        if self.full_buffer:
            return 0
        nt = self._next_time
        if nt is None:
            nt = self._next_time = self.next_arrival_time()
        if nt is None or nt > now:
            return 0
        hi = self.arrivals.count_until(now)
        n = hi - self.next_idx
        if n <= 0:
            return 0
        self.generated += n
        admit = n
        if self.capacity is not None:
            admit = max(0, min(n, self.capacity - self.queued))
            self.dropped_overflow += n - admit
        if admit:
            lo = self.next_idx
            if self.fresh and self.fresh[-1][1] == lo:
                a, _ = self.fresh.pop()
                self.fresh.append((a, lo + admit))
            else:
                self.fresh.append((lo, lo + admit))
            self._fresh_count += admit
        self.next_idx = hi
        self._next_time = None
        return admit

    def next_arrival_time(self) -> int | None:
        if self.full_buffer or self.next_idx >= self.arrivals.size:
            return None
        return int(self.arrivals[self.next_idx])

    # -- queue state --------------------------------------------------------
    @property
    def queued(self) -> int:
        return self._retx_count + self._fresh_count

    def backlogged(self) -> bool:
        return self.full_buffer or self.queued > 0

    def enqueue_time(self, seq: int) -> int | None:
        if self.full_buffer:
            return None
        return int(self.arrivals[seq])

    def retry_count(self, seq: int) -> int:
        return int(self._retries[seq]) if seq < self._retries.size else 0

    def expire_lifetimes(self, now: int) -> int:
        """Drop queued MPDUs whose deadline (enqueue + lifetime) is before ``now``."""
        if self.lifetime_ns is None or self.full_buffer or not self.queued:
            return 0
        cutoff = now - self.lifetime_ns
        times = self.arrivals.times
        first = self.retx[0][0] if self.retx else self.fresh[0][0]
        if times[first] >= cutoff:
            return 0
        # arrival times grow with the sequence number, so the stale MPDUs are a prefix
        stale = int(np.searchsorted(times, cutoff, side="left"))
        dropped = 0
        for part, is_retx in ((self.retx, True), (self.fresh, False)):
            while part:
                a, b = part[0]
                if a >= stale:
                    break
                cut = min(b, stale)
                dropped += cut - a
                if is_retx:
                    self._retx_count -= cut - a
                    if cut < b:
                        part[0] = (cut, b)
                    else:
                        del part[0]
                else:
                    self._fresh_count -= cut - a
                    part.popleft()
                    if cut < b:
                        part.appendleft((cut, b))
        self.dropped_lifetime += dropped
        return dropped

    def head(self, n: int) -> Ranges:
        """Peek at the first ``n`` queued MPDUs without removing them."""
        out: Ranges = []
        remaining = n
        for a, b in self.retx:
            if remaining <= 0:
                return out
            take = min(remaining, b - a)
            out.append((a, a + take))
            remaining -= take
        if self.full_buffer:
            if remaining > 0:
                _append_range(out, self.next_idx, self.next_idx + remaining)
            return out
        for a, b in self.fresh:
            if remaining <= 0:
                break
            take = min(remaining, b - a)
            _append_range(out, a, a + take)
            remaining -= take
        return out

    def pull(self, n: int) -> Ranges:
        """Commit up to ``n`` head-of-queue MPDUs to a transmission."""
        out: Ranges = []
        if n <= 0:
            return out
        remaining = n
        retx = self.retx
        while remaining > 0 and retx:
            a, b = retx[0]
            take = min(remaining, b - a)
            out.append((a, a + take))
            if take < b - a:
                retx[0] = (a + take, b)
            else:
                del retx[0]
            self._retx_count -= take
            remaining -= take
        if remaining > 0:
            if self.full_buffer:
                lo = self.next_idx
                self.next_idx += remaining
                self.generated += remaining
                _append_range(out, lo, lo + remaining)
                remaining = 0
            else:
                while remaining > 0 and self.fresh:
                    a, b = self.fresh.popleft()
                    take = min(remaining, b - a)
                    _append_range(out, a, a + take)
                    if take < b - a:
                        self.fresh.appendleft((a + take, b))
                    self._fresh_count -= take
                    remaining -= take
        self.in_flight += n - remaining
        return out

    # -- outcomes -----------------------------------------------------------
    def on_acked(self, ranges: Ranges, now: int) -> int:
        n = ranges_count(ranges)
        self.acked += n
        self.in_flight -= n
        if self.track_delay and ranges:
            hi = ranges[-1][1]
            if hi > self._completion.size:
                grown = np.full(max(hi, 2 * self._completion.size), -1, dtype=np.int64)
                grown[: self._completion.size] = self._completion
                self._completion = grown
            for a, b in ranges:
                self._completion[a:b] = now
        return n

    def on_failed(self, seqs: Iterable[int]) -> list[int]:
        """Count a failed attempt; requeue at the head or drop past the retry limit."""
        return self.on_failed_ranges(array_to_ranges(list(seqs)))

    def on_failed_ranges(self, ranges: Ranges) -> list[int]:
        """Range form of :meth:`on_failed`; returns the dropped sequence numbers."""
        if not ranges:
            return []
        hi = max(b for _, b in ranges)
        if hi > self._retries.size:
            grown = np.zeros(max(hi, 2 * self._retries.size), dtype=np.int16)
            grown[: self._retries.size] = self._retries
            self._retries = grown
        dropped: list[int] = []
        requeue: Ranges = []
        for a, b in ranges:
            self.in_flight -= b - a
            seg = self._retries[a:b]
            seg += 1
            over = seg > self.retry_limit
            if over.any():
                idx = np.arange(a, b, dtype=np.int64)
                dropped.extend(idx[over].tolist())
                requeue.extend(array_to_ranges(idx[~over]))
            else:
                requeue.append((a, b))
        self.dropped_retry += len(dropped)
        self._requeue(requeue)
        return dropped

    def on_returned(self, ranges: Ranges) -> None:
        """Give back MPDUs that were committed but never sent (no retry charged)."""
        self.in_flight -= ranges_count(ranges)
        self._requeue(list(ranges))

    def _requeue(self, ranges: Ranges) -> None:
        if not ranges:
            return
        self._retx_count += ranges_count(ranges)
        merged = sorted(self.retx + ranges) if self.retx else sorted(ranges)
        out: Ranges = []
        for a, b in merged:
            _append_range(out, a, b)
        self.retx = out

    # -- ledger -------------------------------------------------------------
    def ledger(self) -> dict[str, int]:
        return {
            "generated": self.generated, "acked": self.acked, "dropped_retry": self.dropped_retry,
            "dropped_lifetime": self.dropped_lifetime, "dropped_overflow": self.dropped_overflow,
            "in_flight": self.in_flight, "queued": self.queued,
        }

    def conserved(self) -> bool:
        led = self.ledger()
        return led["generated"] == sum(v for k, v in led.items() if k != "generated")

    def delays(self, since: int = 0) -> np.ndarray:
        """Enqueue-to-ack delays (ns) of acknowledged MPDUs enqueued at or after ``since``."""
        if not self.track_delay:
            return np.empty(0, dtype=np.int64)
        n = min(self.arrivals.size, self._completion.size)
        done = self._completion[:n]
        enq = self.arrivals.times[:n]
        mask = (done >= 0) & (enq >= since)
        return done[mask] - enq[mask]

    def mpdu(self, seq: int) -> Mpdu:
        enq = self.enqueue_time(seq)
        deadline = None if enq is None or self.lifetime_ns is None else enq + self.lifetime_ns
        return Mpdu(seq, self.mpdu_bytes, self.src, self.dst, self.tid, enq if enq is not None else -1,
                    self.retry_count(seq), deadline)


def _append_range(out: Ranges, a: int, b: int) -> None:
    if out and out[-1][1] == a:
        out[-1] = (out[-1][0], b)
    else:
        out.append((a, b))


@dataclass
class Ampdu:
    """MPDUs of one flow sharing a single PHY header."""

    flow: FlowQueue | None
    mpdus: Ranges = field(default_factory=list)
    airtime_ns: int = 0

    def __len__(self) -> int:
        return ranges_count(self.mpdus)

    @property
    def seqs(self) -> np.ndarray:
        return ranges_to_array(self.mpdus)


@dataclass
class BlockAckRecord:
    starting_seq: int
    seqs: np.ndarray
    bitmap: np.ndarray

    @property
    def acked(self) -> np.ndarray:
        return self.seqs[self.bitmap]

    @property
    def missing(self) -> np.ndarray:
        return self.seqs[~self.bitmap]

    def all_acked(self) -> bool:
        return bool(self.bitmap.all())


class AmpduTiming:
    """Cached airtime arithmetic for one (rate, MPDU size) pairing."""

    def __init__(self, rate: float, mpdu_bytes: int, preamble_ns: int, gi_ns: int = 800):
        self.rate = rate
        self.mpdu_bytes = mpdu_bytes
        self.preamble_ns = preamble_ns
        self.gi_ns = gi_ns
        self._dur: dict[int, int] = {}
        self._fit: dict[int, int] = {}

    def duration(self, n: int) -> int:
        d = self._dur.get(n)
        if d is None:
            d = self._dur[n] = ppdu_duration(ampdu_bits(n, self.mpdu_bytes), self.rate,
                                             self.preamble_ns, self.gi_ns)
        return d

    def max_fit(self, budget_ns: int) -> int:
        f = self._fit.get(budget_ns)
        if f is None:
            f = max_mpdus_in(budget_ns, self.rate, self.preamble_ns, self.mpdu_bytes, self.gi_ns)
            if len(self._fit) < 4096:
                self._fit[budget_ns] = f
        return f


def ampdu_size_for(timing: AmpduTiming, available: int | None, txop_remaining: int,
                   max_aggregation: int, response_ns: int) -> int:
    """MPDU count of the largest A-MPDU whose exchange fits the remaining TXOP."""
    cap = max_aggregation if available is None else min(available, max_aggregation)
    if cap <= 0:
        return 0
    if timing.duration(cap) + response_ns <= txop_remaining:
        return cap
    return min(cap, timing.max_fit(txop_remaining - response_ns))


def build_ampdu(queue: FlowQueue, rate: float | AmpduTiming, txop_remaining: int,
                max_aggregation: int, *, now: int | None = None, sifs_ns: int = 16_000,
                block_ack_ns: int = 32_000, preamble_ns: int = 48_000) -> Ampdu:
    """Longest head-of-queue prefix that respects the aggregation cap and the TXOP budget.

    The budget covers PPDU + SIFS + block ACK. Expired MPDUs are dropped first when
    ``now`` is given. An empty A-MPDU means not even one MPDU fits.
    """
    timing = rate if isinstance(rate, AmpduTiming) else AmpduTiming(rate, queue.mpdu_bytes, preamble_ns)
    if now is not None:
        queue.materialize(now)
        queue.expire_lifetimes(now)
    available = None if queue.full_buffer else queue.queued
    n = ampdu_size_for(timing, available, txop_remaining, max_aggregation, sifs_ns + block_ack_ns)
    if n <= 0:
        return Ampdu(queue)
    return Ampdu(queue, queue.pull(n), timing.duration(n))


def receive_ampdu(ampdu: Ampdu, decoded: Sequence[bool] | np.ndarray) -> BlockAckRecord:
    """Receiver-side bitmap for one A-MPDU given per-MPDU decode results."""
    seqs = ampdu.seqs
    bitmap = np.asarray(decoded, dtype=bool)
    if bitmap.size != seqs.size:
        raise ValueError("decode mask length must match A-MPDU length")
    return BlockAckRecord(int(seqs[0]) if seqs.size else 0, seqs, bitmap)


def apply_block_ack(queue: FlowQueue, ampdu: Ampdu, record: BlockAckRecord | None, now: int) -> tuple[int, int]:
    """Sender-side handling; a missing record means the whole A-MPDU timed out."""
    if record is None:
        failed = ampdu.seqs.tolist()
        queue.on_failed(failed)
        return 0, len(failed)
    acked = array_to_ranges(record.acked)
    queue.on_acked(acked, now)
    missing = record.missing.tolist()
    queue.on_failed(missing)
    return ranges_count(acked), len(missing)
