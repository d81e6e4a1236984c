"""Multi-link devices: shared queues, link selection, NSTR gating and receive-side reordering."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .edca import Ranges, ranges_count

AP = "ap"
STA = "sta"
STR = "STR"
NSTR = "NSTR"


@dataclass(eq=False)
class Mld:
    """A device with one MAC address and one affiliated radio per link.

    A legacy single-link device is the degenerate case with one link; the
    network layer drives both through the same code.
    """

    address: str
    role: str = STA
    mode: str = STR
    links: list = field(default_factory=list)
    # destination address -> FlowQueue; shared by every link of the device
    flows: dict = field(default_factory=dict)
    exchange_links: set = field(default_factory=set)

    def __post_init__(self):
        if self.role not in (AP, STA):
            raise ValueError(f"role must be {AP!r} or {STA!r}")
        if self.mode not in (STR, NSTR):
            raise ValueError(f"mode must be {STR!r} or {NSTR!r}")
        if self.mode == NSTR and self.role == AP:
            raise ValueError("NSTR mode is only defined for non-AP MLDs")

    @property
    def is_nstr(self) -> bool:
        return self.mode == NSTR

    def busy_elsewhere(self, link_idx: int) -> bool:
        return any(k != link_idx for k in self.exchange_links)


def nstr_gate(mld: Mld, link_idx: int, receiving_links: Iterable[int] | None = None) -> bool:
    """True if ``link_idx`` may transmit now.

    An NSTR device must not transmit on one link while any other link is
    receiving (or holding an exchange, which includes its receptions).
    """
    if not mld.is_nstr:
        return True
    busy = set(mld.exchange_links)
    if receiving_links is not None:
        busy |= set(receiving_links)
    return not any(k != link_idx for k in busy)


def select_link(ready: Sequence[tuple[int, int]]) -> list[int]:
    """First-winner order of ``(link_idx, access_time)`` pairs.

    The earliest winner pulls from the shared queue first. Links tied on time
    pull in link-index order and, under STR, all of them transmit in parallel.
    """
    if not ready:
        raise ValueError("no link won access")
    return [k for k, _ in sorted(ready, key=lambda p: (p[1], p[0]))]


@dataclass(frozen=True)
class OfferedLoad:
    ap_bps: float
    sta_bps: float


def split_baseline_traffic(rate_v1: float, rate_v2: float) -> dict[str, OfferedLoad]:
    """Per-device offered load for the legacy-vs-MLO latency comparison.

    Two independent single-link APs each carry v1 (their stations v2 each);
    the AP MLD carries 2*v1 and each non-AP MLD 2*v2, so the totals match.
    """
    if rate_v1 < 0 or rate_v2 < 0:
        raise ValueError("rates must be non-negative")
    return {"11ax": OfferedLoad(rate_v1, rate_v2), "11be": OfferedLoad(2 * rate_v1, 2 * rate_v2)}


class ReorderBuffer:
    """Receive-side reordering for one (source, tid) flow.

    Held MPDUs are kept as sorted disjoint ranges. The caller owns the clock:
    ``receive`` returns the new hole deadline (if a timer should run) and
    ``expire`` is called when that deadline passes.
    """

    def __init__(self, hole_timeout_ns: int = 5_000_000):
        self.hole_timeout_ns = hole_timeout_ns
        self.expected = 0
        self.held: Ranges = []
        self.deadline: int | None = None
        self.duplicates = 0
        self.skipped = 0
        self.released = 0

    @property
    def holding(self) -> int:
        return ranges_count(self.held)

    def receive(self, ranges: Iterable[tuple[int, int]], now: int) -> Ranges:
        """Accept decoded MPDUs; return the ranges released to the SAP, in order."""
        for a, b in ranges:
            if b <= self.expected:
                self.duplicates += b - a
                continue
            if a < self.expected:
                self.duplicates += self.expected - a
                a = self.expected
            self._hold(a, b)
        out = self._release_prefix()
        if self.held and self.deadline is None:
            self.deadline = now + self.hole_timeout_ns
        elif not self.held:
            self.deadline = None
        return out

    def expire(self, now: int) -> Ranges:
        """Hole timer fired: skip to the first held MPDU and release what follows."""
        self.deadline = None
        if not self.held:
            return []
        first = self.held[0][0]
        self.skipped += first - self.expected
        self.expected = first
        out = self._release_prefix()
        if self.held:
            self.deadline = now + self.hole_timeout_ns
        return out

    def _hold(self, a: int, b: int) -> None:
        held = self.held
        i = bisect.bisect_left(held, (a, a))
        if i > 0 and held[i - 1][1] >= a:
            i -= 1
        j = i
        new_a, new_b = a, b
        overlap = 0
        while j < len(held) and held[j][0] <= b:
            ha, hb = held[j]
            overlap += max(0, min(hb, b) - max(ha, a))
            new_a, new_b = min(new_a, ha), max(new_b, hb)
            j += 1
        self.duplicates += overlap
        held[i:j] = [(new_a, new_b)]

    def _release_prefix(self) -> Ranges:
        out: Ranges = []
        while self.held and self.held[0][0] == self.expected:
            a, b = self.held.pop(0)
            out.append((a, b))
            self.expected = b
            self.released += b - a
        return out


def reorder_deliver(buffer: ReorderBuffer, seq: int, now: int = 0) -> list[int]:
    """Single-MPDU convenience wrapper around :meth:`ReorderBuffer.receive`."""
    return [s for a, b in buffer.receive([(seq, seq + 1)], now) for s in range(a, b)]
