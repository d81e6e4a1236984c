"""Round-robin RU scheduling and multi-user exchange framing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .phy import CHANNEL_TONES, RuAllocation

DL = "DL"
UL = "UL"

# Fixed RU size per channel width used by the round-robin scheduler.
RU_FOR_WIDTH = {20: 242, 40: 242, 80: 242, 160: 484, 320: 996}


@dataclass(frozen=True)
class RuGrant:
    sta: str
    alloc: RuAllocation
    direction: str
    tones: tuple[int, int]  # half-open tone interval inside the channel

    def overlaps(self, other: "RuGrant") -> bool:
        return self.tones[0] < other.tones[1] and other.tones[0] < self.tones[1]


def ru_count(width_mhz: int, ru_size: int | None = None) -> int:
    ru = ru_size or RU_FOR_WIDTH[width_mhz]
    return CHANNEL_TONES[width_mhz] // ru


class RoundRobinScheduler:
    """Rotating pointer over a fixed association order; persists across exchanges."""

    def __init__(self, stations: Sequence[str], width_mhz: int, ru_size: int | None = None,
                 direction: str = DL):
        if not stations:
            raise ValueError("scheduler needs at least one station")
        self.stations = list(stations)
        self.width_mhz = width_mhz
        self.ru_size = ru_size or RU_FOR_WIDTH[width_mhz]
        self.n_ru = ru_count(width_mhz, self.ru_size)
        self.direction = direction
        self.pointer = 0

    def schedule(self, backlogged: Sequence[str] | set[str]) -> list[RuGrant]:
        eligible = set(backlogged)
        if not eligible:
            return []
        n = len(self.stations)
        picked: list[str] = []
        last = None
        for step in range(n):
            idx = (self.pointer + step) % n
            sta = self.stations[idx]
            if sta in eligible:
                picked.append(sta)
                last = idx
                if len(picked) == self.n_ru:
                    break
        if last is not None:
            self.pointer = (last + 1) % n
        alloc = RuAllocation.of(self.ru_size)
        return [RuGrant(sta, alloc, self.direction, (i * self.ru_size, (i + 1) * self.ru_size))
                for i, sta in enumerate(picked)]


def rr_schedule(scheduler: RoundRobinScheduler, backlogged: Sequence[str]) -> list[RuGrant]:
    return scheduler.schedule(backlogged)


def grants_disjoint(grants: Sequence[RuGrant], width_mhz: int) -> bool:
    total = CHANNEL_TONES[width_mhz]
    for g in grants:
        if not 0 <= g.tones[0] < g.tones[1] <= total:
            return False
    return not any(a.overlaps(b) for i, a in enumerate(grants) for b in grants[i + 1:])


def mu_rts_bytes(n_users: int) -> int:
    return 28 + 6 * n_users


def trigger_bytes(n_users: int) -> int:
    return 28 + 6 * n_users


def multi_sta_ba_bytes(n_users: int) -> int:
    return 22 + 12 * n_users
