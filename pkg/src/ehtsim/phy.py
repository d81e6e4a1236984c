"""PHY abstraction: MCS table, RU tone plan, nominal rates, PPDU airtime, propagation, reception."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

T_DFT_NS = 12_800
GUARD_INTERVALS_NS = (800, 1600, 3200)
SUBCARRIER_SPACING_HZ = 78_125
SERVICE_BITS = 16
MPDU_DELIMITER_BYTES = 4


@dataclass(frozen=True)
class McsEntry:
    index: int
    bits_per_symbol: int
    coding_rate: Fraction
    min_sinr_db: float

    @property
    def modulation(self) -> str:
        return {1: "BPSK", 2: "QPSK"}.get(self.bits_per_symbol, f"{2 ** self.bits_per_symbol}-QAM")

    @property
    def efficiency(self) -> Fraction:
        return self.bits_per_symbol * self.coding_rate


_MCS_SHAPE = [
    (1, Fraction(1, 2)), (2, Fraction(1, 2)), (2, Fraction(3, 4)), (4, Fraction(1, 2)),
    (4, Fraction(3, 4)), (6, Fraction(2, 3)), (6, Fraction(3, 4)), (6, Fraction(5, 6)),
    (8, Fraction(3, 4)), (8, Fraction(5, 6)), (10, Fraction(3, 4)), (10, Fraction(5, 6)),
    (12, Fraction(3, 4)), (12, Fraction(5, 6)),
]

# Hard decode thresholds (dB); overridable per scenario.
DEFAULT_MIN_SINR_DB = (5.0, 8.0, 11.0, 14.0, 17.0, 20.0, 22.0, 24.0, 27.0, 29.0, 32.0, 35.0, 38.0, 40.0)


def mcs_table(min_sinr_db: Sequence[float] = DEFAULT_MIN_SINR_DB) -> tuple[McsEntry, ...]:
    if len(min_sinr_db) != len(_MCS_SHAPE):
        raise ValueError(f"need {len(_MCS_SHAPE)} thresholds, got {len(min_sinr_db)}")
    if any(b <= a for a, b in zip(min_sinr_db, min_sinr_db[1:])):
        raise ValueError("SINR thresholds must strictly increase with MCS index")
    return tuple(McsEntry(i, bps, rate, float(thr))
                 for i, ((bps, rate), thr) in enumerate(zip(_MCS_SHAPE, min_sinr_db)))


MCS_TABLE = mcs_table()


def mcs(index: int, table: Sequence[McsEntry] = MCS_TABLE) -> McsEntry:
    if not 0 <= index < len(table):
        raise ValueError(f"MCS index {index} outside 0..{len(table) - 1}")
    return table[index]


# RU size in tones -> data subcarriers. 2x996 and 4x996 are keyed by their tone totals.
RU_2X996 = 2 * 996
RU_4X996 = 4 * 996
RU_DATA_SUBCARRIERS: Mapping[int, int] = {
    26: 24, 52: 48, 106: 102, 242: 234, 484: 468, 996: 980, RU_2X996: 1960, RU_4X996: 3920,
}

# Tones spanned by a whole channel of each width.
CHANNEL_TONES: Mapping[int, int] = {20: 242, 40: 484, 80: 996, 160: RU_2X996, 320: RU_4X996}


def data_subcarriers(ru_size: int) -> int:
    try:
        return RU_DATA_SUBCARRIERS[ru_size]
    except KeyError:
        raise ValueError(f"unknown RU size {ru_size}") from None


@dataclass(frozen=True)
class RuAllocation:
    """One or more RUs assigned to a single station (more than one is an MRU)."""

    rus: tuple[int, ...]

    def __post_init__(self):
        if not self.rus:
            raise ValueError("empty RU allocation")
        for ru in self.rus:
            data_subcarriers(ru)

    @classmethod
    def of(cls, *rus: int) -> "RuAllocation":
        return cls(tuple(rus))

    @classmethod
    def full_band(cls, width_mhz: int) -> "RuAllocation":
        return cls((CHANNEL_TONES[width_mhz],))

    @property
    def data_subcarriers(self) -> int:
        return sum(RU_DATA_SUBCARRIERS[ru] for ru in self.rus)

    @property
    def tones(self) -> int:
        return sum(self.rus)

    @property
    def bandwidth_hz(self) -> float:
        return self.tones * SUBCARRIER_SPACING_HZ


BANDS_GHZ = (2.4, 5.0, 6.0)
WIDTHS_MHZ = (20, 40, 80, 160, 320)


@dataclass(frozen=True)
class ChannelSpec:
    band: float
    center_freq_mhz: float
    width_mhz: int

    def __post_init__(self):
        if self.band not in BANDS_GHZ:
            raise ValueError(f"band {self.band} GHz not in {BANDS_GHZ}")
        if self.width_mhz not in WIDTHS_MHZ:
            raise ValueError(f"width {self.width_mhz} MHz not in {WIDTHS_MHZ}")
        if self.width_mhz == 320 and self.band != 6.0:
            raise ValueError("320 MHz channels exist only in the 6 GHz band")

    @property
    def freq_ghz(self) -> float:
        return self.center_freq_mhz / 1000.0

    @property
    def tones(self) -> int:
        return CHANNEL_TONES[self.width_mhz]


def symbol_ns(gi_ns: int = 800) -> int:
    if gi_ns not in GUARD_INTERVALS_NS:
        raise ValueError(f"guard interval {gi_ns} ns not in {GUARD_INTERVALS_NS}")
    return T_DFT_NS + gi_ns


def bits_per_symbol(entry: McsEntry, alloc: RuAllocation, nss: int) -> Fraction:
    """Exact data bits carried per OFDM symbol."""
    if nss < 1:
        raise ValueError("nss must be >= 1")
    return alloc.data_subcarriers * entry.bits_per_symbol * entry.coding_rate * nss


def phy_rate(entry: McsEntry, alloc: RuAllocation, nss: int, gi_ns: int = 800) -> float:
    """Nominal data rate in bit/s: N_SD * N_BPSCS * R * N_SS / (T_DFT + T_GI)."""
    return float(bits_per_symbol(entry, alloc, nss) * Fraction(10 ** 9, symbol_ns(gi_ns)))


def ppdu_duration(payload_bits: float, rate: float, preamble_ns: int, gi_ns: int = 800) -> int:
    """Preamble plus payload rounded up to whole OFDM symbols, in ns."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if payload_bits <= 0:
        return preamble_ns
    sym = symbol_ns(gi_ns)
    per_symbol = rate * sym / 1e9
    n_sym = math.ceil(payload_bits / per_symbol - 1e-9)
    return preamble_ns + n_sym * sym


def ampdu_bits(n_mpdus: int, mpdu_bytes: int) -> int:
    """PSDU bits for ``n_mpdus`` delimited MPDUs plus the SERVICE field."""
    if n_mpdus <= 0:
        return 0
    padded = -(-(mpdu_bytes + MPDU_DELIMITER_BYTES) // 4) * 4
    return SERVICE_BITS + 8 * padded * n_mpdus


def max_mpdus_in(duration_ns: int, rate: float, preamble_ns: int, mpdu_bytes: int,
                 gi_ns: int = 800) -> int:
    """Largest MPDU count whose PPDU fits in ``duration_ns``."""
    sym = symbol_ns(gi_ns)
    n_sym = (duration_ns - preamble_ns) // sym
    if n_sym <= 0:
        return 0
    capacity = math.floor(n_sym * rate * sym / 1e9 + 1e-9)
    padded = -(-(mpdu_bytes + MPDU_DELIMITER_BYTES) // 4) * 4
    return max(0, (capacity - SERVICE_BITS) // (8 * padded))


LEGACY_SYMBOL_NS = 4_000


def control_frame_duration(nbytes: int, rate_mbps: float = 24.0, preamble_ns: int = 20_000) -> int:
    """Non-HT control frame airtime (SERVICE + body + tail, whole 4 us symbols)."""
    bits_per_symbol_legacy = rate_mbps * 4
    n_sym = math.ceil((16 + 8 * nbytes + 6) / bits_per_symbol_legacy - 1e-9)
    return preamble_ns + n_sym * LEGACY_SYMBOL_NS


def path_loss_db(tx_pos: Sequence[float], rx_pos: Sequence[float], freq_ghz: float,
                 walls: int = 0, floors: int = 0, breakpoint_m: float = 5.0) -> float:
    """Indoor residential loss with a 5 m breakpoint, per-floor and per-wall penetration."""
    if freq_ghz <= 0:
        raise ValueError("frequency must be positive")
    coords = list(tx_pos) + list(rx_pos)
    if not all(math.isfinite(c) for c in coords):
        raise ValueError("positions must be finite")
    d = max(1.0, math.dist(tx_pos, rx_pos))
    loss = 40.05 + 20 * math.log10(freq_ghz / 2.4) + 20 * math.log10(min(d, breakpoint_m))
    if d > breakpoint_m:
        loss += 35 * math.log10(d / breakpoint_m)
    if floors > 0:
        loss += 18.3 * floors ** ((floors + 2) / (floors + 1) - 0.46)
    return loss + 5 * walls


def noise_dbm(bandwidth_hz: float, noise_figure_db: float = 7.0) -> float:
    return -174.0 + 10 * math.log10(bandwidth_hz) + noise_figure_db


def dbm_to_mw(dbm: float) -> float:
    return 10 ** (dbm / 10)


def mw_to_dbm(mw: float) -> float:
    return 10 * math.log10(mw) if mw > 0 else -math.inf


def sinr_db(rx_power_dbm: float, interference_mw_sum: float, noise_dbm_value: float) -> float:
    return rx_power_dbm - mw_to_dbm(interference_mw_sum + dbm_to_mw(noise_dbm_value))


class Reception(enum.Enum):
    DECODED = "decoded"
    LOST = "lost"


def receive_outcome(rx_power_dbm: float, interference_mw_sum: float, noise_dbm_value: float,
                    entry: McsEntry | float) -> Reception:
    """Hard-threshold reception: decoded iff SINR >= threshold."""
    threshold = entry.min_sinr_db if isinstance(entry, McsEntry) else float(entry)
    ok = sinr_db(rx_power_dbm, interference_mw_sum, noise_dbm_value) >= threshold - 1e-9
    return Reception.DECODED if ok else Reception.LOST


def channel_center_mhz(band: float, index: int, width_mhz: int) -> float:
    """Nominal centre frequency of the ``index``-th non-overlapping channel of a width."""
    base = {2.4: 2412.0, 5.0: 5180.0, 6.0: 5955.0}[band]
    return base + (index + 0.5) * width_mhz - 10.0


__all__ = [
    "McsEntry", "MCS_TABLE", "mcs", "mcs_table", "RuAllocation", "ChannelSpec", "data_subcarriers",
    "phy_rate", "ppdu_duration", "path_loss_db", "receive_outcome", "Reception", "noise_dbm",
    "control_frame_duration", "ampdu_bits", "max_mpdus_in", "bits_per_symbol", "symbol_ns",
]
