"""Throughput at the MAC SAP, sender-side delay statistics, gains and run records."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .engine import NS_PER_MS, NS_PER_S

NO_DATA = float("nan")


@dataclass(frozen=True)
class DelaySample:
    mpdu: int
    enqueue_time: int
    completion_time: int

    def __post_init__(self):
        if self.completion_time <= self.enqueue_time:
            raise ValueError("delay must be positive")

    @property
    def delay(self) -> int:
        return self.completion_time - self.enqueue_time


@dataclass
class ThroughputCounter:
    """Payload bits released to the receiving SAP inside ``[warmup_ns, end_ns]``."""

    warmup_ns: int = 0
    end_ns: int | None = None
    bits: dict = field(default_factory=dict)  # (flow, direction) -> bits
    seen: set = field(default_factory=set)

    def window_s(self) -> float:
        if self.end_ns is None:
            raise ValueError("measurement window has no end")
        return (self.end_ns - self.warmup_ns) / NS_PER_S

    def bps(self, direction: str | None = None) -> float:
        total = sum(v for (_, d), v in self.bits.items() if direction is None or d == direction)
        return total / self.window_s()


def record_delivery(counter: ThroughputCounter, mpdu, now: int, *, flow: str = "", direction: str = "DL",
                    payload_bytes: int | None = None) -> int:
    """Count one MPDU released to the SAP; returns the bits credited (0 outside the window)."""
    key = (flow, getattr(mpdu, "id", mpdu))
    if key in counter.seen:
        raise ValueError(f"MPDU {key} delivered twice")
    counter.seen.add(key)
    if now < counter.warmup_ns or (counter.end_ns is not None and now > counter.end_ns):
        return 0
    size = payload_bytes if payload_bytes is not None else getattr(mpdu, "size_bytes", 1500)
    bits = 8 * size
    counter.bits[(flow, direction)] = counter.bits.get((flow, direction), 0) + bits
    return bits


@dataclass(frozen=True)
class DelayStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    n: int

    @property
    def has_data(self) -> bool:
        return self.n > 0


def mean_delay(samples: Iterable[DelaySample] | np.ndarray | Sequence[float], *, unit_ns: bool = True) -> DelayStats:
    """Mean and order statistics in ms. Accepts samples or raw delays (ns by default)."""
    if isinstance(samples, np.ndarray):
        arr = samples.astype(np.float64)
    else:
        items = list(samples)
        arr = np.array([s.delay if isinstance(s, DelaySample) else s for s in items], dtype=np.float64)
    if arr.size == 0:
        return DelayStats(NO_DATA, NO_DATA, NO_DATA, NO_DATA, 0)
    scale = 1 / NS_PER_MS if unit_ns else 1.0
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return DelayStats(float(arr.mean() * scale), float(p50 * scale), float(p95 * scale), float(p99 * scale),
                      int(arr.size))


def compute_gain(value: float, baseline: float) -> float:
    if baseline <= 0:
        raise ValueError("baseline must be positive")
    return 100.0 * (value - baseline) / baseline


def delay_gain(be_delay: float, ax_delay: float) -> float:
    """Percent delay reduction of the MLO configuration against the legacy one."""
    if ax_delay <= 0:
        raise ValueError("baseline delay must be positive")
    return 100.0 * (ax_delay - be_delay) / ax_delay


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float, float]:
    """Sample mean with a Student-t interval; a single value gets a zero-width interval."""
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return NO_DATA, NO_DATA, NO_DATA
    m = float(arr.mean())
    if arr.size == 1:
        return m, m, m
    half = float(stats.t.ppf(0.5 + confidence / 2, arr.size - 1) * stats.sem(arr))
    return m, m - half, m + half


def load_delay_trend(loads: Sequence[float], delays: Sequence[float]) -> float:
    """Spearman correlation between offered load and mean delay."""
    rho = stats.spearmanr(loads, delays).statistic
    return float(rho)


@dataclass
class CaseResult:
    """One run: throughput per direction, delay statistics, drops, conservation."""

    campaign: str
    case_id: str
    standard: str
    direction: str
    mode: str
    seed: int
    load_mbps: float = 0.0
    status: str = "ok"
    throughput_gbps: float = NO_DATA
    dl_gbps: float = NO_DATA
    ul_gbps: float = NO_DATA
    mean_delay_ms: float = NO_DATA
    p50_delay_ms: float = NO_DATA
    p95_delay_ms: float = NO_DATA
    p99_delay_ms: float = NO_DATA
    delay_samples: int = 0
    generated: int = 0
    acked: int = 0
    dropped_retry: int = 0
    dropped_lifetime: int = 0
    dropped_overflow: int = 0
    drop_rate: float = 0.0
    conserved: bool = True
    txops: int = 0
    failed_txops: int = 0
    error: str = ""

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> dict:
        return asdict(self)

    @classmethod
    def from_run(cls, cfg, result) -> "CaseResult":
        d = mean_delay(result.delays_ns)
        led = result.ledger
        dropped = led["dropped_retry"] + led["dropped_lifetime"] + led["dropped_overflow"]
        thr = result.throughput_bps
        return cls(
            campaign=cfg.campaign, case_id=cfg.case_id, standard=cfg.standard, direction=cfg.direction,
            mode=cfg.mode, seed=cfg.seed, load_mbps=cfg.rate_mbps,
            throughput_gbps=sum(thr.values()) / 1e9, dl_gbps=thr.get("DL", 0.0) / 1e9,
            ul_gbps=thr.get("UL", 0.0) / 1e9, mean_delay_ms=d.mean_ms, p50_delay_ms=d.p50_ms,
            p95_delay_ms=d.p95_ms, p99_delay_ms=d.p99_ms, delay_samples=d.n, generated=led["generated"],
            acked=led["acked"], dropped_retry=led["dropped_retry"], dropped_lifetime=led["dropped_lifetime"],
            dropped_overflow=led["dropped_overflow"],
            drop_rate=dropped / led["generated"] if led["generated"] else 0.0,
            conserved=result.conserved(), txops=result.txops, failed_txops=result.failures,
        )
