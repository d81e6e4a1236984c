"""Scenario configuration, topology generators, channel plans and traffic sources."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .engine import NS_PER_S, RngStream
from .phy import DEFAULT_MIN_SINR_DB, ChannelSpec, RuAllocation, channel_center_mhz, mcs_table, noise_dbm, path_loss_db, phy_rate

PAYLOAD_BITS_DEFAULT = 1500 * 8


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LinkConfig(_Strict):
    band: float = 5.0
    width_mhz: int = 160
    channel_index: int = 0

    def spec(self) -> ChannelSpec:
        return ChannelSpec(self.band, channel_center_mhz(self.band, self.channel_index, self.width_mhz),
                           self.width_mhz)

    @model_validator(mode="after")
    def _valid(self):
        self.spec()
        return self


LINK_5G_160 = LinkConfig(band=5.0, width_mhz=160, channel_index=0)
LINK_6G_160 = LinkConfig(band=6.0, width_mhz=160, channel_index=4)
LINK_6G_320_A = LinkConfig(band=6.0, width_mhz=320, channel_index=0)
LINK_6G_320_B = LinkConfig(band=6.0, width_mhz=320, channel_index=1)


class ResidentialConfig(_Strict):
    floors: int = 2
    rows: int = 2
    cols: int = 10
    apartment_m: float = 10.0
    floor_height_m: float = 3.0
    reuse_fraction: float = Field(default=1 / 3, gt=0, le=1)
    analyzed_bss: int = 5
    sta_per_bss: int = 4


class ScenarioConfig(_Strict):
    """Everything one run needs. Defaults follow the throughput campaign."""

    campaign: Literal["throughput", "latency"] = "throughput"
    case_id: str = "baseline"
    seed: int = 0
    duration_s: float = Field(default=10.0, gt=0)
    warmup_s: float = Field(default=1.0, ge=0)

    # system under test
    standard: Literal["11ax", "11be"] = "11be"
    direction: Literal["DL", "UL"] = "DL"
    mode: Literal["SU", "MU"] = "SU"
    links: tuple[LinkConfig, ...] = (LINK_5G_160,)
    mld_mode: Literal["STR", "NSTR"] = "STR"

    # topology
    n_sta: int = Field(default=8, ge=1)
    area_m: float = Field(default=20.0, gt=0)
    residential: ResidentialConfig = ResidentialConfig()

    # traffic
    traffic: Literal["full_buffer", "poisson"] = "full_buffer"
    rate_mbps: float = Field(default=0.0, ge=0)
    ul_rate_fraction: float = Field(default=0.25, ge=0)
    mpdu_bytes: int = Field(default=1500, gt=0)

    # PHY
    mcs: int = Field(default=11, ge=0, le=13)
    nss: int = Field(default=8, ge=1, le=16)
    gi_ns: int = 800
    tx_power_ap_dbm: float = 20.0
    tx_power_sta_dbm: float = 15.0
    beamforming_gain_db: float = 24.0
    noise_figure_db: float = 7.0
    cca_dbm_per_20mhz: float = -82.0
    control_min_sinr_db: float = 10.0
    min_sinr_db: tuple[float, ...] = DEFAULT_MIN_SINR_DB
    negligible_interference_db: float = -20.0
    data_preamble_us: float = 48.0
    control_preamble_us: float = 20.0
    control_rate_mbps: float = 24.0

    # MAC
    cw_min: int = 7
    cw_max: int = 15
    slot_us: float = 9.0
    sifs_us: float = 16.0
    aifs_us: float = 34.0
    txop_ms: float = 4.096
    rts_cts: bool = True
    mu_rts: bool = False  # protect DL MU PPDUs with MU-RTS/CTS
    max_aggregation: int = Field(default=256, ge=1, le=1024)
    retry_limit: int = 10
    msdu_lifetime_ms: float | None = None
    queue_capacity: int | None = None
    hole_timeout_ms: float = 5.0
    ru_size: int | None = None
    scheduler: Literal["round_robin"] = "round_robin"
    snr_check: bool = True

    @field_validator("links")
    @classmethod
    def _links(cls, v):
        if not v:
            raise ValueError("at least one link is required")
        specs = [lk.spec() for lk in v]
        for i, a in enumerate(specs):
            for b in specs[i + 1:]:
                if a.band == b.band and abs(a.center_freq_mhz - b.center_freq_mhz) < (a.width_mhz + b.width_mhz) / 2:
                    raise ValueError("links of one device must use non-overlapping channels")
        return v

    @model_validator(mode="after")
    def _check(self):
        mcs_table(self.min_sinr_db)
        if self.cw_min > self.cw_max:
            raise ValueError("cw_min must not exceed cw_max")
        if self.warmup_s >= self.duration_s:
            raise ValueError("warmup must be shorter than the run")
        if self.campaign == "latency" and self.traffic != "poisson":
            raise ValueError("the latency campaign uses poisson traffic")
        return self

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def load_config(path: str | Path) -> ScenarioConfig:
    return ScenarioConfig.model_validate_json(Path(path).read_text())


def config_from_dict(data: dict) -> ScenarioConfig:
    return ScenarioConfig.model_validate(data)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

@dataclass
class Node:
    name: str
    role: str  # "ap" | "sta"
    pos: tuple[float, float, float]
    tx_dbm: float
    links: tuple[int, ...]  # indices into the link list
    bss: int = 0
    ap: str | None = None
    apartment: tuple[int, int, int] | None = None  # (floor, row, col)


@dataclass
class Topology:
    nodes: list[Node]
    links: tuple[LinkConfig, ...]
    bss_channels: dict[int, int] = field(default_factory=dict)
    apartments: list[tuple[int, int, int]] = field(default_factory=list)

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def separation(self, a: Node, b: Node) -> tuple[int, int]:
        """(walls, floors) between two nodes; zero for open-plan topologies."""
        if a.apartment is None or b.apartment is None:
            return 0, 0
        fa, ra, ca = a.apartment
        fb, rb, cb = b.apartment
        return abs(ra - rb) + abs(ca - cb), abs(fa - fb)

    def path_loss(self, a: Node, b: Node, freq_ghz: float) -> float:
        walls, floors = self.separation(a, b)
        return path_loss_db(a.pos, b.pos, freq_ghz, walls, floors)


def gen_throughput_box(n_sta: int = 8, area_m: float = 20.0, *, rng: RngStream | None = None,
                       seed: int = 0, links: tuple[LinkConfig, ...] = (LINK_5G_160,),
                       ap_dbm: float = 20.0, sta_dbm: float = 15.0) -> Topology:
    """One AP at the centre of a square, stations uniform in it."""
    if n_sta < 1:
        raise ValueError("n_sta must be >= 1")
    rng = rng or RngStream(seed, "placement")
    link_idx = tuple(range(len(links)))
    c = area_m / 2
    nodes = [Node("ap0", "ap", (c, c, 1.5), ap_dbm, link_idx)]
    xy = rng.np.uniform(0.0, area_m, size=(n_sta, 2))
    for i, (x, y) in enumerate(xy):
        nodes.append(Node(f"sta{i}", "sta", (float(x), float(y), 1.5), sta_dbm, link_idx, 0, "ap0"))
    return Topology(nodes, links)


def link_snr_db(topo: Topology, tx: Node, rx: Node, link: LinkConfig, gain_db: float = 0.0,
                noise_figure_db: float = 7.0) -> float:
    spec = link.spec()
    loss = topo.path_loss(tx, rx, spec.freq_ghz)
    bw = RuAllocation.full_band(spec.width_mhz).bandwidth_hz
    return tx.tx_dbm + gain_db - loss - noise_dbm(bw, noise_figure_db)


def check_box_snr(topo: Topology, cfg: ScenarioConfig) -> float:
    """Assert every station reaches the configured MCS at the AP on every link; returns the worst SNR."""
    threshold = mcs_table(cfg.min_sinr_db)[cfg.mcs].min_sinr_db
    ap = topo.nodes[0]
    worst = math.inf
    for sta in topo.nodes[1:]:
        for link in topo.links:
            for a, b in ((sta, ap), (ap, sta)):
                snr = link_snr_db(topo, a, b, link, cfg.beamforming_gain_db, cfg.noise_figure_db)
                worst = min(worst, snr)
    if worst < threshold:
        raise ValueError(f"worst link SNR {worst:.1f} dB below MCS{cfg.mcs} threshold {threshold} dB")
    return worst


# -- residential ------------------------------------------------------------

def apartment_grid(res: ResidentialConfig) -> list[tuple[int, int, int]]:
    return [(f, r, c) for f in range(res.floors) for r in range(res.rows) for c in range(res.cols)]


def apartment_center(apt: tuple[int, int, int], res: ResidentialConfig) -> tuple[float, float, float]:
    f, r, c = apt
    s = res.apartment_m
    return (c * s + s / 2, r * s + s / 2, f * res.floor_height_m + res.floor_height_m / 2)


def assign_channels(apartments: list[tuple[int, int, int]], reuse_fraction: float,
                    rng: RngStream) -> dict[tuple[int, int, int], int]:
    """Frequency-reuse pattern: ``round(1/reuse_fraction)`` channels, neighbours differ where possible."""
    if not 0 < reuse_fraction <= 1:
        raise ValueError("reuse_fraction must be in (0, 1]")
    n_ch = max(1, round(1 / reuse_fraction))
    offset = rng.uniform_int(0, n_ch - 1)
    return {apt: (apt[2] + 2 * apt[1] + apt[0] + offset) % n_ch for apt in apartments}


def _apt_distance(a, b, res: ResidentialConfig) -> float:
    return math.dist(apartment_center(a, res), apartment_center(b, res))


def select_spread(candidates: list[tuple[int, int, int]], k: int, rng: RngStream,
                  res: ResidentialConfig) -> list[tuple[int, int, int]]:
    """Greedy farthest-point subset of size ``k`` from a seeded starting apartment."""
    if k > len(candidates):
        raise ValueError(f"need {k} co-channel apartments, only {len(candidates)} available")
    chosen = [candidates[rng.uniform_int(0, len(candidates) - 1)]]
    while len(chosen) < k:
        best = max((c for c in candidates if c not in chosen),
                   key=lambda c: (min(_apt_distance(c, s, res) for s in chosen), c))
        chosen.append(best)
    return sorted(chosen)


def gen_residential(res: ResidentialConfig | None = None, *, standard: str = "11be", seed: int = 0,
                    links: tuple[LinkConfig, ...] = (LINK_5G_160, LINK_6G_160),
                    ap_dbm: float = 20.0, sta_dbm: float = 15.0) -> Topology:
    """Two-floor apartment block; only the analyzed co-channel BSSs are instantiated.

    ``11be``: one AP MLD per apartment on every link with ``sta_per_bss`` non-AP MLDs.
    ``11ax``: one single-link AP per link, each with its own ``sta_per_bss``
    stations co-located with the 11be station positions so placement noise is paired.
    """
    res = res or ResidentialConfig()
    apartments = apartment_grid(res)
    chan_rng = RngStream(seed, "channels")
    channels = assign_channels(apartments, res.reuse_fraction, chan_rng)
    target = chan_rng.uniform_int(0, max(channels.values()))
    same = [a for a in apartments if channels[a] == target]
    analyzed = select_spread(same, res.analyzed_bss, chan_rng, res)
    place = RngStream(seed, "placement")
    nodes: list[Node] = []
    all_links = tuple(range(len(links)))
    s = res.apartment_m
    for b, apt in enumerate(analyzed):
        f, r, c = apt
        center = apartment_center(apt, res)
        ap_pos = (center[0], center[1], f * res.floor_height_m + 1.5)
        lo = np.array([c * s, r * s, f * res.floor_height_m])
        pts = lo + place.np.uniform(0.0, 1.0, size=(res.sta_per_bss, 3)) * np.array([s, s, res.floor_height_m])
        if standard == "11be":
            ap = f"ap{b}"
            nodes.append(Node(ap, "ap", ap_pos, ap_dbm, all_links, b, None, apt))
            for i, p in enumerate(pts):
                nodes.append(Node(f"sta{b}.{i}", "sta", tuple(map(float, p)), sta_dbm, all_links, b, ap, apt))
        else:
            for k in all_links:
                # one legacy AP per link; with a single link the names match the MLD layout
                sfx = f"l{k}" if len(links) > 1 else ""
                ap = f"ap{b}{sfx}"
                nodes.append(Node(ap, "ap", ap_pos, ap_dbm, (k,), b, None, apt))
                for i, p in enumerate(pts):
                    nodes.append(Node(f"sta{b}.{i}{sfx}", "sta", tuple(map(float, p)), sta_dbm, (k,), b, ap, apt))
    return Topology(nodes, links, {b: target for b in range(len(analyzed))}, analyzed)


def build_topology(cfg: ScenarioConfig) -> Topology:
    if cfg.campaign == "throughput":
        topo = gen_throughput_box(cfg.n_sta, cfg.area_m, seed=cfg.seed, links=cfg.links,
                                  ap_dbm=cfg.tx_power_ap_dbm, sta_dbm=cfg.tx_power_sta_dbm)
        if cfg.snr_check:
            check_box_snr(topo, cfg)
        return topo
    return gen_residential(cfg.residential, standard=cfg.standard, seed=cfg.seed, links=cfg.links,
                           ap_dbm=cfg.tx_power_ap_dbm, sta_dbm=cfg.tx_power_sta_dbm)


# ---------------------------------------------------------------------------
# Traffic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrafficSource:
    kind: str  # "full_buffer" | "poisson"
    rate_bps: float = 0.0
    packet_bytes: int = 1500
    direction: str = "DL"

    def __post_init__(self):
        if self.kind not in ("full_buffer", "poisson", "constant_rate"):
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        if self.rate_bps < 0:
            raise ValueError("rate must be non-negative")


def generate_arrivals(source: TrafficSource, duration_ns: int, rng: RngStream) -> np.ndarray | None:
    """Enqueue instants (ns, sorted) of a Poisson packet stream; ``None`` for full buffer."""
    if duration_ns <= 0:
        raise ValueError("duration must be positive")
    if source.kind == "full_buffer":
        return None
    pps = source.rate_bps / (8 * source.packet_bytes)
    if pps <= 0:
        return np.empty(0, dtype=np.int64)
    n = int(rng.np.poisson(pps * duration_ns / NS_PER_S))
    times = np.sort(rng.np.uniform(0.0, float(duration_ns), size=n))
    return np.floor(times).astype(np.int64)


@dataclass(frozen=True)
class FlowSpec:
    src: str
    dst: str
    source: TrafficSource


def traffic_plan(cfg: ScenarioConfig, topo: Topology) -> list[FlowSpec]:
    """Flows of one run. Latency loads follow the legacy/MLO split of aggregate rate."""
    aps = [n for n in topo.nodes if n.role == "ap"]
    flows: list[FlowSpec] = []
    if cfg.campaign == "throughput":
        src = TrafficSource("full_buffer", 0.0, cfg.mpdu_bytes, cfg.direction)
        for n in topo.nodes:
            if n.role != "sta":
                continue
            if cfg.direction == "DL":
                flows.append(FlowSpec(n.ap, n.name, src))
            else:
                flows.append(FlowSpec(n.name, n.ap, src))
        return flows
    scale = 2.0 if cfg.standard == "11be" else 1.0
    v1 = cfg.rate_mbps * 1e6
    for ap in aps:
        stas = [n for n in topo.nodes if n.ap == ap.name]
        if cfg.direction == "DL":
            per = scale * v1 / len(stas)
            for s in stas:
                flows.append(FlowSpec(ap.name, s.name, TrafficSource("poisson", per, cfg.mpdu_bytes, "DL")))
        else:
            per = scale * v1 * cfg.ul_rate_fraction
            for s in stas:
                flows.append(FlowSpec(s.name, ap.name, TrafficSource("poisson", per, cfg.mpdu_bytes, "UL")))
    return flows


# ---------------------------------------------------------------------------
# Case definitions
# ---------------------------------------------------------------------------

THROUGHPUT_CASES: dict[str, dict] = {
    "baseline": dict(max_aggregation=256, links=(LINK_5G_160,), mcs=11),
    "1-1": dict(max_aggregation=1024, links=(LINK_6G_320_A,), mcs=13),
    "1-2": dict(max_aggregation=256, links=(LINK_6G_320_A, LINK_5G_160), mcs=13),
    "1-3": dict(max_aggregation=256, links=(LINK_6G_320_A, LINK_6G_320_B), mcs=13),
    "1-4": dict(max_aggregation=1024, links=(LINK_5G_160, LINK_6G_160), mcs=13),
    "1-5": dict(max_aggregation=1024, links=(LINK_6G_320_A, LINK_5G_160), mcs=11),
    "1-6": dict(max_aggregation=1024, links=(LINK_6G_320_A, LINK_6G_320_B), mcs=11),
    "2-1": dict(max_aggregation=1024, links=(LINK_6G_320_A, LINK_5G_160), mcs=13),
    "2-2": dict(max_aggregation=1024, links=(LINK_6G_320_A, LINK_6G_320_B), mcs=13),
    "3": dict(max_aggregation=1024, links=(LINK_6G_320_A, LINK_5G_160, LINK_6G_160), mcs=13),
}

# Each feature alone on top of the legacy baseline.
FEATURE_CASES: dict[str, dict] = {
    "f-4k": dict(max_aggregation=256, links=(LINK_5G_160,), mcs=13),
    "f-1024": dict(max_aggregation=1024, links=(LINK_5G_160,), mcs=11),
    "f-320": dict(max_aggregation=256, links=(LINK_6G_320_A,), mcs=11),
    "f-mlo": dict(max_aggregation=256, links=(LINK_5G_160, LINK_6G_160), mcs=11),
}
FEATURE_ORDER = ("f-4k", "f-1024", "f-320", "f-mlo")

LATENCY_DEFAULTS = dict(
    campaign="latency", traffic="poisson", mcs=11, nss=2, max_aggregation=256,
    msdu_lifetime_ms=20.0, links=(LINK_5G_160, LINK_6G_160), duration_s=30.0, warmup_s=1.0,
)


def case_config(case_id: str, **overrides) -> ScenarioConfig:
    if case_id in THROUGHPUT_CASES:
        base = dict(THROUGHPUT_CASES[case_id])
    elif case_id in FEATURE_CASES:
        base = dict(FEATURE_CASES[case_id])
    else:
        raise KeyError(f"unknown case {case_id!r}")
    base.update(campaign="throughput", case_id=case_id, traffic="full_buffer")
    base.update(overrides)
    return ScenarioConfig(**base)


def latency_config(standard: str, mode: str, direction: str, rate_mbps: float, **overrides) -> ScenarioConfig:
    base = dict(LATENCY_DEFAULTS)
    base.update(standard=standard, mode=mode, direction=direction, rate_mbps=rate_mbps,
                case_id=f"{standard}-{'OFDMA' if mode == 'MU' else 'SU'}-{direction}-{rate_mbps:g}")
    base.update(overrides)
    return ScenarioConfig(**base)


def nominal_rate(cfg: ScenarioConfig, link: LinkConfig) -> float:
    """Full-band single-user PHY rate of one link under ``cfg`` (bit/s)."""
    table = mcs_table(cfg.min_sinr_db)
    return phy_rate(table[cfg.mcs], RuAllocation.full_band(link.width_mhz), cfg.nss, cfg.gi_ns)


def dumps(cfg: ScenarioConfig) -> str:
    return json.dumps(json.loads(cfg.model_dump_json()), sort_keys=True)
